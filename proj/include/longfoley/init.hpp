#pragma once

#include <cmath>
#include <string>

#include "longfoley/autograd.hpp"
#include "longfoley/rng.hpp"

namespace lf {

// Gaussian weight [in x out] with standard deviation gain / sqrt(in).
inline Tensor init_weight(std::size_t in, std::size_t out, Philox& rng, double gain = 1.0) {
  Tensor w({in, out});
  const double sd = gain / std::sqrt(static_cast<double>(in));
  for (double& v : w.data()) v = sd * rng.normal();
  return w;
}

// Adds `prefix.w` [in x out] and a zero `prefix.b` [1 x out].
inline void add_linear(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out, Philox& rng,
                       double gain = 1.0) {
  store.add(prefix + ".w", init_weight(in, out, rng, gain));
  store.add(prefix + ".b", Tensor({1, out}));
}

inline Var apply_linear(const Var& x, ParameterStore& store, const std::string& prefix) {
  return linear(x, store.var(prefix + ".w"), store.var(prefix + ".b"));
}

}  // namespace lf
