#include "longfoley/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "longfoley/errors.hpp"

namespace lf {

namespace {

thread_local bool g_grad_enabled = true;

Tensor& grad_of(Node& n) {
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

// Builds the result node; the closure and parent links are kept only when a
// gradient can actually flow.
Var make_result(Tensor value, std::vector<NodePtr> parents, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p->requires_grad;
  }
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(fn);
  }
  return Var(std::move(node));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_row_vector(const Var& x, const Var& v, const char* op) {
  if (v.value().numel() != x.cols()) {
    throw ShapeError(std::string(op) + ": expected a vector of length " + std::to_string(x.cols()) + ", got " +
                     shape_str(v.shape()));
  }
}

void require_matrix(const Var& x, const char* op) {
  if (x.shape().size() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(x.shape()));
}

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x n] += a[m x k] * b[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

// ---------------------------------------------------------------------------
// ParameterStore

Parameter& ParameterStore::add(const std::string& name, Tensor init, bool trainable) {
  if (params_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
  Parameter p;
  p.grad = Tensor(init.shape(), 0.0);
  p.value = std::move(init);
  p.trainable = trainable;
  return params_.emplace(name, std::move(p)).first->second;
}

const Parameter& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

Parameter& ParameterStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

Var ParameterStore::var(const std::string& name) {
  Parameter& p = at(name);
  auto node = std::make_shared<Node>();
  node->value = p.value;
  node->requires_grad = p.trainable;
  node->sink = p.trainable ? &p.grad : nullptr;
  return Var(std::move(node));
}

void ParameterStore::zero_grad() {
  for (auto& [_, p] : params_) p.grad.fill(0.0);
}

void ParameterStore::set_trainable(bool trainable) {
  for (auto& [_, p] : params_) p.trainable = trainable;
}

std::size_t ParameterStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.numel();
  return n;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

// ---------------------------------------------------------------------------
// Plain kernels

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  Tensor c({a.dim(0), b.dim(1)}, 0.0);
  gemm_nn(a.ptr(), b.ptr(), c.ptr(), a.dim(0), a.dim(1), b.dim(1));
  return c;
}

Tensor softmax_rows(const Tensor& x) {
  Tensor out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      s += v;
    }
    for (double& v : row) v /= s;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ops

Var constant(Tensor value) { return Var(std::move(value), false); }

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  return make_result(std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      Tensor& g = grad_of(*p);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  return make_result(std::move(out), {a.node(), b.node()}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      Tensor& g = grad_of(*pa);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      Tensor& g = grad_of(*pb);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return make_result(std::move(out), {a.node(), b.node()}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      Tensor& g = grad_of(*pa);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      Tensor& g = grad_of(*pb);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  return make_result(std::move(out), {a.node()}, [s](Node& self) {
    Tensor& g = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += s * self.grad[i];
  });
}

Var add_bias(const Var& x, const Var& b) {
  require_row_vector(x, b, "add_bias");
  Tensor out = x.value();
  const std::size_t d = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t j = 0; j < d; ++j) row[j] += b.value()[j];
  }
  return make_result(std::move(out), {x.node(), b.node()}, [d](Node& self) {
    auto& px = self.parents[0];
    auto& pb = self.parents[1];
    if (px->requires_grad) {
      Tensor& g = grad_of(*px);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      Tensor& g = grad_of(*pb);
      for (std::size_t r = 0; r < self.grad.rows(); ++r) {
        auto row = self.grad.row(r);
        for (std::size_t j = 0; j < d; ++j) g[j] += row[j];
      }
    }
  });
}

Var mul_cols(const Var& x, const Var& gvec) {
  require_row_vector(x, gvec, "mul_cols");
  Tensor out = x.value();
  const std::size_t d = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t j = 0; j < d; ++j) row[j] *= gvec.value()[j];
  }
  return make_result(std::move(out), {x.node(), gvec.node()}, [d](Node& self) {
    auto& px = self.parents[0];
    auto& pg = self.parents[1];
    if (px->requires_grad) {
      Tensor& g = grad_of(*px);
      for (std::size_t r = 0; r < self.grad.rows(); ++r) {
        for (std::size_t j = 0; j < d; ++j) g.at(r, j) += self.grad.at(r, j) * pg->value[j];
      }
    }
    if (pg->requires_grad) {
      Tensor& g = grad_of(*pg);
      for (std::size_t r = 0; r < self.grad.rows(); ++r) {
        for (std::size_t j = 0; j < d; ++j) g[j] += self.grad.at(r, j) * px->value.at(r, j);
      }
    }
  });
}

Var modulate(const Var& x, const Var& shift, const Var& scl) {
  require_row_vector(x, shift, "modulate");
  require_row_vector(x, scl, "modulate");
  Tensor out = x.value();
  const std::size_t d = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t j = 0; j < d; ++j) row[j] = row[j] * (1.0 + scl.value()[j]) + shift.value()[j];
  }
  return make_result(std::move(out), {x.node(), shift.node(), scl.node()}, [d](Node& self) {
    auto& px = self.parents[0];
    auto& psh = self.parents[1];
    auto& psc = self.parents[2];
    const std::size_t rows = self.grad.rows();
    if (px->requires_grad) {
      Tensor& g = grad_of(*px);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) g.at(r, j) += self.grad.at(r, j) * (1.0 + psc->value[j]);
      }
    }
    if (psh->requires_grad) {
      Tensor& g = grad_of(*psh);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) g[j] += self.grad.at(r, j);
      }
    }
    if (psc->requires_grad) {
      Tensor& g = grad_of(*psc);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) g[j] += self.grad.at(r, j) * px->value.at(r, j);
      }
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  Tensor out = matmul(a.value(), b.value());
  const std::size_t m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(1);
  return make_result(std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) gemm_nt(self.grad.ptr(), pb->value.ptr(), grad_of(*pa).ptr(), m, n, k);
    if (pb->requires_grad) gemm_tn(pa->value.ptr(), self.grad.ptr(), grad_of(*pb).ptr(), m, k, n);
  });
}

Var linear(const Var& x, const Var& w, const Var& b) { return add_bias(matmul(x, w), b); }

Var layer_norm(const Var& x, double eps) {
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const Tensor& in = x.value();
  const std::size_t d = in.cols();
  Tensor out(in.shape(), 0.0);
  std::vector<double> inv_std(in.rows());
  for (std::size_t r = 0; r < in.rows(); ++r) {
    auto row = in.row(r);
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    auto orow = out.row(r);
    for (std::size_t j = 0; j < d; ++j) orow[j] = (row[j] - mu) * inv_std[r];
  }
  Tensor normalized = out;
  return make_result(std::move(out), {x.node()},
                     [d, inv_std = std::move(inv_std), xhat = std::move(normalized)](Node& self) {
                       Tensor& g = grad_of(*self.parents[0]);
                       const double dd = static_cast<double>(d);
                       for (std::size_t r = 0; r < self.grad.rows(); ++r) {
                         auto go = self.grad.row(r);
                         auto xh = xhat.row(r);
                         double mean_g = 0.0, mean_gx = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           mean_g += go[j];
                           mean_gx += go[j] * xh[j];
                         }
                         mean_g /= dd;
                         mean_gx /= dd;
                         auto gi = g.row(r);
                         for (std::size_t j = 0; j < d; ++j) {
                           gi[j] += inv_std[r] * (go[j] - mean_g - xh[j] * mean_gx);
                         }
                       }
                     });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  if (gain.value().numel() != x.cols() || bias.value().numel() != x.cols()) {
    throw ShapeError("layer_norm: feature dim " + std::to_string(x.cols()) + " does not match gain " +
                     shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()));
  }
  return add_bias(mul_cols(layer_norm(x, eps), gain), bias);
}

Var gelu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data()) {
    const double u = kGeluC * (v + kGeluA * v * v * v);
    v = 0.5 * v * (1.0 + std::tanh(u));
  }
  return make_result(std::move(out), {x.node()}, [](Node& self) {
    auto& px = self.parents[0];
    Tensor& g = grad_of(*px);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double v = px->value[i];
      const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      g[i] += self.grad[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
    }
  });
}

Var silu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v / (1.0 + std::exp(-v));
  return make_result(std::move(out), {x.node()}, [](Node& self) {
    auto& px = self.parents[0];
    Tensor& g = grad_of(*px);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double v = px->value[i];
      const double s = 1.0 / (1.0 + std::exp(-v));
      g[i] += self.grad[i] * (s * (1.0 + v * (1.0 - s)));
    }
  });
}

Var attention(const Var& q, const Var& k, const Var& v) {
  require_matrix(q, "attention");
  require_matrix(k, "attention");
  require_matrix(v, "attention");
  if (q.cols() != k.cols() || k.rows() != v.rows()) {
    throw ShapeError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                     shape_str(v.shape()) + " are incompatible");
  }
  const std::size_t tq = q.rows(), tk = k.rows(), d = q.cols(), dv = v.cols();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor scores({tq, tk}, 0.0);
  gemm_nt(q.value().ptr(), k.value().ptr(), scores.ptr(), tq, d, tk);
  for (double& s : scores.data()) s *= inv_sqrt_d;
  Tensor probs = softmax_rows(scores);
  Tensor out({tq, dv}, 0.0);
  gemm_nn(probs.ptr(), v.value().ptr(), out.ptr(), tq, tk, dv);
  return make_result(std::move(out), {q.node(), k.node(), v.node()},
                     [tq, tk, d, dv, inv_sqrt_d, probs = std::move(probs)](Node& self) {
                       auto& pq = self.parents[0];
                       auto& pk = self.parents[1];
                       auto& pv = self.parents[2];
                       if (pv->requires_grad) gemm_tn(probs.ptr(), self.grad.ptr(), grad_of(*pv).ptr(), tq, tk, dv);
                       if (!pq->requires_grad && !pk->requires_grad) return;
                       Tensor dp({tq, tk}, 0.0);
                       gemm_nt(self.grad.ptr(), pv->value.ptr(), dp.ptr(), tq, dv, tk);
                       Tensor ds({tq, tk}, 0.0);
                       for (std::size_t i = 0; i < tq; ++i) {
                         double dot = 0.0;
                         for (std::size_t j = 0; j < tk; ++j) dot += probs.at(i, j) * dp.at(i, j);
                         for (std::size_t j = 0; j < tk; ++j) {
                           ds.at(i, j) = probs.at(i, j) * (dp.at(i, j) - dot) * inv_sqrt_d;
                         }
                       }
                       if (pq->requires_grad) gemm_nn(ds.ptr(), pk->value.ptr(), grad_of(*pq).ptr(), tq, tk, d);
                       if (pk->requires_grad) gemm_tn(ds.ptr(), pq->value.ptr(), grad_of(*pk).ptr(), tq, tk, d);
                     });
}

Var slice_cols(const Var& x, std::size_t start, std::size_t count) {
  require_matrix(x, "slice_cols");
  if (count == 0 || start + count > x.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + shape_str(x.shape()));
  }
  const std::size_t rows = x.rows();
  Tensor out({rows, count}, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < count; ++j) out.at(r, j) = x.value().at(r, start + j);
  }
  return make_result(std::move(out), {x.node()}, [start, count, rows](Node& self) {
    Tensor& g = grad_of(*self.parents[0]);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < count; ++j) g.at(r, start + j) += self.grad.at(r, j);
    }
  });
}

Var slice_rows(const Var& x, std::size_t start, std::size_t count) {
  require_matrix(x, "slice_rows");
  if (count == 0 || start + count > x.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + shape_str(x.shape()));
  }
  const std::size_t cols = x.cols();
  std::vector<double> data(x.value().ptr() + start * cols, x.value().ptr() + (start + count) * cols);
  Tensor out({count, cols}, std::move(data));
  return make_result(std::move(out), {x.node()}, [start, cols](Node& self) {
    Tensor& g = grad_of(*self.parents[0]);
    double* dst = g.ptr() + start * cols;
    for (std::size_t i = 0; i < self.grad.numel(); ++i) dst[i] += self.grad[i];
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.rows() != rows) throw ShapeError("concat_cols: row count mismatch " + shape_str(p.shape()));
    total += p.cols();
  }
  Tensor out({rows, total}, 0.0);
  std::vector<std::size_t> offsets;
  std::vector<NodePtr> nodes;
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < p.cols(); ++j) out.at(r, off + j) = p.value().at(r, j);
    }
    offsets.push_back(off);
    nodes.push_back(p.node());
    off += p.cols();
  }
  return make_result(std::move(out), std::move(nodes), [offsets, rows](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      Tensor& g = grad_of(*p);
      const std::size_t c = p->value.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < c; ++j) g.at(r, j) += self.grad.at(r, offsets[k] + j);
      }
    }
  });
}

Var mean_rows(const Var& x) {
  require_matrix(x, "mean_rows");
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor out({1, cols}, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) out[j] += x.value().at(r, j);
  }
  const double inv = 1.0 / static_cast<double>(rows);
  for (double& v : out.data()) v *= inv;
  return make_result(std::move(out), {x.node()}, [rows, cols, inv](Node& self) {
    Tensor& g = grad_of(*self.parents[0]);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < cols; ++j) g.at(r, j) += self.grad[j] * inv;
    }
  });
}

Var interp_rows(const Var& x, const InterpPlan& plan) {
  require_matrix(x, "interp_rows");
  if (plan.source_rows != x.rows()) {
    throw ShapeError("interp_rows: plan expects " + std::to_string(plan.source_rows) + " source rows, got " +
                     std::to_string(x.rows()));
  }
  if (plan.size() == 0) throw ShapeError("interp_rows: empty plan");
  const std::size_t cols = x.cols();
  Tensor out({plan.size(), cols}, 0.0);
  for (std::size_t r = 0; r < plan.size(); ++r) {
    auto a = x.value().row(plan.i0[r]);
    auto b = x.value().row(plan.i1[r]);
    auto o = out.row(r);
    for (std::size_t j = 0; j < cols; ++j) o[j] = plan.w0[r] * a[j] + plan.w1[r] * b[j];
  }
  return make_result(std::move(out), {x.node()}, [plan, cols](Node& self) {
    Tensor& g = grad_of(*self.parents[0]);
    for (std::size_t r = 0; r < plan.size(); ++r) {
      auto go = self.grad.row(r);
      auto a = g.row(plan.i0[r]);
      for (std::size_t j = 0; j < cols; ++j) a[j] += plan.w0[r] * go[j];
      auto b = g.row(plan.i1[r]);
      for (std::size_t j = 0; j < cols; ++j) b[j] += plan.w1[r] * go[j];
    }
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_result(Tensor::scalar(s), {x.node()}, [](Node& self) {
    Tensor& g = grad_of(*self.parents[0]);
    const double go = self.grad[0];
    for (double& v : g.data()) v += go;
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().numel())); }

Var mse(const Var& pred, const Var& target) {
  Var diff = sub(pred, target);
  return mean(mul(diff, diff));
}

// ---------------------------------------------------------------------------
// Reverse pass

void backward(const Var& loss) {
  if (!loss.defined() || loss.value().numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->grad = Tensor();
  grad_of(*loss.node()).fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->grad.empty()) continue;
    if (n->backward) n->backward(*n);
    if (n->sink) {
      for (std::size_t i = 0; i < n->sink->numel(); ++i) (*n->sink)[i] += n->grad[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Finite differences

namespace {
constexpr double kGradCheckFloor = 1e-6;
}  // namespace

GradCheckResult finite_difference_check(const std::function<Var()>& loss_fn,
                                        const std::vector<ParameterStore*>& stores, double h) {
  if (!(h > 0.0)) throw ContractError("finite_difference_check: h must be positive");
  for (auto* s : stores) s->zero_grad();
  backward(loss_fn());

  GradCheckResult result;
  std::size_t store_index = 0;
  for (auto* store : stores) {
    for (auto& [name, param] : *store) {
      if (!param.trainable) continue;
      std::vector<double> numeric(param.value.numel());
      for (std::size_t i = 0; i < param.value.numel(); ++i) {
        const double saved = param.value[i];
        double plus = 0.0, minus = 0.0;
        {
          NoGradGuard guard;
          param.value[i] = saved + h;
          plus = loss_fn().value()[0];
          param.value[i] = saved - h;
          minus = loss_fn().value()[0];
        }
        param.value[i] = saved;
        numeric[i] = (plus - minus) / (2.0 * h);
      }
      double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
      for (std::size_t i = 0; i < numeric.size(); ++i) {
        const double a = param.grad[i];
        diff2 += (a - numeric[i]) * (a - numeric[i]);
        a2 += a * a;
        n2 += numeric[i] * numeric[i];
      }
      // Below the floor the check is absolute: some parameters (a key bias under
      // softmax) have a gradient that is exactly zero, leaving only roundoff.
      const double err = std::sqrt(diff2) / std::max(std::sqrt(a2) + std::sqrt(n2), kGradCheckFloor);
      const std::string key = stores.size() > 1 ? std::to_string(store_index) + ":" + name : name;
      result.per_parameter[key] = err;
      if (result.worst_parameter.empty() || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_parameter = key;
      }
    }
    ++store_index;
  }
  return result;
}

GradCheckResult finite_difference_check(const std::function<Var(ParameterStore&)>& loss_fn,
                                        ParameterStore& store, double h) {
  return finite_difference_check([&]() { return loss_fn(store); }, std::vector<ParameterStore*>{&store}, h);
}

}  // namespace lf
