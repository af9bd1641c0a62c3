#include "longfoley/adapters.hpp"

#include <cmath>
#include <sstream>

#include "longfoley/errors.hpp"
#include "longfoley/init.hpp"

namespace lf {

void AdapterConfig::validate() const {
  if (input_dim < 1 || bottleneck_dim < 1 || output_dim < 1) throw ConfigError("adapter dims must be positive");
  if (bottleneck_dim >= input_dim) {
    throw ConfigError("adapter bottleneck_dim " + std::to_string(bottleneck_dim) + " must be below input_dim " +
                      std::to_string(input_dim));
  }
}

std::size_t AdapterConfig::num_scalars() const {
  return input_dim * bottleneck_dim + bottleneck_dim + bottleneck_dim * output_dim + output_dim;
}

std::vector<std::string> GlobalFeatureBundle::check(const DimProfile& dims) const {
  std::vector<std::string> report;
  auto expect_kind = [&](const TokenStream& s, StreamKind kind) {
    if (s.kind != kind) {
      report.push_back("bundle " + std::string(to_string(kind)) + " slot holds a " + std::string(to_string(s.kind)) +
                       " stream");
      return false;
    }
    for (auto& v : check_stream(s, dims)) report.push_back("bundle " + v);
    return true;
  };
  const bool v_ok = expect_kind(visual, StreamKind::visual);
  expect_kind(text, StreamKind::text);
  const bool s_ok = expect_kind(sync, StreamKind::sync);
  if (v_ok && s_ok && !visual.tokens.empty() && !sync.tokens.empty()) {
    const double gap = std::abs(visual.duration_s() - sync.duration_s());
    if (gap > 1.0 / kVisualFps + 1e-9) {
      std::ostringstream msg;
      msg << "bundle visual duration " << visual.duration_s() << " s and sync duration " << sync.duration_s()
          << " s differ by more than one frame";
      report.push_back(msg.str());
    }
  }
  return report;
}

void init_adapter(ParameterStore& store, const std::string& prefix, const AdapterConfig& cfg, Philox& rng) {
  cfg.validate();
  add_linear(store, prefix + ".down", cfg.input_dim, cfg.bottleneck_dim, rng);
  if (cfg.init == AdapterInit::zero_out) {
    store.add(prefix + ".up.w", Tensor({cfg.bottleneck_dim, cfg.output_dim}));
    store.add(prefix + ".up.b", Tensor({1, cfg.output_dim}));
  } else {
    add_linear(store, prefix + ".up", cfg.bottleneck_dim, cfg.output_dim, rng);
  }
}

AdapterConfig global_adapter_config(const ConditioningConfig& cond, std::size_t bottleneck, AdapterInit init) {
  return AdapterConfig{cond.hidden_dim, bottleneck, cond.global_dim(), init};
}

AdapterConfig sync_adapter_config(const ConditioningConfig& cond, std::size_t bottleneck, AdapterInit init) {
  return AdapterConfig{cond.hidden_dim, bottleneck, cond.hidden_dim, init};
}

void init_dual_adapters(ParameterStore& store, const ConditioningConfig& cond, std::size_t bottleneck,
                        AdapterInit init, std::uint64_t seed) {
  Philox g(seed, std::string("adapters/") + kGlobalAdapter);
  init_adapter(store, kGlobalAdapter, global_adapter_config(cond, bottleneck, init), g);
  Philox s(seed, std::string("adapters/") + kSyncAdapter);
  init_adapter(store, kSyncAdapter, sync_adapter_config(cond, bottleneck, init), s);
}

Var adapter_forward(const Var& x, ParameterStore& adapters, const std::string& prefix) {
  const std::size_t in = adapters.value(prefix + ".down.w").rows();
  if (x.cols() != in) {
    throw ShapeError("adapter " + prefix + ": input dim " + std::to_string(x.cols()) + " != " + std::to_string(in));
  }
  Var h = gelu(apply_linear(x, adapters, prefix + ".down"));
  return apply_linear(h, adapters, prefix + ".up");
}

GlobalCondition fuse_global(const GlobalCondition& c_g, const GlobalFeatureBundle& bundle, ParameterStore& adapters,
                            ParameterStore& base) {
  Var correction = adapter_forward(pooled_visual(bundle.visual, base), adapters, kGlobalAdapter);
  if (correction.cols() != c_g.vector.cols()) {
    throw ShapeError("fuse_global: h_global output " + std::to_string(correction.cols()) + " != c_g length " +
                     std::to_string(c_g.vector.cols()));
  }
  return GlobalCondition{add(c_g.vector, correction)};
}

FrameCondition fuse_frame(const FrameCondition& c_f, const GlobalFeatureBundle& bundle, ParameterStore& adapters,
                          ParameterStore& base, const ClipWindow& window) {
  const TokenStream& sync = bundle.sync;
  if (sync.kind != StreamKind::sync || sync.tokens.empty()) throw ContractError("fuse_frame: bundle has no sync stream");
  const double total = sync.duration_s();
  if (!(window.start_s >= 0.0) || !(window.end_s > window.start_s) || window.end_s > total + 1e-9) {
    std::ostringstream msg;
    msg << "fuse_frame: window [" << window.start_s << ", " << window.end_s << ") outside video of " << total << " s";
    throw ContractError(msg.str());
  }
  const InterpPlan plan =
      make_resample_plan(sync.length(), sync.rate_fps, kLatentFps, window.first_frame(), window.frame_count());
  if (plan.size() != c_f.length()) {
    throw ShapeError("fuse_frame: window has " + std::to_string(plan.size()) + " frames, c_f has " +
                     std::to_string(c_f.length()));
  }
  Var projected = apply_linear(constant(sync.tokens), base, "cond.sync");
  Var correction = adapter_forward(interp_rows(projected, plan), adapters, kSyncAdapter);
  if (correction.cols() != c_f.tokens.cols()) {
    throw ShapeError("fuse_frame: h_syn output " + std::to_string(correction.cols()) + " != c_f width " +
                     std::to_string(c_f.tokens.cols()));
  }
  return FrameCondition{add(c_f.tokens, correction)};
}

double param_budget(const ParameterStore& base, const ParameterStore& adapters) {
  if (base.num_scalars() == 0) throw ContractError("param_budget: empty base store");
  return static_cast<double>(adapters.num_scalars()) / static_cast<double>(base.num_scalars());
}

}  // namespace lf
