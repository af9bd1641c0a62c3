#include "longfoley/conditioning.hpp"

#include <cmath>

#include "longfoley/errors.hpp"
#include "longfoley/init.hpp"

namespace lf {

void ConditioningConfig::validate() const {
  if (hidden_dim < 1) throw ConfigError("conditioning.hidden_dim must be >= 1");
  if (timestamp_dim < 2 || timestamp_dim % 2 != 0) throw ConfigError("conditioning.timestamp_dim must be even and >= 2");
}

void init_conditioning_params(ParameterStore& store, const ConditioningConfig& cfg, Philox& rng) {
  cfg.validate();
  const std::size_t h = cfg.hidden_dim;
  add_linear(store, "cond.visual", cfg.dims.visual, h, rng);
  add_linear(store, "cond.text", cfg.dims.text, h, rng);
  add_linear(store, "cond.sync", cfg.dims.sync, h, rng);
  store.add("cond.time.w", init_weight(cfg.timestamp_dim, cfg.global_dim(), rng));
}

Tensor timestamp_embed(double t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw ContractError("timestamp_embed: dim must be even, got " + std::to_string(dim));
  const std::size_t pairs = dim / 2;
  Tensor out({1, dim});
  for (std::size_t k = 0; k < pairs; ++k) {
    const double exponent = pairs > 1 ? static_cast<double>(k) / static_cast<double>(pairs - 1) : 0.0;
    const double omega = std::pow(1.0e4, exponent);
    out[2 * k] = std::sin(t / omega);
    out[2 * k + 1] = std::cos(t / omega);
  }
  return out;
}

FrameCondition build_frame_condition(const TokenStream& sync, ParameterStore& params, const ConditioningConfig& cfg,
                                     std::optional<ClipWindow> window) {
  if (sync.kind != StreamKind::sync) {
    throw ContractError("build_frame_condition: expected a sync stream, got " + std::string(to_string(sync.kind)));
  }
  if (sync.tokens.empty() || sync.length() == 0) throw ContractError("build_frame_condition: empty sync stream");
  if (sync.dim() != cfg.dims.sync) {
    throw ShapeError("build_frame_condition: sync dim " + std::to_string(sync.dim()) + " != " +
                     std::to_string(cfg.dims.sync));
  }
  InterpPlan plan;
  if (window) {
    plan = make_resample_plan(sync.length(), sync.rate_fps, kLatentFps, window->first_frame(), window->frame_count(),
                              window->start_s);
  } else {
    plan = make_resample_plan(sync.length(), sync.rate_fps, kLatentFps);
  }
  if (plan.size() == 0) throw ContractError("build_frame_condition: clip shorter than one latent frame");
  Var projected = linear(constant(sync.tokens), params.var("cond.sync.w"), params.var("cond.sync.b"));
  return FrameCondition{interp_rows(projected, plan)};
}

Var pooled_visual(const TokenStream& visual, ParameterStore& params) {
  if (visual.kind != StreamKind::visual) {
    throw ContractError("expected a visual stream, got " + std::string(to_string(visual.kind)));
  }
  if (visual.tokens.empty() || visual.length() == 0) throw ContractError("empty visual stream");
  return mean_rows(linear(constant(visual.tokens), params.var("cond.visual.w"), params.var("cond.visual.b")));
}

GlobalCondition build_global_condition(const TokenStream& visual, const TokenStream& text, double t_s,
                                       ParameterStore& params, const ConditioningConfig& cfg) {
  if (text.kind != StreamKind::text) {
    throw ContractError("build_global_condition: expected a text stream, got " + std::string(to_string(text.kind)));
  }
  if (text.tokens.empty()) throw ContractError("build_global_condition: empty text stream");
  Var pv = pooled_visual(visual, params);
  Var pt = mean_rows(linear(constant(text.tokens), params.var("cond.text.w"), params.var("cond.text.b")));
  Var pre_fusion = concat_cols({pv, pt});
  Var time = matmul(constant(timestamp_embed(t_s, cfg.timestamp_dim)), params.var("cond.time.w"));
  return GlobalCondition{add(pre_fusion, time)};
}

}  // namespace lf
