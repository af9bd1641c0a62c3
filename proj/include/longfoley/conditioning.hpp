#pragma once

#include <cstddef>
#include <optional>

#include "longfoley/autograd.hpp"
#include "longfoley/rng.hpp"
#include "longfoley/streams.hpp"

namespace lf {

// Whether the timestamp fused into the global condition is measured from the
// start of the parent video or from the start of the clip.
enum class TimestampMode { video_absolute, clip_relative };

struct ConditioningConfig {
  std::size_t hidden_dim = 64;
  std::size_t timestamp_dim = 64;
  TimestampMode timestamp_mode = TimestampMode::video_absolute;
  DimProfile dims;

  std::size_t global_dim() const { return 2 * hidden_dim; }
  void validate() const;
};

// Time span of a clip inside its parent video, in seconds.
struct ClipWindow {
  double start_s = 0.0;
  double end_s = 0.0;
  double duration() const { return end_s - start_s; }
  // Latent frames [round(fps * start), round(fps * end)) on the parent grid.
  std::size_t first_frame() const { return frame_index(kLatentFps, start_s); }
  std::size_t frame_count() const { return frame_index(kLatentFps, end_s) - first_frame(); }
};

// Per-token frame-aligned condition [T_a x hidden_dim] at 31.25 fps.
struct FrameCondition {
  Var tokens;
  std::size_t length() const { return tokens.rows(); }
};

// Clip-level condition [1 x 2*hidden_dim].
struct GlobalCondition {
  Var vector;
};

// Projection parameters: cond.{visual,text,sync}.{w,b} and cond.time.w.
void init_conditioning_params(ParameterStore& store, const ConditioningConfig& cfg, Philox& rng);

// Sinusoidal embedding [1 x dim]: pairs (sin(t/w_k), cos(t/w_k)) with w_k
// geometric from 1 to 1e4.
Tensor timestamp_embed(double t, std::size_t dim);

// Projects each sync token to hidden_dim, then resamples 24 -> 31.25 fps.
// Without a window the output has round(31.25 * T / 24) tokens; with one, the
// clip's sync stream is placed at window.start_s and the window's frames on the
// parent latent grid are produced.
FrameCondition build_frame_condition(const TokenStream& sync, ParameterStore& params, const ConditioningConfig& cfg,
                                     std::optional<ClipWindow> window = std::nullopt);

// Mean-pooled visual and text projections concatenated, plus a learned linear
// map of the timestamp embedding of `t_s`.
GlobalCondition build_global_condition(const TokenStream& visual, const TokenStream& text, double t_s,
                                       ParameterStore& params, const ConditioningConfig& cfg);

// Mean-pooled projection of a visual stream [1 x hidden_dim]; shared with the global adapter path.
Var pooled_visual(const TokenStream& visual, ParameterStore& params);

}  // namespace lf
