#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "longfoley/autograd.hpp"
#include "longfoley/tensor.hpp"

namespace lf {

inline constexpr double kVisualFps = 8.0;
inline constexpr double kSyncFps = 24.0;
inline constexpr double kLatentFps = 31.25;

enum class StreamKind { visual, text, sync, audio_latent };

std::string_view to_string(StreamKind kind);
StreamKind stream_kind_from_string(std::string_view name);
// Native frame rate of a stream kind; 0 for the positionless text stream.
double nominal_rate(StreamKind kind);

// Feature widths per stream. Defaults are the real backbone widths; desk-scale
// runs shrink them through a manifest "toy_dims" block.
struct DimProfile {
  std::size_t visual = 1024;
  std::size_t text = 1024;
  std::size_t sync = 768;
  std::size_t latent = 20;
  std::size_t text_tokens = 77;

  std::size_t dim(StreamKind kind) const;
  bool operator==(const DimProfile&) const = default;
};

// A one-dimensional token sequence [T x dim] at a fixed frame rate.
struct TokenStream {
  StreamKind kind = StreamKind::visual;
  double rate_fps = 0.0;
  Tensor tokens;

  std::size_t length() const { return tokens.rows(); }
  std::size_t dim() const { return tokens.cols(); }
  double duration_s() const;
};

TokenStream make_stream(StreamKind kind, Tensor tokens);

// Frame-count law: round(fps * duration), halves rounded away from zero.
std::size_t frame_count(double fps, double duration_s);
// First latent-grid frame at or after time t: round(fps * t).
std::size_t frame_index(double fps, double t_s);

// Every violated invariant of `s` under `dims`; empty when valid. When
// `duration_s` is positive the length law against that duration is checked too.
std::vector<std::string> check_stream(const TokenStream& s, const DimProfile& dims, double duration_s = 0.0);

// Linear interpolation plan on a half-sample-centered axis. Output row k sits
// at absolute time (first + k + 0.5) / target_fps; the source is placed so its
// sample i sits at time_offset_s + (i + 0.5) / source_fps. Positions outside
// the source support clamp to the end samples.
InterpPlan make_resample_plan(std::size_t source_len, double source_fps, double target_fps, std::size_t first,
                              std::size_t count, double time_offset_s = 0.0);
// Whole-stream plan with round(target_fps * T / source_fps) outputs.
InterpPlan make_resample_plan(std::size_t source_len, double source_fps, double target_fps);

Tensor apply_plan(const Tensor& x, const InterpPlan& plan);
TokenStream resample_stream(const TokenStream& s, double target_fps);

// Audio latents [T x latent_dim] at 31.25 fps with the nominal clip duration
// they were generated for.
struct LatentSequence {
  Tensor latents;
  double rate_fps = kLatentFps;
  double duration_s = 0.0;

  std::size_t length() const { return latents.rows(); }
  std::size_t dim() const { return latents.cols(); }
  static LatentSequence from_tensor(Tensor latents, double rate_fps = kLatentFps);
};

struct SplicePoints {
  std::vector<double> times;
  bool operator==(const SplicePoints&) const = default;
};

struct Concatenated {
  LatentSequence sequence;
  SplicePoints splices;
};

// Stacks clips in order; splice points fall at the cumulative clip durations,
// excluding 0 and the total end.
Concatenated concat_clips(const std::vector<LatentSequence>& clips);

}  // namespace lf
