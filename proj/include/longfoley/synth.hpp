#pragma once

#include <cstddef>
#include <cstdint>

#include "longfoley/generator.hpp"
#include "longfoley/streams.hpp"

namespace lf {

// Synthetic long-form videos. Each video has a scene level drawn from
// {level_low, level_high} that scales a slow envelope in the target latents.
// Every clip's visual stream carries a noisy cue of the level along one fixed
// direction; one clip alone often reads it wrong, the whole video rarely does.
// The envelope itself is visible in the sync stream.
struct SyntheticSpec {
  std::size_t n_videos = 64;
  double video_duration_s = 8.0;
  double clip_duration_s = 2.0;
  DimProfile dims{16, 16, 16, 8, 8};
  double level_low = 0.2;
  double level_high = 1.5;
  double cue_strength = 1.0;
  double cue_noise = 1.5;
  double envelope_depth = 0.3;
  double texture_scale = 0.15;
  // Upper bound on the largest per-coordinate change between adjacent target frames.
  double max_jump = 0.5;

  std::size_t clips_per_video() const;
  void validate() const;
};

struct SyntheticVideo {
  TrainingVideo video;
  LatentSequence ground_truth;  // full-video target latents
  double level = 0.0;
  std::vector<double> clip_cues;
};

// Video `index` of the dataset; draws from streams "synth/video/<index>" and the
// shared "synth/directions".
SyntheticVideo make_synthetic_video(const SyntheticSpec& spec, std::size_t index, std::uint64_t seed);

// Largest absolute per-coordinate difference between consecutive rows.
double max_frame_jump(const Tensor& latents);

// Rows [round(fps * start), round(fps * end)) of a stream, clamped to its length.
TokenStream slice_stream(const TokenStream& s, double start_s, double end_s);

}  // namespace lf
