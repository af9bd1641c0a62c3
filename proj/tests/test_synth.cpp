#include <cmath>

#include "doctest.h"
#include "longfoley/errors.hpp"
#include "longfoley/synth.hpp"

using namespace lf;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.n_videos = 6;
  s.video_duration_s = 3.0;
  s.clip_duration_s = 1.0;
  s.dims = DimProfile{6, 6, 6, 4, 3};
  return s;
}

bool same_stream(const TokenStream& a, const TokenStream& b) {
  return a.kind == b.kind && a.rate_fps == b.rate_fps && bitwise_equal(a.tokens, b.tokens);
}

}  // namespace

TEST_CASE("synthetic videos are deterministic per seed and index") {
  const SyntheticSpec spec = small_spec();
  const SyntheticVideo a = make_synthetic_video(spec, 2, 11);
  const SyntheticVideo b = make_synthetic_video(spec, 2, 11);
  CHECK(bitwise_equal(a.ground_truth.latents, b.ground_truth.latents));
  CHECK(same_stream(a.video.input.bundle.visual, b.video.input.bundle.visual));
  CHECK(same_stream(a.video.input.bundle.sync, b.video.input.bundle.sync));
  CHECK(a.clip_cues == b.clip_cues);
  CHECK(a.level == b.level);
  const SyntheticVideo other = make_synthetic_video(spec, 3, 11);
  CHECK_FALSE(bitwise_equal(a.ground_truth.latents, other.ground_truth.latents));
  const SyntheticVideo reseeded = make_synthetic_video(spec, 2, 12);
  CHECK_FALSE(bitwise_equal(a.ground_truth.latents, reseeded.ground_truth.latents));
}

TEST_CASE("synthetic targets respect the continuity bound") {
  SyntheticSpec spec = small_spec();
  spec.video_duration_s = 8.0;
  spec.clip_duration_s = 2.0;
  for (std::size_t i = 0; i < 20; ++i) {
    const SyntheticVideo v = make_synthetic_video(spec, i, 5);
    CHECK(max_frame_jump(v.ground_truth.latents) <= spec.max_jump);
  }
}

TEST_CASE("clip streams and targets are windows of the whole video") {
  const SyntheticSpec spec = small_spec();
  const SyntheticVideo v = make_synthetic_video(spec, 0, 3);
  const auto& in = v.video.input;
  REQUIRE(in.clips.size() == spec.clips_per_video());
  REQUIRE(v.video.targets.size() == in.clips.size());
  CHECK(v.clip_cues.size() == in.clips.size());
  CHECK((v.level == spec.level_low || v.level == spec.level_high));
  CHECK(v.ground_truth.length() == frame_count(kLatentFps, spec.video_duration_s));
  CHECK(in.bundle.check(spec.dims).empty());
  for (std::size_t c = 0; c < in.clips.size(); ++c) {
    const ClipInputs& clip = in.clips[c];
    CHECK(clip.window.start_s == doctest::Approx(c * spec.clip_duration_s));
    CHECK(same_stream(clip.visual, slice_stream(in.bundle.visual, clip.window.start_s, clip.window.end_s)));
    CHECK(same_stream(clip.sync, slice_stream(in.bundle.sync, clip.window.start_s, clip.window.end_s)));
    CHECK(check_stream(clip.visual, spec.dims, clip.window.duration()).empty());
    CHECK(check_stream(clip.sync, spec.dims, clip.window.duration()).empty());
    const Tensor& target = v.video.targets[c];
    REQUIRE(target.rows() == clip.window.frame_count());
    const std::size_t first = clip.window.first_frame();
    for (std::size_t r = 0; r < target.rows(); ++r) {
      for (std::size_t j = 0; j < target.cols(); ++j) CHECK(target.at(r, j) == v.ground_truth.latents.at(first + r, j));
    }
  }
}

TEST_CASE("both scene levels occur across a dataset") {
  const SyntheticSpec spec = small_spec();
  std::size_t low = 0, high = 0;
  for (std::size_t i = 0; i < 40; ++i) {
    const double level = make_synthetic_video(spec, i, 9).level;
    (level == spec.level_low ? low : high)++;
  }
  CHECK(low > 5);
  CHECK(high > 5);
}

TEST_CASE("invalid synthetic specs are rejected") {
  SyntheticSpec s = small_spec();
  s.cue_noise = -1.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = small_spec();
  s.clip_duration_s = 0.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = small_spec();
  s.clip_duration_s = 5.0;
  CHECK_THROWS(s.validate());
}

TEST_CASE("slice_stream clamps to the stream and rejects empty slices") {
  Tensor t({10, 2});
  for (std::size_t i = 0; i < 10; ++i) t.at(i, 0) = static_cast<double>(i);
  const TokenStream s = make_stream(StreamKind::visual, t);
  const double fps = s.rate_fps;
  const TokenStream tail = slice_stream(s, 5.0 / fps, 20.0 / fps);
  CHECK(tail.length() == 5);
  CHECK(tail.tokens.at(0, 0) == 5.0);
  CHECK_THROWS_AS(slice_stream(s, 12.0 / fps, 14.0 / fps), ContractError);
}
