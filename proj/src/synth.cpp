#include "longfoley/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "longfoley/errors.hpp"

namespace lf {

namespace {

constexpr std::size_t kPartials = 3;
constexpr std::size_t kCaptions = 4;

// Sum of a few low-frequency sinusoids per dimension.
class SmoothProcess {
 public:
  SmoothProcess(std::size_t dims, double f_lo, double f_hi, Philox& rng) : dims_(dims) {
    freq_.resize(dims * kPartials);
    phase_.resize(dims * kPartials);
    for (std::size_t i = 0; i < freq_.size(); ++i) {
      freq_[i] = f_lo + (f_hi - f_lo) * rng.uniform();
      phase_[i] = 2.0 * std::numbers::pi * rng.uniform();
    }
  }

  double operator()(std::size_t j, double t) const {
    double v = 0.0;
    for (std::size_t q = 0; q < kPartials; ++q) {
      const std::size_t i = j * kPartials + q;
      v += std::sin(2.0 * std::numbers::pi * freq_[i] * t + phase_[i]);
    }
    return v / std::sqrt(static_cast<double>(kPartials));
  }

  Tensor sample(double fps, std::size_t frames) const {
    Tensor out({frames, dims_});
    for (std::size_t r = 0; r < frames; ++r) {
      const double t = (static_cast<double>(r) + 0.5) / fps;
      for (std::size_t j = 0; j < dims_; ++j) out.at(r, j) = (*this)(j, t);
    }
    return out;
  }

 private:
  std::size_t dims_;
  std::vector<double> freq_, phase_;
};

Tensor unit_direction(std::size_t dim, Philox& rng) {
  Tensor v({1, dim});
  double sq = 0.0;
  for (double& x : v.data()) {
    x = rng.normal();
    sq += x * x;
  }
  for (double& x : v.data()) x /= std::sqrt(sq);
  return v;
}

}  // namespace

std::size_t SyntheticSpec::clips_per_video() const {
  return static_cast<std::size_t>(std::llround(video_duration_s / clip_duration_s));
}

void SyntheticSpec::validate() const {
  if (!(video_duration_s > 0.0) || !(clip_duration_s > 0.0)) throw ConfigError("dataset durations must be positive");
  const std::size_t n = clips_per_video();
  if (n < 1 || std::abs(static_cast<double>(n) * clip_duration_s - video_duration_s) > 1.0 / kLatentFps) {
    throw ConfigError("dataset.clip_duration_s must divide video_duration_s within one latent frame");
  }
  if (frame_count(kVisualFps, clip_duration_s) < 1 || frame_count(kLatentFps, clip_duration_s) < 1) {
    throw ConfigError("dataset.clip_duration_s is shorter than one visual frame");
  }
  if (!(level_low >= 0.0) || !(level_high >= 0.0)) throw ConfigError("dataset levels must be non-negative");
  if (!(cue_noise >= 0.0)) throw ConfigError("dataset.cue_noise must be non-negative");
  if (!(max_jump > 0.0)) throw ConfigError("dataset.max_jump must be positive");
}

TokenStream slice_stream(const TokenStream& s, double start_s, double end_s) {
  const std::size_t first = std::min(frame_index(s.rate_fps, start_s), s.length());
  const std::size_t last = std::min(frame_index(s.rate_fps, end_s), s.length());
  if (last <= first) throw ContractError("slice_stream: empty slice of " + std::string(to_string(s.kind)) + " stream");
  TokenStream out;
  out.kind = s.kind;
  out.rate_fps = s.rate_fps;
  out.tokens = Tensor({last - first, s.dim()});
  for (std::size_t r = first; r < last; ++r) {
    std::copy(s.tokens.row(r).begin(), s.tokens.row(r).end(), out.tokens.row(r - first).begin());
  }
  return out;
}

double max_frame_jump(const Tensor& latents) {
  double worst = 0.0;
  for (std::size_t r = 1; r < latents.rows(); ++r) {
    for (std::size_t j = 0; j < latents.cols(); ++j) {
      worst = std::max(worst, std::abs(latents.at(r, j) - latents.at(r - 1, j)));
    }
  }
  return worst;
}

SyntheticVideo make_synthetic_video(const SyntheticSpec& spec, std::size_t index, std::uint64_t seed) {
  spec.validate();
  const DimProfile& d = spec.dims;

  Philox shared(seed, "synth/directions");
  const Tensor cue_dir = unit_direction(d.visual, shared);
  const Tensor level_dir = unit_direction(d.latent, shared);
  const Tensor envelope_dir = unit_direction(d.sync, shared);
  Tensor texture_map({d.sync, d.latent});
  for (double& v : texture_map.data()) v = spec.texture_scale * shared.normal() / std::sqrt(static_cast<double>(d.sync));
  // Captions come from a small shared pool so text never identifies a single video.
  std::vector<Tensor> captions;
  for (std::size_t c = 0; c < kCaptions; ++c) {
    Tensor text({d.text_tokens, d.text});
    for (double& v : text.data()) v = shared.normal();
    captions.push_back(std::move(text));
  }

  Philox rng(seed, "synth/video/" + std::to_string(index));
  SyntheticVideo out;
  out.level = rng.uniform() < 0.5 ? spec.level_low : spec.level_high;
  const double sign = out.level >= 0.5 * (spec.level_low + spec.level_high) ? 1.0 : -1.0;
  const std::size_t n_clips = spec.clips_per_video();
  const double env_freq = 0.05 + 0.1 * rng.uniform();
  const double env_phase = 2.0 * std::numbers::pi * rng.uniform();

  const double total = spec.video_duration_s;
  const SmoothProcess visual_proc(d.visual, 0.5, 3.0, rng);
  const SmoothProcess sync_proc(d.sync, 0.1, 0.8, rng);

  Tensor visual = visual_proc.sample(kVisualFps, frame_count(kVisualFps, total));
  for (std::size_t c = 0; c < n_clips; ++c) {
    const double cue = sign * spec.cue_strength + spec.cue_noise * rng.normal();
    out.clip_cues.push_back(cue);
    const double start = static_cast<double>(c) * spec.clip_duration_s;
    const double end = c + 1 == n_clips ? total : start + spec.clip_duration_s;
    for (std::size_t r = frame_index(kVisualFps, start); r < std::min(frame_index(kVisualFps, end), visual.rows()); ++r) {
      for (std::size_t j = 0; j < d.visual; ++j) visual.at(r, j) += cue * cue_dir[j];
    }
  }
  Tensor text = captions[rng.next_u32() % kCaptions];

  GlobalFeatureBundle& bundle = out.video.input.bundle;
  bundle.visual = make_stream(StreamKind::visual, std::move(visual));
  bundle.text = make_stream(StreamKind::text, std::move(text));
  auto envelope = [&](double t) {
    return 1.0 + spec.envelope_depth * std::sin(2.0 * std::numbers::pi * env_freq * t + env_phase);
  };
  // The envelope is visible in the local sync stream; only the level needs wider context.
  Tensor sync = sync_proc.sample(kSyncFps, frame_count(kSyncFps, total));
  for (std::size_t r = 0; r < sync.rows(); ++r) {
    const double e = envelope((static_cast<double>(r) + 0.5) / kSyncFps);
    for (std::size_t j = 0; j < d.sync; ++j) sync.at(r, j) += e * envelope_dir[j];
  }
  bundle.sync = make_stream(StreamKind::sync, std::move(sync));

  const std::size_t frames = frame_count(kLatentFps, total);
  Tensor latents({frames, d.latent});
  std::vector<double> s(d.sync);
  for (std::size_t k = 0; k < frames; ++k) {
    const double t = (static_cast<double>(k) + 0.5) / kLatentFps;
    const double e = envelope(t);
    for (std::size_t i = 0; i < d.sync; ++i) s[i] = sync_proc(i, t);
    for (std::size_t j = 0; j < d.latent; ++j) {
      double v = out.level * e * level_dir[j];
      for (std::size_t i = 0; i < d.sync; ++i) v += s[i] * texture_map.at(i, j);
      latents.at(k, j) = v;
    }
  }
  if (max_frame_jump(latents) > spec.max_jump) {
    throw NumericError("synthetic video " + std::to_string(index) + " violates the continuity bound");
  }

  LongFormInput& input = out.video.input;
  input.video_id = "video" + std::to_string(index);
  for (std::size_t c = 0; c < n_clips; ++c) {
    ClipInputs clip;
    clip.clip_id = "clip" + std::to_string(c);
    clip.window.start_s = static_cast<double>(c) * spec.clip_duration_s;
    clip.window.end_s = c + 1 == n_clips ? total : clip.window.start_s + spec.clip_duration_s;
    clip.visual = slice_stream(bundle.visual, clip.window.start_s, clip.window.end_s);
    clip.text = bundle.text;
    clip.sync = slice_stream(bundle.sync, clip.window.start_s, clip.window.end_s);
    Tensor target({clip.window.frame_count(), d.latent});
    const std::size_t first = clip.window.first_frame();
    for (std::size_t r = 0; r < target.rows(); ++r) {
      std::copy(latents.row(first + r).begin(), latents.row(first + r).end(), target.row(r).begin());
    }
    input.clips.push_back(std::move(clip));
    out.video.targets.push_back(std::move(target));
  }
  out.ground_truth.latents = std::move(latents);
  out.ground_truth.duration_s = total;
  return out;
}

}  // namespace lf
