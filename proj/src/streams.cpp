#include "longfoley/streams.hpp"

#include <cmath>
#include <sstream>

#include "longfoley/errors.hpp"

namespace lf {

std::string_view to_string(StreamKind kind) {
  switch (kind) {
    case StreamKind::visual: return "visual";
    case StreamKind::text: return "text";
    case StreamKind::sync: return "sync";
    case StreamKind::audio_latent: return "audio_latent";
  }
  return "unknown";
}

StreamKind stream_kind_from_string(std::string_view name) {
  if (name == "visual") return StreamKind::visual;
  if (name == "text") return StreamKind::text;
  if (name == "sync") return StreamKind::sync;
  if (name == "audio_latent") return StreamKind::audio_latent;
  throw FormatError("unknown stream kind '" + std::string(name) + "'");
}

double nominal_rate(StreamKind kind) {
  switch (kind) {
    case StreamKind::visual: return kVisualFps;
    case StreamKind::text: return 0.0;
    case StreamKind::sync: return kSyncFps;
    case StreamKind::audio_latent: return kLatentFps;
  }
  return 0.0;
}

std::size_t DimProfile::dim(StreamKind kind) const {
  switch (kind) {
    case StreamKind::visual: return visual;
    case StreamKind::text: return text;
    case StreamKind::sync: return sync;
    case StreamKind::audio_latent: return latent;
  }
  return 0;
}

double TokenStream::duration_s() const {
  if (rate_fps <= 0.0) return 0.0;
  return static_cast<double>(length()) / rate_fps;
}

TokenStream make_stream(StreamKind kind, Tensor tokens) {
  if (tokens.rank() != 2) throw ShapeError("token stream needs a [T x dim] tensor, got " + shape_str(tokens.shape()));
  return TokenStream{kind, nominal_rate(kind), std::move(tokens)};
}

std::size_t frame_count(double fps, double duration_s) {
  return static_cast<std::size_t>(std::llround(fps * duration_s));
}

std::size_t frame_index(double fps, double t_s) { return static_cast<std::size_t>(std::llround(fps * t_s)); }

std::vector<std::string> check_stream(const TokenStream& s, const DimProfile& dims, double duration_s) {
  std::vector<std::string> out;
  const std::string kind(to_string(s.kind));
  if (s.tokens.rank() != 2) {
    out.push_back(kind + " tokens must be [T x dim], got " + shape_str(s.tokens.shape()));
    return out;
  }
  const std::size_t want_dim = dims.dim(s.kind);
  if (s.dim() != want_dim) {
    out.push_back(kind + " dim " + std::to_string(s.dim()) + " != " + std::to_string(want_dim));
  }
  if (s.rate_fps != nominal_rate(s.kind)) {
    std::ostringstream msg;
    msg << kind << " rate " << s.rate_fps << " fps != " << nominal_rate(s.kind);
    out.push_back(msg.str());
  }
  if (s.kind == StreamKind::text) {
    if (s.length() != dims.text_tokens) {
      out.push_back("text length " + std::to_string(s.length()) + " != " + std::to_string(dims.text_tokens) +
                    " tokens");
    }
  } else if (duration_s > 0.0) {
    const std::size_t want = frame_count(nominal_rate(s.kind), duration_s);
    const auto diff = static_cast<long long>(s.length()) - static_cast<long long>(want);
    if (std::llabs(diff) > 1) {
      std::ostringstream msg;
      msg << kind << " length " << s.length() << " != expected " << want << " for " << duration_s << " s";
      out.push_back(msg.str());
    }
  }
  if (!s.tokens.all_finite()) out.push_back(kind + " tokens contain non-finite values");
  return out;
}

InterpPlan make_resample_plan(std::size_t source_len, double source_fps, double target_fps, std::size_t first,
                              std::size_t count, double time_offset_s) {
  if (!(source_fps > 0.0) || !(target_fps > 0.0)) {
    throw ContractError("resample: positionless stream (rates must be positive)");
  }
  if (source_len == 0) throw ContractError("resample: empty source stream");
  InterpPlan plan;
  plan.source_rows = source_len;
  plan.i0.reserve(count);
  plan.i1.reserve(count);
  plan.w0.reserve(count);
  plan.w1.reserve(count);
  const double ratio = source_fps / target_fps;
  const double last = static_cast<double>(source_len - 1);
  for (std::size_t k = 0; k < count; ++k) {
    double u = (static_cast<double>(first + k) + 0.5) * ratio - 0.5 - time_offset_s * source_fps;
    if (u < 0.0) u = 0.0;
    if (u > last) u = last;
    const auto lo = static_cast<std::size_t>(std::floor(u));
    const std::size_t hi = lo + 1 < source_len ? lo + 1 : lo;
    const double frac = u - static_cast<double>(lo);
    plan.i0.push_back(lo);
    plan.i1.push_back(hi);
    plan.w0.push_back(1.0 - frac);
    plan.w1.push_back(frac);
  }
  return plan;
}

InterpPlan make_resample_plan(std::size_t source_len, double source_fps, double target_fps) {
  if (!(source_fps > 0.0) || !(target_fps > 0.0)) {
    throw ContractError("resample: positionless stream (rates must be positive)");
  }
  const auto count =
      static_cast<std::size_t>(std::llround(target_fps * static_cast<double>(source_len) / source_fps));
  return make_resample_plan(source_len, source_fps, target_fps, 0, count);
}

Tensor apply_plan(const Tensor& x, const InterpPlan& plan) {
  if (x.rows() != plan.source_rows) {
    throw ShapeError("resample plan expects " + std::to_string(plan.source_rows) + " rows, got " +
                     std::to_string(x.rows()));
  }
  const std::size_t cols = x.cols();
  Tensor out({plan.size(), cols}, 0.0);
  for (std::size_t r = 0; r < plan.size(); ++r) {
    auto a = x.row(plan.i0[r]);
    auto b = x.row(plan.i1[r]);
    auto o = out.row(r);
    for (std::size_t j = 0; j < cols; ++j) o[j] = plan.w0[r] * a[j] + plan.w1[r] * b[j];
  }
  return out;
}

TokenStream resample_stream(const TokenStream& s, double target_fps) {
  if (s.kind == StreamKind::text || !(s.rate_fps > 0.0)) {
    throw ContractError("resample: positionless stream");
  }
  if (!(target_fps > 0.0)) throw ContractError("resample: target rate must be positive");
  const InterpPlan plan = make_resample_plan(s.length(), s.rate_fps, target_fps);
  if (plan.size() == 0) throw ContractError("resample: stream too short for target rate");
  return TokenStream{s.kind, target_fps, apply_plan(s.tokens, plan)};
}

LatentSequence LatentSequence::from_tensor(Tensor latents, double rate_fps) {
  LatentSequence seq;
  seq.duration_s = static_cast<double>(latents.rows()) / rate_fps;
  seq.rate_fps = rate_fps;
  seq.latents = std::move(latents);
  return seq;
}

Concatenated concat_clips(const std::vector<LatentSequence>& clips) {
  if (clips.empty()) throw ContractError("concat_clips: no clips");
  const std::size_t dim = clips.front().dim();
  const double rate = clips.front().rate_fps;
  std::size_t rows = 0;
  for (const auto& c : clips) {
    if (c.dim() != dim) {
      throw ShapeError("concat_clips: latent dim " + std::to_string(c.dim()) + " != " + std::to_string(dim));
    }
    if (c.rate_fps != rate) throw ShapeError("concat_clips: clips have different frame rates");
    rows += c.length();
  }
  std::vector<double> data;
  data.reserve(rows * dim);
  Concatenated out;
  double t = 0.0;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto& c = clips[i];
    data.insert(data.end(), c.latents.data().begin(), c.latents.data().end());
    t += c.duration_s > 0.0 ? c.duration_s : static_cast<double>(c.length()) / c.rate_fps;
    if (i + 1 < clips.size()) out.splices.times.push_back(t);
  }
  out.sequence.latents = Tensor({rows, dim}, std::move(data));
  out.sequence.rate_fps = rate;
  out.sequence.duration_s = t;
  return out;
}

}  // namespace lf
