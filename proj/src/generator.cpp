#include "longfoley/generator.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "longfoley/errors.hpp"
#include "longfoley/init.hpp"

namespace lf {

namespace {

constexpr double kNormEps = 1e-6;

std::string block_prefix(std::size_t l) { return "dit.block" + std::to_string(l); }

Var multi_head_attention(const Var& h, ParameterStore& p, const std::string& prefix, std::size_t heads) {
  Var q = apply_linear(h, p, prefix + ".q");
  Var k = apply_linear(h, p, prefix + ".k");
  Var v = apply_linear(h, p, prefix + ".v");
  const std::size_t dh = h.cols() / heads;
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t i = 0; i < heads; ++i) {
    outs.push_back(attention(slice_cols(q, i * dh, dh), slice_cols(k, i * dh, dh), slice_cols(v, i * dh, dh)));
  }
  Var joined = heads == 1 ? outs.front() : concat_cols(outs);
  return apply_linear(joined, p, prefix + ".o");
}

}  // namespace

void DiTConfig::validate(bool allow_empty) const {
  if (n_layers == 0 && !allow_empty) throw ConfigError("dit.n_layers must be >= 1");
  if (hidden_dim < 2 || hidden_dim % 2 != 0) throw ConfigError("dit.hidden_dim must be even and >= 2");
  if (n_heads < 1 || hidden_dim % n_heads != 0) {
    throw ConfigError("dit.hidden_dim " + std::to_string(hidden_dim) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (latent_dim < 1) throw ConfigError("dit.latent_dim must be >= 1");
  if (sampler_steps < 1) throw ConfigError("dit.sampler_steps must be >= 1");
}

void init_dit_params(ParameterStore& store, const DiTConfig& dit, const ConditioningConfig& cond, Philox& rng) {
  dit.validate(true);
  const std::size_t h = dit.hidden_dim;
  add_linear(store, "dit.in", dit.latent_dim, h, rng);
  add_linear(store, "dit.cond_in", cond.global_dim(), h, rng);
  add_linear(store, "dit.time_in", h, h, rng);
  for (std::size_t l = 0; l < dit.n_layers; ++l) {
    const std::string b = block_prefix(l);
    add_linear(store, b + ".mod", h, 6 * h, rng, 0.1);
    for (const char* m : {".attn.q", ".attn.k", ".attn.v", ".attn.o"}) add_linear(store, b + m, h, h, rng);
    add_linear(store, b + ".frame", cond.hidden_dim, h, rng);
    add_linear(store, b + ".mlp.up", h, 4 * h, rng);
    add_linear(store, b + ".mlp.down", 4 * h, h, rng);
  }
  add_linear(store, "dit.final.mod", h, 2 * h, rng, 0.1);
  add_linear(store, "dit.out", h, dit.latent_dim, rng);
}

Model make_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.cond.validate();
  cfg.dit.validate(true);
  Model m{cfg, {}, {}};
  Philox cond_rng(seed, "init/cond");
  init_conditioning_params(m.base, cfg.cond, cond_rng);
  Philox dit_rng(seed, "init/dit");
  init_dit_params(m.base, cfg.dit, cfg.cond, dit_rng);
  init_dual_adapters(m.adapters, cfg.cond, cfg.adapter_bottleneck, cfg.adapter_init, seed);
  return m;
}

Var dit_forward(const FlowState& state, const ClipConditions& c, ParameterStore& p, const DiTConfig& cfg) {
  const Var& x_t = state.x_t;
  if (x_t.cols() != cfg.latent_dim) {
    throw ShapeError("dit_forward: latent dim " + std::to_string(x_t.cols()) + " != " + std::to_string(cfg.latent_dim));
  }
  if (c.frame.length() != x_t.rows()) {
    throw ShapeError("dit_forward: c_f has " + std::to_string(c.frame.length()) + " tokens, latents have " +
                     std::to_string(x_t.rows()));
  }
  const std::size_t h = cfg.hidden_dim;
  Var x = apply_linear(x_t, p, "dit.in");
  Var temb = apply_linear(constant(timestamp_embed(1000.0 * state.t, h)), p, "dit.time_in");
  Var cvec = silu(add(apply_linear(c.global.vector, p, "dit.cond_in"), temb));

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string b = block_prefix(l);
    Var mod = apply_linear(cvec, p, b + ".mod");
    auto chunk = [&](std::size_t i) { return slice_cols(mod, i * h, h); };
    Var a = multi_head_attention(modulate(layer_norm(x, kNormEps), chunk(0), chunk(1)), p, b + ".attn", cfg.n_heads);
    x = add(x, mul_cols(a, chunk(2)));
    x = add(x, apply_linear(c.frame.tokens, p, b + ".frame"));
    Var m = modulate(layer_norm(x, kNormEps), chunk(3), chunk(4));
    m = apply_linear(gelu(apply_linear(m, p, b + ".mlp.up")), p, b + ".mlp.down");
    x = add(x, mul_cols(m, chunk(5)));
  }
  Var fmod = apply_linear(cvec, p, "dit.final.mod");
  Var y = modulate(layer_norm(x, kNormEps), slice_cols(fmod, 0, h), slice_cols(fmod, h, h));
  return apply_linear(y, p, "dit.out");
}

CfmDraw cfm_loss(const VelocityField& field, const Tensor& target, Philox& rng) {
  CfmDraw draw;
  draw.t = rng.uniform();
  draw.eps = Tensor(target.shape());
  for (double& v : draw.eps.data()) v = rng.normal();
  Tensor x_t(target.shape());
  Tensor velocity(target.shape());
  for (std::size_t i = 0; i < target.numel(); ++i) {
    x_t[i] = (1.0 - draw.t) * draw.eps[i] + draw.t * target[i];
    velocity[i] = target[i] - draw.eps[i];
  }
  Var pred = field(FlowState{draw.t, constant(std::move(x_t))});
  draw.loss = mse(pred, constant(std::move(velocity)));
  return draw;
}

Tensor sample_euler(const VelocityField& field, std::size_t frames, std::size_t latent_dim, std::size_t steps,
                    Philox& rng) {
  if (steps < 1) throw ContractError("sample_euler: steps must be >= 1");
  NoGradGuard no_grad;
  Tensor x({frames, latent_dim});
  for (double& v : x.data()) v = rng.normal();
  const double dt = 1.0 / static_cast<double>(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    Var v = field(FlowState{t, constant(x)});
    if (v.shape() != x.shape()) {
      throw ShapeError("sample_euler: velocity " + shape_str(v.shape()) + " != state " + shape_str(x.shape()));
    }
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] += dt * v.value()[i];
  }
  return x;
}

ClipConditions build_clip_conditions(Model& model, const ClipInputs& clip, const GlobalFeatureBundle* bundle) {
  const ConditioningConfig& cond = model.cfg.cond;
  const double t = cond.timestamp_mode == TimestampMode::video_absolute ? clip.window.start_s : 0.0;
  ClipConditions c{build_global_condition(clip.visual, clip.text, t, model.base, cond),
                   build_frame_condition(clip.sync, model.base, cond, clip.window)};
  if (bundle) {
    c.global = fuse_global(c.global, *bundle, model.adapters, model.base);
    c.frame = fuse_frame(c.frame, *bundle, model.adapters, model.base, clip.window);
  }
  return c;
}

LatentSequence sample_clip(Model& model, const std::string& video_id, const ClipInputs& clip,
                           const GlobalFeatureBundle* bundle, std::uint64_t seed) {
  NoGradGuard no_grad;
  const ClipConditions c = build_clip_conditions(model, clip, bundle);
  Philox rng(seed, "sample/" + video_id + "/" + clip.clip_id);
  auto field = [&](const FlowState& s) { return dit_forward(s, c, model.base, model.cfg.dit); };
  Tensor x = sample_euler(field, c.frame.length(), model.cfg.dit.latent_dim, model.cfg.dit.sampler_steps, rng);
  LatentSequence out;
  out.latents = std::move(x);
  out.duration_s = clip.window.duration();
  return out;
}

void check_contiguous(const LongFormInput& video, bool require_bundle) {
  if (video.clips.empty()) throw ContractError("video " + video.video_id + " has no clips");
  constexpr double tol = 1e-9;
  if (std::abs(video.clips.front().window.start_s) > tol) {
    throw ContractError("video " + video.video_id + ": first clip does not start at 0");
  }
  for (std::size_t i = 0; i < video.clips.size(); ++i) {
    const ClipWindow& w = video.clips[i].window;
    if (!(w.end_s > w.start_s)) throw ContractError("video " + video.video_id + ": clip " + std::to_string(i) + " is empty");
    if (i > 0 && std::abs(w.start_s - video.clips[i - 1].window.end_s) > tol) {
      std::ostringstream msg;
      msg << "video " << video.video_id << ": clip " << i << " starts at " << w.start_s << " s but clip " << i - 1
          << " ends at " << video.clips[i - 1].window.end_s << " s";
      throw ContractError(msg.str());
    }
  }
  if (require_bundle) {
    const double total = video.bundle.duration_s();
    if (std::abs(total - video.duration_s()) > 1.0 / kLatentFps) {
      std::ostringstream msg;
      msg << "video " << video.video_id << ": bundle spans " << total << " s, clips span " << video.duration_s() << " s";
      throw ContractError(msg.str());
    }
  }
}

namespace {

Concatenated generate(Model& model, const LongFormInput& video, std::uint64_t seed, std::size_t workers,
                      bool with_adapters) {
  check_contiguous(video, with_adapters);
  const GlobalFeatureBundle* bundle = with_adapters ? &video.bundle : nullptr;
  const std::size_t n = video.clips.size();
  std::vector<LatentSequence> parts(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        parts[i] = sample_clip(model, video.video_id, video.clips[i], bundle, seed);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(std::max<std::size_t>(workers, 1), n);
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return concat_clips(parts);
}

}  // namespace

Concatenated generate_long_form(Model& model, const LongFormInput& video, std::uint64_t seed, std::size_t workers) {
  return generate(model, video, seed, workers, true);
}

Concatenated generate_long_form_baseline(Model& model, const LongFormInput& video, std::uint64_t seed,
                                         std::size_t workers) {
  return generate(model, video, seed, workers, false);
}

std::string_view to_string(TrainMode mode) {
  return mode == TrainMode::finetune_all ? "finetune_all" : "adapters_only";
}

TrainMode train_mode_from_string(std::string_view name) {
  if (name == "finetune_all") return TrainMode::finetune_all;
  if (name == "adapters_only") return TrainMode::adapters_only;
  throw ConfigError("unknown training mode '" + std::string(name) + "'");
}

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd_momentum"; }

OptimizerKind optimizer_kind_from_string(std::string_view name) {
  if (name == "sgd_momentum") return OptimizerKind::sgd_momentum;
  if (name == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

namespace {

struct ExampleRef {
  std::size_t video;
  std::size_t clip;
};

std::vector<ExampleRef> enumerate_examples(const std::vector<TrainingVideo>& data) {
  std::vector<ExampleRef> refs;
  for (std::size_t v = 0; v < data.size(); ++v) {
    if (data[v].targets.size() != data[v].input.clips.size()) {
      throw ContractError("training video " + data[v].input.video_id + ": " + std::to_string(data[v].targets.size()) +
                          " targets for " + std::to_string(data[v].input.clips.size()) + " clips");
    }
    for (std::size_t c = 0; c < data[v].targets.size(); ++c) refs.push_back({v, c});
  }
  if (refs.empty()) throw ContractError("train: dataset is empty");
  return refs;
}

Var example_loss(Model& model, const TrainingVideo& video, std::size_t clip, bool with_adapters, Philox& noise) {
  const ClipConditions c =
      build_clip_conditions(model, video.input.clips[clip], with_adapters ? &video.input.bundle : nullptr);
  auto field = [&](const FlowState& s) { return dit_forward(s, c, model.base, model.cfg.dit); };
  return cfm_loss(field, video.targets[clip], noise).loss;
}

void write_snapshot(const std::filesystem::path& path, Model& model, std::size_t step, double loss, double lr,
                    TrainMode mode) {
  using nlohmann::json;
  json norms = json::object();
  json nonfinite = json::array();
  for (auto* store : {&model.base, &model.adapters}) {
    for (const auto& [name, p] : *store) {
      double sq = 0.0;
      for (double v : p.value.data()) sq += v * v;
      norms[name] = std::isfinite(sq) ? json(std::sqrt(sq)) : json("non-finite");
      if (!p.value.all_finite() || (!p.grad.empty() && !p.grad.all_finite())) nonfinite.push_back(name);
    }
  }
  json snap{{"step", step},
            {"loss", std::isfinite(loss) ? json(loss) : json(std::to_string(loss))},
            {"lr", lr},
            {"mode", std::string(to_string(mode))},
            {"nonfinite_parameters", nonfinite},
            {"parameter_norms", norms}};
  std::ofstream f(path, std::ios::trunc);
  if (f) f << snap.dump(2) << '\n';
}

}  // namespace

std::vector<TrainLogEntry> train(Model& model, const std::vector<TrainingVideo>& data, const TrainOptions& options) {
  const auto refs = enumerate_examples(data);
  const OptimizerSettings& opt = options.opt;
  if (opt.batch_size < 1) throw ConfigError("optimizer.batch_size must be >= 1");
  if (!(opt.lr >= 0.0) || !(opt.momentum >= 0.0) || !(opt.clip_norm > 0.0)) {
    throw ConfigError("optimizer: lr and momentum must be >= 0 and clip_norm > 0");
  }
  if (opt.kind == OptimizerKind::adam && (!(opt.momentum < 1.0) || !(opt.adam_beta2 >= 0.0 && opt.adam_beta2 < 1.0))) {
    throw ConfigError("optimizer: adam decay rates must lie in [0, 1)");
  }
  const bool with_adapters = options.mode == TrainMode::adapters_only;
  model.base.set_trainable(!with_adapters || opt.unfreeze_base);
  model.adapters.set_trainable(with_adapters);

  // First-moment (velocity) and second-moment buffers per trainable parameter.
  struct Slot {
    Parameter* param;
    Tensor m, v;
  };
  std::vector<Slot> slots;
  for (auto* store : {&model.base, &model.adapters}) {
    for (auto& [name, p] : *store) {
      if (p.trainable) slots.push_back({&p, Tensor(p.value.shape()), Tensor(p.value.shape())});
    }
  }
  const bool adam = opt.kind == OptimizerKind::adam;

  Philox pick(options.seed, "train/batch");
  Philox noise(options.seed, "train/noise");
  std::vector<TrainLogEntry> log;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t step = 1; step <= opt.steps; ++step) {
    model.base.zero_grad();
    model.adapters.zero_grad();
    Var total;
    for (std::size_t b = 0; b < opt.batch_size; ++b) {
      const ExampleRef& ex = refs[pick.next_u64() % refs.size()];
      Var l = example_loss(model, data[ex.video], ex.clip, with_adapters, noise);
      total = total.defined() ? add(total, l) : l;
    }
    Var loss = scale(total, 1.0 / static_cast<double>(opt.batch_size));
    const double loss_value = loss.value()[0];
    if (!std::isfinite(loss_value)) {
      if (!options.snapshot_path.empty()) write_snapshot(options.snapshot_path, model, step, loss_value, opt.lr, options.mode);
      throw NumericError("non-finite loss at step " + std::to_string(step) +
                         (options.snapshot_path.empty() ? "" : "; snapshot at " + options.snapshot_path.string()));
    }
    backward(loss);

    double sq = 0.0;
    for (const Slot& s : slots) {
      for (double g : s.param->grad.data()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) {
      if (!options.snapshot_path.empty()) write_snapshot(options.snapshot_path, model, step, loss_value, opt.lr, options.mode);
      throw NumericError("non-finite gradient norm at step " + std::to_string(step));
    }
    const double factor = norm > opt.clip_norm ? opt.clip_norm / norm : 1.0;
    const double bias1 = 1.0 - std::pow(opt.momentum, static_cast<double>(step));
    const double bias2 = 1.0 - std::pow(opt.adam_beta2, static_cast<double>(step));
    for (Slot& s : slots) {
      Parameter& p = *s.param;
      for (std::size_t i = 0; i < s.m.numel(); ++i) {
        const double g = factor * p.grad[i];
        if (adam) {
          s.m[i] = opt.momentum * s.m[i] + (1.0 - opt.momentum) * g;
          s.v[i] = opt.adam_beta2 * s.v[i] + (1.0 - opt.adam_beta2) * g * g;
          p.value[i] -= opt.lr * (s.m[i] / bias1) / (std::sqrt(s.v[i] / bias2) + opt.adam_eps);
        } else {
          s.m[i] = opt.momentum * s.m[i] + g;
          p.value[i] -= opt.lr * s.m[i];
        }
      }
    }

    const double wall =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    log.push_back({step, loss_value, opt.lr, wall});
    if (options.on_step) options.on_step(log.back());
  }
  return log;
}

double evaluate_loss(Model& model, const std::vector<TrainingVideo>& data, TrainMode mode, std::uint64_t seed,
                     std::size_t draws) {
  const auto refs = enumerate_examples(data);
  if (draws < 1) throw ContractError("evaluate_loss: draws must be >= 1");
  NoGradGuard no_grad;
  Philox rng(seed, "eval");
  double total = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    const ExampleRef& ex = refs[rng.next_u64() % refs.size()];
    total += example_loss(model, data[ex.video], ex.clip, mode == TrainMode::adapters_only, rng).value()[0];
  }
  return total / static_cast<double>(draws);
}

}  // namespace lf
