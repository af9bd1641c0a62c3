#include "longfoley/harness.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "longfoley/checkpoint.hpp"
#include "longfoley/errors.hpp"
#include "longfoley/log.hpp"
#include "longfoley/manifest.hpp"
#include "longfoley/tensor_file.hpp"

namespace lf {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kDatasetFormat = "longfoley-dataset/1";
constexpr const char* kRunFormat = "longfoley-run/1";
constexpr std::size_t kEvalDraws = 64;

// Reads an object field by field and rejects keys nobody asked for.
class ConfigReader {
 public:
  ConfigReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename T>
  void take(const char* key, T& dst) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      dst = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path_ + "." + key + " has the wrong type");
    }
  }

  void take_u64(const char* key, std::uint64_t& dst) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(path_ + "." + key + " must be a non-negative integer");
    dst = v.get<std::uint64_t>();
  }

  void take_size(const char* key, std::size_t& dst) {
    std::uint64_t v = dst;
    take_u64(key, v);
    dst = static_cast<std::size_t>(v);
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key " + path_ + "." + it.key());
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json optimizer_to_json(const OptimizerSettings& o) {
  return {{"kind", std::string(to_string(o.kind))},
          {"lr", o.lr},
          {"momentum", o.momentum},
          {"adam_beta2", o.adam_beta2},
          {"adam_eps", o.adam_eps},
          {"clip_norm", o.clip_norm},
          {"steps", o.steps},
          {"batch_size", o.batch_size},
          {"unfreeze_base", o.unfreeze_base}};
}

void optimizer_from_json(const json& j, const std::string& path, OptimizerSettings& o) {
  ConfigReader r(j, path);
  std::string kind(to_string(o.kind));
  r.take("kind", kind);
  try {
    o.kind = optimizer_kind_from_string(kind);
  } catch (const Error& e) {
    throw ConfigError(path + ".kind: " + e.what());
  }
  r.take("lr", o.lr);
  r.take("momentum", o.momentum);
  r.take("adam_beta2", o.adam_beta2);
  r.take("adam_eps", o.adam_eps);
  r.take("clip_norm", o.clip_norm);
  r.take_size("steps", o.steps);
  r.take_size("batch_size", o.batch_size);
  r.take("unfreeze_base", o.unfreeze_base);
  r.finish();
}

void validate_optimizer(const OptimizerSettings& o, const std::string& path) {
  if (!std::isfinite(o.lr) || o.lr < 0.0) throw ConfigError(path + ".lr must be finite and >= 0");
  if (!(o.momentum >= 0.0 && o.momentum < 1.0)) throw ConfigError(path + ".momentum must lie in [0, 1)");
  if (!(o.adam_beta2 >= 0.0 && o.adam_beta2 < 1.0)) throw ConfigError(path + ".adam_beta2 must lie in [0, 1)");
  if (!(o.adam_eps > 0.0)) throw ConfigError(path + ".adam_eps must be positive");
  if (!(o.clip_norm > 0.0)) throw ConfigError(path + ".clip_norm must be positive");
  if (o.batch_size < 1) throw ConfigError(path + ".batch_size must be >= 1");
}

std::string_view to_string(TimestampMode m) { return m == TimestampMode::video_absolute ? "video_absolute" : "clip_relative"; }

TimestampMode timestamp_mode_from_string(const std::string& s) {
  if (s == "video_absolute") return TimestampMode::video_absolute;
  if (s == "clip_relative") return TimestampMode::clip_relative;
  throw ConfigError("model.conditioning.timestamp_mode must be video_absolute or clip_relative, got '" + s + "'");
}

std::string_view to_string(AdapterInit i) { return i == AdapterInit::zero_out ? "zero_out" : "random"; }

AdapterInit adapter_init_from_string(const std::string& s) {
  if (s == "zero_out") return AdapterInit::zero_out;
  if (s == "random") return AdapterInit::random;
  throw ConfigError("model.adapter.init must be zero_out or random, got '" + s + "'");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string() + (ec ? ": " + ec.message() : ""));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": invalid JSON: " + e.what());
  }
}

template <typename T>
T field(const json& j, const char* key, const fs::path& file) {
  if (!j.contains(key)) throw FormatError(file.string() + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw FormatError(file.string() + ": field '" + key + "' has the wrong type");
  }
}

void save_stream(const fs::path& dir, const std::string& file, const Tensor& t) {
  save_tensor_file(dir / file, t, Dtype::f64);
}

SplicePoints splices_of(const LongFormInput& input) {
  SplicePoints sp;
  for (std::size_t i = 1; i < input.clips.size(); ++i) sp.times.push_back(input.clips[i].window.start_s);
  return sp;
}

// Runs fn(i) for i in [0, n) on up to `workers` threads.
template <typename Fn>
void fan_out(std::size_t n, std::size_t workers, Fn fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
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
}

// The eval command defaults to <run>/eval, so name such directories after the run.
std::string run_name(const fs::path& p) {
  const fs::path clean = p.has_filename() ? p : p.parent_path();
  if (clean.filename() == "eval" && clean.has_parent_path()) return clean.parent_path().filename().string();
  return clean.filename().string();
}

std::string fmt_pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fmt_value(double v) {
  // Shortest text that parses back to the same double.
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

ExperimentConfig default_experiment_config() {
  ExperimentConfig cfg;
  const DimProfile dims = cfg.dataset.spec.dims;
  cfg.model.cond.hidden_dim = 32;
  cfg.model.cond.timestamp_dim = 32;
  cfg.model.cond.dims = dims;
  cfg.model.dit.n_layers = 2;
  cfg.model.dit.hidden_dim = 32;
  cfg.model.dit.n_heads = 2;
  cfg.model.dit.latent_dim = dims.latent;
  cfg.model.dit.sampler_steps = 10;
  cfg.model.adapter_bottleneck = 8;

  cfg.pretrain.kind = OptimizerKind::adam;
  cfg.pretrain.lr = 0.003;
  cfg.pretrain.steps = 2000;
  cfg.pretrain.batch_size = 8;

  cfg.adapters.kind = OptimizerKind::adam;
  cfg.adapters.lr = 0.01;
  cfg.adapters.steps = 500;
  cfg.adapters.batch_size = 8;
  return cfg;
}

void ExperimentConfig::validate() const {
  dataset.spec.validate();
  if (dataset.n_train > dataset.spec.n_videos) throw ConfigError("dataset.n_train exceeds dataset.n_videos");
  if (!(model.cond.dims == dataset.spec.dims)) throw ConfigError("model conditioning dims differ from dataset.toy_dims");
  if (model.dit.latent_dim != dataset.spec.dims.latent) {
    throw ConfigError("model.dit.latent_dim " + std::to_string(model.dit.latent_dim) + " != dataset.toy_dims.latent " +
                      std::to_string(dataset.spec.dims.latent));
  }
  try {
    model.cond.validate();
    model.dit.validate();
    global_adapter_config(model.cond, model.adapter_bottleneck, model.adapter_init).validate();
    sync_adapter_config(model.cond, model.adapter_bottleneck, model.adapter_init).validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  validate_optimizer(pretrain, "pretrain");
  validate_optimizer(adapters, "adapters");
}

json config_to_json(const ExperimentConfig& cfg) {
  const SyntheticSpec& s = cfg.dataset.spec;
  const ModelConfig& m = cfg.model;
  json dataset = {{"seed", cfg.dataset.seed},
                  {"n_videos", s.n_videos},
                  {"n_train", cfg.dataset.n_train},
                  {"video_duration_s", s.video_duration_s},
                  {"clip_duration_s", s.clip_duration_s},
                  {"toy_dims", dims_to_json(s.dims)},
                  {"level_low", s.level_low},
                  {"level_high", s.level_high},
                  {"cue_strength", s.cue_strength},
                  {"cue_noise", s.cue_noise},
                  {"envelope_depth", s.envelope_depth},
                  {"texture_scale", s.texture_scale},
                  {"max_jump", s.max_jump}};
  json model = {{"conditioning",
                 {{"hidden_dim", m.cond.hidden_dim},
                  {"timestamp_dim", m.cond.timestamp_dim},
                  {"timestamp_mode", std::string(to_string(m.cond.timestamp_mode))}}},
                {"dit",
                 {{"n_layers", m.dit.n_layers},
                  {"hidden_dim", m.dit.hidden_dim},
                  {"n_heads", m.dit.n_heads},
                  {"latent_dim", m.dit.latent_dim},
                  {"sampler_steps", m.dit.sampler_steps}}},
                {"adapter", {{"bottleneck_dim", m.adapter_bottleneck}, {"init", std::string(to_string(m.adapter_init))}}}};
  return {{"seed", cfg.seed},
          {"init_seed", cfg.init_seed},
          {"out_dir", cfg.out_dir.string()},
          {"dataset", dataset},
          {"model", model},
          {"pretrain", optimizer_to_json(cfg.pretrain)},
          {"adapters", optimizer_to_json(cfg.adapters)}};
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg = default_experiment_config();
  ConfigReader top(j, "config");
  top.take_u64("seed", cfg.seed);
  top.take_u64("init_seed", cfg.init_seed);
  std::string out = cfg.out_dir.string();
  top.take("out_dir", out);
  cfg.out_dir = out;

  if (const json* d = top.child("dataset")) {
    ConfigReader r(*d, "dataset");
    SyntheticSpec& s = cfg.dataset.spec;
    r.take_u64("seed", cfg.dataset.seed);
    r.take_size("n_videos", s.n_videos);
    r.take_size("n_train", cfg.dataset.n_train);
    r.take("video_duration_s", s.video_duration_s);
    r.take("clip_duration_s", s.clip_duration_s);
    if (const json* dims = r.child("toy_dims")) {
      try {
        s.dims = dims_from_json(*dims);
      } catch (const Error& e) {
        throw ConfigError(std::string("dataset.") + e.what());
      }
    }
    r.take("level_low", s.level_low);
    r.take("level_high", s.level_high);
    r.take("cue_strength", s.cue_strength);
    r.take("cue_noise", s.cue_noise);
    r.take("envelope_depth", s.envelope_depth);
    r.take("texture_scale", s.texture_scale);
    r.take("max_jump", s.max_jump);
    r.finish();
  }
  cfg.model.cond.dims = cfg.dataset.spec.dims;

  if (const json* m = top.child("model")) {
    ConfigReader r(*m, "model");
    if (const json* c = r.child("conditioning")) {
      ConfigReader rc(*c, "model.conditioning");
      rc.take_size("hidden_dim", cfg.model.cond.hidden_dim);
      rc.take_size("timestamp_dim", cfg.model.cond.timestamp_dim);
      std::string mode(to_string(cfg.model.cond.timestamp_mode));
      rc.take("timestamp_mode", mode);
      cfg.model.cond.timestamp_mode = timestamp_mode_from_string(mode);
      rc.finish();
    }
    if (const json* dj = r.child("dit")) {
      ConfigReader rd(*dj, "model.dit");
      rd.take_size("n_layers", cfg.model.dit.n_layers);
      rd.take_size("hidden_dim", cfg.model.dit.hidden_dim);
      rd.take_size("n_heads", cfg.model.dit.n_heads);
      rd.take_size("latent_dim", cfg.model.dit.latent_dim);
      rd.take_size("sampler_steps", cfg.model.dit.sampler_steps);
      rd.finish();
    }
    if (const json* a = r.child("adapter")) {
      ConfigReader ra(*a, "model.adapter");
      ra.take_size("bottleneck_dim", cfg.model.adapter_bottleneck);
      std::string init(to_string(cfg.model.adapter_init));
      ra.take("init", init);
      cfg.model.adapter_init = adapter_init_from_string(init);
      ra.finish();
    }
    r.finish();
  }
  if (const json* p = top.child("pretrain")) optimizer_from_json(*p, "pretrain", cfg.pretrain);
  if (const json* a = top.child("adapters")) optimizer_from_json(*a, "adapters", cfg.adapters);
  top.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return config_from_json(j);
}

std::vector<DatasetVideo> make_dataset(const ExperimentConfig& cfg) {
  std::vector<DatasetVideo> out;
  for (std::size_t i = 0; i < cfg.dataset.spec.n_videos; ++i) {
    SyntheticVideo v = make_synthetic_video(cfg.dataset.spec, i, cfg.dataset.seed);
    out.push_back({std::move(v.video), std::move(v.ground_truth), i < cfg.dataset.n_train, v.level});
  }
  return out;
}

std::vector<TrainingVideo> split(const std::vector<DatasetVideo>& data, bool train) {
  std::vector<TrainingVideo> out;
  for (const auto& v : data) {
    if (v.train == train) out.push_back(v.video);
  }
  return out;
}

void write_dataset(const fs::path& dir, const ExperimentConfig& cfg, const std::vector<DatasetVideo>& data) {
  ensure_dir(dir);
  const DimProfile dims = cfg.dataset.spec.dims;
  json videos = json::array();
  std::vector<GeneratedVideo> truth;
  for (const auto& v : data) {
    const LongFormInput& in = v.video.input;
    const fs::path vdir = dir / in.video_id;
    ensure_dir(vdir);

    ClipManifest parent;
    parent.clip_id = in.video_id;
    parent.duration_s = v.ground_truth.duration_s;
    parent.splices = splices_of(in).times;
    parent.toy_dims = dims;
    parent.streams = {{StreamKind::visual, "visual.ldt"},
                      {StreamKind::text, "text.ldt"},
                      {StreamKind::sync, "sync.ldt"},
                      {StreamKind::audio_latent, "target.ldt"}};
    save_stream(vdir, "visual.ldt", in.bundle.visual.tokens);
    save_stream(vdir, "text.ldt", in.bundle.text.tokens);
    save_stream(vdir, "sync.ldt", in.bundle.sync.tokens);
    save_stream(vdir, "target.ldt", v.ground_truth.latents);
    write_manifest(vdir / "video.json", parent);

    json clips = json::array();
    for (std::size_t c = 0; c < in.clips.size(); ++c) {
      const ClipInputs& clip = in.clips[c];
      ClipManifest m;
      m.clip_id = clip.clip_id;
      m.parent_id = in.video_id;
      m.start_s = clip.window.start_s;
      m.duration_s = clip.window.duration();
      m.toy_dims = dims;
      const std::string stem = clip.clip_id + "_";
      m.streams = {{StreamKind::visual, stem + "visual.ldt"},
                   {StreamKind::text, stem + "text.ldt"},
                   {StreamKind::sync, stem + "sync.ldt"},
                   {StreamKind::audio_latent, stem + "target.ldt"}};
      save_stream(vdir, stem + "visual.ldt", clip.visual.tokens);
      save_stream(vdir, stem + "text.ldt", clip.text.tokens);
      save_stream(vdir, stem + "sync.ldt", clip.sync.tokens);
      save_stream(vdir, stem + "target.ldt", v.video.targets[c]);
      write_manifest(vdir / (clip.clip_id + ".json"), m);
      clips.push_back(in.video_id + "/" + clip.clip_id + ".json");
    }
    videos.push_back({{"video_id", in.video_id},
                      {"split", v.train ? "train" : "test"},
                      {"level", v.level},
                      {"manifest", in.video_id + "/video.json"},
                      {"clips", clips}});
    truth.push_back({in.video_id, {v.ground_truth, splices_of(in)}});
  }
  write_json(dir / "index.json", {{"format", kDatasetFormat},
                                  {"seed", cfg.dataset.seed},
                                  {"n_videos", data.size()},
                                  {"toy_dims", dims_to_json(dims)},
                                  {"videos", videos}});
  write_generated(dir / "ground_truth", truth);
}

std::vector<DatasetVideo> load_dataset(const fs::path& dir) {
  const fs::path index_path = dir / "index.json";
  if (!fs::exists(index_path)) throw ConfigError("no dataset at " + dir.string() + " (missing index.json)");
  const json index = read_json(index_path);
  if (field<std::string>(index, "format", index_path) != kDatasetFormat) {
    throw FormatError(index_path.string() + ": not a " + std::string(kDatasetFormat) + " index");
  }
  auto check = [](const ClipManifest& m) {
    const auto problems = validate_manifest(m);
    if (!problems.empty()) throw FormatError("manifest " + m.clip_id + ": " + problems.front());
  };
  std::vector<DatasetVideo> out;
  for (const json& entry : field<json>(index, "videos", index_path)) {
    DatasetVideo v;
    const std::string split_name = field<std::string>(entry, "split", index_path);
    if (split_name != "train" && split_name != "test") throw FormatError(index_path.string() + ": bad split '" + split_name + "'");
    v.train = split_name == "train";
    v.level = field<double>(entry, "level", index_path);

    const ClipManifest parent = read_manifest(dir / field<std::string>(entry, "manifest", index_path));
    check(parent);
    LongFormInput& in = v.video.input;
    in.video_id = parent.clip_id;
    in.bundle.visual = load_stream(parent, StreamKind::visual);
    in.bundle.text = load_stream(parent, StreamKind::text);
    in.bundle.sync = load_stream(parent, StreamKind::sync);
    v.ground_truth.latents = load_stream(parent, StreamKind::audio_latent).tokens;
    v.ground_truth.duration_s = parent.duration_s;

    for (const json& clip_file : field<json>(entry, "clips", index_path)) {
      const ClipManifest m = read_manifest(dir / clip_file.get<std::string>());
      check(m);
      if (!m.start_s || m.parent_id != in.video_id) throw FormatError("clip manifest " + m.clip_id + " lacks its parent span");
      ClipInputs clip;
      clip.clip_id = m.clip_id;
      clip.visual = load_stream(m, StreamKind::visual);
      clip.text = load_stream(m, StreamKind::text);
      clip.sync = load_stream(m, StreamKind::sync);
      clip.window = {*m.start_s, *m.start_s + m.duration_s};
      in.clips.push_back(std::move(clip));
      v.video.targets.push_back(load_stream(m, StreamKind::audio_latent).tokens);
    }
    out.push_back(std::move(v));
  }
  return out;
}

void save_checkpoint(const fs::path& dir, const Model& model) {
  ensure_dir(dir);
  save_store(dir / "base", model.base);
  save_store(dir / "adapters", model.adapters);
}

Model load_checkpoint(const fs::path& dir, const ExperimentConfig& cfg) {
  Model model = make_model(cfg.model, cfg.init_seed);
  load_store_into(dir / "base", model.base);
  load_store_into(dir / "adapters", model.adapters);
  return model;
}

void write_generated(const fs::path& dir, const std::vector<GeneratedVideo>& videos) {
  ensure_dir(dir);
  json list = json::array();
  for (const auto& v : videos) {
    const std::string latents = v.video_id + ".ldt";
    const std::string splices = v.video_id + ".splices.json";
    save_tensor_file(dir / latents, v.output.sequence.latents, Dtype::f64);
    write_json(dir / splices, {{"video_id", v.video_id},
                               {"duration_s", v.output.sequence.duration_s},
                               {"rate_fps", v.output.sequence.rate_fps},
                               {"splices", v.output.splices.times}});
    list.push_back({{"video_id", v.video_id}, {"latents", latents}, {"splices", splices}});
  }
  write_json(dir / "index.json", {{"format", kRunFormat}, {"videos", list}});
}

std::vector<GeneratedVideo> read_generated(const fs::path& dir) {
  const fs::path index_path = dir / "index.json";
  const json index = read_json(index_path);
  if (field<std::string>(index, "format", index_path) != kRunFormat) {
    throw FormatError(index_path.string() + ": not a " + std::string(kRunFormat) + " index");
  }
  std::vector<GeneratedVideo> out;
  for (const json& entry : field<json>(index, "videos", index_path)) {
    GeneratedVideo v;
    v.video_id = field<std::string>(entry, "video_id", index_path);
    const fs::path sp_path = dir / field<std::string>(entry, "splices", index_path);
    const json sp = read_json(sp_path);
    v.output.sequence.latents = load_tensor_file(dir / field<std::string>(entry, "latents", index_path));
    v.output.sequence.duration_s = field<double>(sp, "duration_s", sp_path);
    v.output.sequence.rate_fps = field<double>(sp, "rate_fps", sp_path);
    v.output.splices.times = field<std::vector<double>>(sp, "splices", sp_path);
    if (v.output.sequence.latents.rank() != 2) throw FormatError(sp_path.string() + ": latents must be [T x dim]");
    out.push_back(std::move(v));
  }
  return out;
}

std::string_view to_string(GenerateMode mode) { return mode == GenerateMode::baseline ? "baseline" : "adapters"; }

GenerateMode generate_mode_from_string(std::string_view name) {
  if (name == "baseline") return GenerateMode::baseline;
  if (name == "adapters") return GenerateMode::adapters;
  throw ConfigError("generate mode must be baseline or adapters, got '" + std::string(name) + "'");
}

void cmd_synth(const ExperimentConfig& cfg, const fs::path& out) {
  cfg.validate();
  const auto data = make_dataset(cfg);
  write_dataset(out, cfg, data);
  log::info("wrote " + std::to_string(data.size()) + " videos to " + out.string());
}

std::vector<TrainLogEntry> cmd_train(const ExperimentConfig& cfg, const fs::path& dataset, TrainMode mode,
                                     const std::optional<fs::path>& init, const fs::path& out) {
  cfg.validate();
  const auto data = load_dataset(dataset);
  const auto train_set = split(data, true);
  if (train_set.empty()) throw ConfigError("dataset " + dataset.string() + " has no training videos");
  Model model = init ? load_checkpoint(*init, cfg) : make_model(cfg.model, cfg.init_seed);
  ensure_dir(out);

  TrainOptions options;
  options.mode = mode;
  options.opt = mode == TrainMode::finetune_all ? cfg.pretrain : cfg.adapters;
  options.seed = mode == TrainMode::finetune_all ? cfg.init_seed : cfg.seed;
  options.snapshot_path = out / "nan_snapshot.json";
  const std::size_t every = std::max<std::size_t>(1, options.opt.steps / 10);
  options.on_step = [&](const TrainLogEntry& e) {
    if (e.step % every == 0) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "step %zu loss %.5f", e.step, e.loss);
      log::info(buf);
    }
  };
  const auto entries = train(model, train_set, options);

  std::string lines;
  for (const auto& e : entries) {
    lines += json{{"step", e.step}, {"mode", std::string(to_string(mode))}, {"loss", e.loss}, {"lr", e.lr}, {"wall_ms", e.wall_ms}}.dump() + "\n";
  }
  write_text(out / "train_log.jsonl", lines);
  save_checkpoint(out, model);
  return entries;
}

void cmd_generate(const ExperimentConfig& cfg, const fs::path& checkpoint, const fs::path& dataset, GenerateMode mode,
                  const fs::path& out, std::size_t workers) {
  cfg.validate();
  const auto data = load_dataset(dataset);
  Model model = load_checkpoint(checkpoint, cfg);
  std::vector<GeneratedVideo> videos;
  for (const auto& v : data) {
    if (v.train) continue;
    const LongFormInput& in = v.video.input;
    videos.push_back({in.video_id, mode == GenerateMode::adapters ? generate_long_form(model, in, cfg.seed, workers)
                                                                  : generate_long_form_baseline(model, in, cfg.seed, workers)});
  }
  write_generated(out, videos);
  log::info("generated " + std::to_string(videos.size()) + " videos (" + std::string(to_string(mode)) + ")");
}

bool lower_is_better(const std::string& metric) { return metric != "is" && metric != "ib"; }

std::optional<double> percent_delta(double old_value, double new_value) {
  if (old_value == 0.0) return std::nullopt;
  return (new_value - old_value) / old_value * 100.0;
}

MetricReport cmd_eval(const EvalInputs& in, const fs::path& out, std::size_t workers) {
  const auto gen = read_generated(in.generated);
  const auto gt = read_generated(in.ground_truth);
  if (gen.empty()) throw ContractError("no generated videos in " + in.generated.string());
  std::map<std::string, const GeneratedVideo*> truth;
  for (const auto& v : gt) truth[v.video_id] = &v;
  for (const auto& v : gen) {
    if (!truth.count(v.video_id)) throw FormatError("no ground truth for " + v.video_id + " in " + in.ground_truth.string());
  }

  struct PerVideo {
    EnergyDelta delta;
    double vs_gt = 0.0;
  };
  std::vector<PerVideo> per(gen.size());
  fan_out(gen.size(), workers, [&](std::size_t i) {
    const AudioBuffer g = latent_energy_signal(gen[i].output.sequence);
    const AudioBuffer t = latent_energy_signal(truth.at(gen[i].video_id)->output.sequence);
    per[i].delta = energy_delta_10ms(g, gen[i].output.splices);
    per[i].vs_gt = energy_delta_vs_gt(g, t, gen[i].output.splices);
  });

  MetricReport report;
  double vs_gt = 0.0;
  json videos = json::array();
  for (std::size_t i = 0; i < gen.size(); ++i) {
    report.rows.insert(report.rows.end(), per[i].delta.rows.begin(), per[i].delta.rows.end());
    vs_gt += per[i].vs_gt;
    videos.push_back({{"video_id", gen[i].video_id},
                      {"energy_delta_10ms", per[i].delta.average},
                      {"energy_delta_10ms_vs_gt", per[i].vs_gt}});
  }
  double pooled = 0.0;
  for (const auto& r : report.rows) pooled += r.delta;
  report.metrics.push_back({"energy_delta_10ms",
                            report.rows.empty() ? std::nullopt : std::optional<double>(pooled / report.rows.size()),
                            report.rows.empty() ? "no splice points" : ""});
  report.metrics.push_back({"energy_delta_10ms_vs_gt", vs_gt / static_cast<double>(gen.size()), ""});

  auto skipped = [&](const char* name, const char* what) { report.metrics.push_back({name, std::nullopt, what}); };
  if (in.gen_embeddings && in.ref_embeddings) {
    report.metrics.push_back({"fd", frechet_distance(load_embeddings(*in.gen_embeddings), load_embeddings(*in.ref_embeddings)), ""});
  } else {
    skipped("fd", "generated and reference embeddings not supplied");
  }
  if (in.gen_logits && in.ref_logits) {
    report.metrics.push_back({"kl", kl_paired(load_logits(*in.gen_logits), load_logits(*in.ref_logits)), ""});
  } else {
    skipped("kl", "generated and reference logits not supplied");
  }
  if (in.gen_logits) {
    report.metrics.push_back({"is", inception_score(load_logits(*in.gen_logits)), ""});
  } else {
    skipped("is", "generated logits not supplied");
  }
  if (in.gen_embeddings && in.video_embeddings) {
    report.metrics.push_back({"ib", ib_score(load_embeddings(*in.gen_embeddings), load_embeddings(*in.video_embeddings)), ""});
  } else {
    skipped("ib", "audio and video embeddings not supplied");
  }

  ensure_dir(out);
  json j = report_to_json(report);
  j["videos"] = videos;
  write_json(out / "report.json", j);
  write_text(out / "report.csv", report_to_csv(report));
  return report;
}

json cmd_report(const std::vector<fs::path>& runs, const fs::path& out) {
  if (runs.empty()) throw ConfigError("report needs at least one run directory");
  std::vector<std::string> names;
  std::vector<json> metrics;
  std::vector<std::string> order;
  for (const auto& run : runs) {
    const fs::path path = run / "report.json";
    const json r = read_json(path);
    const json m = field<json>(r, "metrics", path);
    if (!m.is_object()) throw FormatError(path.string() + ": metrics must be an object");
    for (auto it = m.begin(); it != m.end(); ++it) {
      if (std::find(order.begin(), order.end(), it.key()) == order.end()) order.push_back(it.key());
    }
    names.push_back(run_name(run));
    metrics.push_back(m);
  }

  auto value_of = [](const json& m, const std::string& name) -> std::optional<double> {
    if (!m.contains(name)) return std::nullopt;
    const json& v = m.at(name).at("value");
    if (!v.is_number()) return std::nullopt;
    return v.get<double>();
  };

  std::string csv = "metric,run,value,delta_pct,improved\r\n";
  json table = json::array();
  for (const auto& name : order) {
    json entry = {{"metric", name}, {"lower_is_better", lower_is_better(name)}, {"runs", json::array()}};
    const auto base = value_of(metrics[0], name);
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const auto v = value_of(metrics[i], name);
      json cell = {{"run", names[i]}, {"value", v ? json(*v) : json(nullptr)}};
      std::string delta_text, improved_text;
      if (i > 0 && v && base) {
        const auto d = percent_delta(*base, *v);
        const bool improved = lower_is_better(name) ? *v < *base : *v > *base;
        cell["delta_pct"] = d ? json(*d) : json("n/a");
        cell["improved"] = improved;
        delta_text = d ? fmt_pct(*d) : "n/a";
        improved_text = improved ? "true" : "false";
      }
      entry["runs"].push_back(cell);
      csv += name + "," + names[i] + "," + (v ? fmt_value(*v) : "skipped") + "," + delta_text + "," + improved_text + "\r\n";
    }
    table.push_back(entry);
  }
  const json result = {{"reference", names[0]}, {"metrics", table}};
  ensure_dir(out);
  write_json(out / "comparison.json", result);
  write_text(out / "comparison.csv", csv);
  return result;
}

Model pretrain_base(const ExperimentConfig& cfg, const std::vector<DatasetVideo>& data) {
  Model model = make_model(cfg.model, cfg.init_seed);
  TrainOptions options;
  options.mode = TrainMode::finetune_all;
  options.opt = cfg.pretrain;
  options.seed = cfg.init_seed;
  train(model, split(data, true), options);
  return model;
}

ConsistencyOutcome run_consistency_seed(const Model& pretrained, const ExperimentConfig& cfg,
                                        const std::vector<DatasetVideo>& data, std::uint64_t seed, std::size_t workers) {
  Model model = pretrained;
  const auto train_set = split(data, true);
  ConsistencyOutcome out;
  out.seed = seed;
  const double before = evaluate_loss(model, train_set, TrainMode::adapters_only, seed, kEvalDraws);
  TrainOptions options;
  options.mode = TrainMode::adapters_only;
  options.opt = cfg.adapters;
  options.seed = seed;
  train(model, train_set, options);
  out.loss_ratio = evaluate_loss(model, train_set, TrainMode::adapters_only, seed, kEvalDraws) / before;

  std::size_t n = 0;
  for (const auto& v : data) {
    if (v.train) continue;
    const Concatenated b = generate_long_form_baseline(model, v.video.input, seed, workers);
    const Concatenated a = generate_long_form(model, v.video.input, seed, workers);
    const AudioBuffer gt = latent_energy_signal(v.ground_truth);
    const AudioBuffer eb = latent_energy_signal(b.sequence);
    const AudioBuffer ea = latent_energy_signal(a.sequence);
    out.baseline_delta += energy_delta_10ms(eb, b.splices).average;
    out.adapters_delta += energy_delta_10ms(ea, a.splices).average;
    out.gt_delta += energy_delta_10ms(gt, b.splices).average;
    out.baseline_vs_gt += energy_delta_vs_gt(eb, gt, b.splices);
    out.adapters_vs_gt += energy_delta_vs_gt(ea, gt, a.splices);
    ++n;
  }
  if (n == 0) throw ContractError("consistency experiment needs test videos");
  for (double* x : {&out.baseline_delta, &out.adapters_delta, &out.gt_delta, &out.baseline_vs_gt, &out.adapters_vs_gt}) {
    *x /= static_cast<double>(n);
  }
  return out;
}

}  // namespace lf
