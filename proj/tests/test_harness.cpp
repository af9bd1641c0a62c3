#include <cmath>
#include <fstream>

#include "cli.hpp"
#include "doctest.h"
#include "longfoley/errors.hpp"
#include "longfoley/harness.hpp"
#include "longfoley/log.hpp"
#include "longfoley/manifest.hpp"
#include "small_config.hpp"
#include "test_util.hpp"

using namespace lf;
using namespace lf::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "longfoley");
  if (args[1] != "config") args.push_back("--quiet");
  return run_cli(args);
}

fs::path write_config(const fs::path& dir, const ExperimentConfig& cfg) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << config_to_json(cfg).dump(2);
  return p;
}

json read_json_file(const fs::path& p) {
  std::ifstream f(p);
  return json::parse(f);
}

void write_json_file(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(); }

bool same_tree(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> fa, fb;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.is_regular_file()) fa.push_back(fs::relative(e.path(), a));
  }
  for (const auto& e : fs::recursive_directory_iterator(b)) {
    if (e.is_regular_file()) fb.push_back(fs::relative(e.path(), b));
  }
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  if (fa != fb) return false;
  for (const auto& f : fa) {
    if (read_bytes(a / f) != read_bytes(b / f)) return false;
  }
  return true;
}

// Minimal eval run directory holding only metric values.
fs::path fake_run(const fs::path& root, const std::string& name, const json& values) {
  const fs::path dir = root / name;
  fs::create_directories(dir);
  json metrics = json::object();
  for (auto it = values.begin(); it != values.end(); ++it) metrics[it.key()] = {{"value", it.value()}};
  write_json_file(dir / "report.json", {{"metrics", metrics}});
  return dir;
}

}  // namespace

TEST_CASE("config JSON round trips and rejects unknown keys") {
  const ExperimentConfig cfg = small_experiment_config();
  const json j = config_to_json(cfg);
  CHECK(config_to_json(config_from_json(j)) == j);
  CHECK(config_to_json(config_from_json(json::object())) == config_to_json(default_experiment_config()));
  json bad = j;
  bad["dataset"]["n_vidoes"] = 3;
  CHECK_THROWS_AS(config_from_json(bad), ConfigError);
  bad = j;
  bad["pretrain"]["lr"] = "fast";
  CHECK_THROWS_AS(config_from_json(bad), ConfigError);
  CHECK_NOTHROW(default_experiment_config().validate());
  ExperimentConfig mismatch = cfg;
  mismatch.model.dit.latent_dim = 5;
  CHECK_THROWS_AS(mismatch.validate(), ConfigError);
}

TEST_CASE("cli config handling and exit codes") {
  log::set_quiet(true);
  TempDir dir("cli-config");
  CHECK(cli({"config", "print-defaults"}) == kExitOk);
  json bad = config_to_json(small_experiment_config());
  bad["model"]["dit"]["n_layerz"] = 2;
  write_json_file(dir / "bad.json", bad);
  CHECK(cli({"synth", "--config", (dir / "bad.json").string(), "--out", (dir / "d").string()}) == kExitConfig);
  CHECK(cli({"synth", "--config", (dir / "missing.json").string()}) == kExitConfig);
  CHECK(cli({"frobnicate"}) == kExitConfig);
  CHECK(cli({"train", "--mode", "adapters_only"}) == kExitConfig);
  const fs::path cfg = write_config(dir.path(), small_experiment_config());
  CHECK(cli({"train", "--config", cfg.string(), "--dataset", (dir / "nowhere").string(), "--mode", "finetune_all",
             "--out", (dir / "ck").string()}) == kExitConfig);
  CHECK(cli({"train", "--config", cfg.string(), "--dataset", (dir / "nowhere").string(), "--mode", "sideways",
             "--out", (dir / "ck").string()}) == kExitConfig);
}

TEST_CASE("synth is deterministic and its dataset reloads bitwise") {
  log::set_quiet(true);
  TempDir dir("synth");
  const ExperimentConfig cfg = small_experiment_config();
  const fs::path c = write_config(dir.path(), cfg);
  REQUIRE(cli({"synth", "--config", c.string(), "--out", (dir / "a").string()}) == kExitOk);
  REQUIRE(cli({"synth", "--config", c.string(), "--out", (dir / "b").string()}) == kExitOk);
  CHECK(same_tree(dir / "a", dir / "b"));

  const auto made = make_dataset(cfg);
  const auto loaded = load_dataset(dir / "a");
  REQUIRE(loaded.size() == made.size());
  for (std::size_t i = 0; i < made.size(); ++i) {
    const auto& m = made[i];
    const auto& l = loaded[i];
    CHECK(l.train == m.train);
    CHECK(l.level == m.level);
    CHECK(l.video.input.video_id == m.video.input.video_id);
    CHECK(bitwise_equal(l.ground_truth.latents, m.ground_truth.latents));
    CHECK(bitwise_equal(l.video.input.bundle.visual.tokens, m.video.input.bundle.visual.tokens));
    CHECK(bitwise_equal(l.video.input.bundle.sync.tokens, m.video.input.bundle.sync.tokens));
    REQUIRE(l.video.input.clips.size() == m.video.input.clips.size());
    for (std::size_t k = 0; k < m.video.input.clips.size(); ++k) {
      const auto& lc = l.video.input.clips[k];
      const auto& mc = m.video.input.clips[k];
      CHECK(lc.window.start_s == mc.window.start_s);
      CHECK(lc.window.end_s == mc.window.end_s);
      CHECK(bitwise_equal(lc.visual.tokens, mc.visual.tokens));
      CHECK(bitwise_equal(lc.text.tokens, mc.text.tokens));
      CHECK(bitwise_equal(lc.sync.tokens, mc.sync.tokens));
      CHECK(bitwise_equal(l.video.targets[k], m.video.targets[k]));
    }
  }
  CHECK(split(loaded, true).size() == cfg.dataset.n_train);
  CHECK(split(loaded, false).size() == cfg.dataset.spec.n_videos - cfg.dataset.n_train);

  ExperimentConfig empty = cfg;
  empty.dataset.spec.n_videos = 0;
  empty.dataset.n_train = 0;
  cmd_synth(empty, dir / "empty");
  const json index = read_json_file(dir / "empty" / "index.json");
  CHECK(index.at("videos").empty());
  CHECK(load_dataset(dir / "empty").empty());
}

TEST_CASE("train, generate, eval and report through the cli") {
  log::set_quiet(true);
  TempDir dir("pipeline");
  const ExperimentConfig cfg = small_experiment_config();
  const std::string c = write_config(dir.path(), cfg).string();
  const std::string ds = (dir / "data").string();
  REQUIRE(cli({"synth", "--config", c, "--out", ds}) == kExitOk);
  REQUIRE(cli({"train", "--config", c, "--dataset", ds, "--mode", "finetune_all", "--out", (dir / "pre").string()}) ==
          kExitOk);
  REQUIRE(cli({"train", "--config", c, "--dataset", ds, "--mode", "adapters_only", "--init", (dir / "pre").string(),
               "--out", (dir / "ad").string()}) == kExitOk);

  // The log has one line per step with the required fields.
  std::ifstream log_file(dir / "ad" / "train_log.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(log_file, line); ++lines) {
    const json e = json::parse(line);
    CHECK(e.at("step") == lines + 1);
    CHECK(e.at("mode") == "adapters_only");
    CHECK(e.contains("loss"));
    CHECK(e.contains("lr"));
    CHECK(e.contains("wall_ms"));
  }
  CHECK(lines == cfg.adapters.steps);

  // adapters_only leaves every base tensor file untouched.
  CHECK(same_tree(dir / "pre" / "base", dir / "ad" / "base"));

  // The pretrained checkpoint still has zero adapters, so both modes agree bitwise.
  REQUIRE(cli({"generate", "--config", c, "--checkpoint", (dir / "pre").string(), "--dataset", ds, "--mode", "baseline",
               "--out", (dir / "g_base").string()}) == kExitOk);
  REQUIRE(cli({"generate", "--config", c, "--checkpoint", (dir / "pre").string(), "--dataset", ds, "--mode", "adapters",
               "--out", (dir / "g_zero").string()}) == kExitOk);
  CHECK(same_tree(dir / "g_base", dir / "g_zero"));
  REQUIRE(cli({"generate", "--config", c, "--checkpoint", (dir / "ad").string(), "--dataset", ds, "--mode", "adapters",
               "--out", (dir / "g_ad").string(), "--workers", "3"}) == kExitOk);
  REQUIRE(cli({"generate", "--config", c, "--checkpoint", (dir / "ad").string(), "--dataset", ds, "--mode", "adapters",
               "--out", (dir / "g_ad2").string()}) == kExitOk);
  CHECK(same_tree(dir / "g_ad", dir / "g_ad2"));

  const auto generated = read_generated(dir / "g_ad");
  REQUIRE(generated.size() == cfg.dataset.spec.n_videos - cfg.dataset.n_train);
  for (const auto& v : generated) {
    CHECK(v.output.splices.times.size() == cfg.dataset.spec.clips_per_video() - 1);
    CHECK(v.output.sequence.length() == frame_count(kLatentFps, cfg.dataset.spec.video_duration_s));
  }

  // Ground truth scored against itself.
  const fs::path gt = dir / "data" / "ground_truth";
  const MetricReport self = cmd_eval(EvalInputs{gt, gt, {}, {}, {}, {}, {}}, dir / "e_gt", 1);
  CHECK(*self.get("energy_delta_10ms_vs_gt") == 0.0);

  REQUIRE(cli({"eval", "--generated", (dir / "g_base").string(), "--gt", gt.string(), "--out",
               (dir / "base_run" / "eval").string()}) == kExitOk);
  REQUIRE(cli({"eval", "--generated", (dir / "g_ad").string(), "--gt", gt.string()}) == kExitOk);
  const json report = read_json_file(dir / "g_ad" / "eval" / "report.json");
  CHECK(report.at("metrics").at("fd").at("status") == "skipped");
  CHECK(report.at("metrics").at("ib").at("status") == "skipped");
  std::ifstream csv_file(dir / "g_ad" / "eval" / "report.csv");
  const std::string csv((std::istreambuf_iterator<char>(csv_file)), std::istreambuf_iterator<char>());
  const auto rows = rows_from_csv(csv);
  REQUIRE(!rows.empty());
  double mean = 0.0;
  for (const auto& r : rows) mean += r.delta;
  mean /= static_cast<double>(rows.size());
  CHECK(std::abs(mean - report.at("metrics").at("energy_delta_10ms").at("value").get<double>()) <= 1e-12);

  // Multi-worker eval matches a single worker.
  const MetricReport one = cmd_eval(EvalInputs{dir / "g_ad", gt, {}, {}, {}, {}, {}}, dir / "e1", 1);
  const MetricReport four = cmd_eval(EvalInputs{dir / "g_ad", gt, {}, {}, {}, {}, {}}, dir / "e4", 4);
  CHECK(*one.get("energy_delta_10ms") == *four.get("energy_delta_10ms"));
  CHECK(*one.get("energy_delta_10ms_vs_gt") == *four.get("energy_delta_10ms_vs_gt"));

  REQUIRE(cli({"report", (dir / "base_run" / "eval").string(), (dir / "g_ad" / "eval").string(), "--out",
               (dir / "cmp").string()}) == kExitOk);
  const json cmp = read_json_file(dir / "cmp" / "comparison.json");
  CHECK(cmp.at("reference") == "base_run");
  CHECK(cmp.at("metrics").at(0).at("runs").at(1).at("run") == "g_ad");
}

TEST_CASE("checkpoint shape mismatches name the tensor") {
  log::set_quiet(true);
  TempDir dir("ckpt");
  const ExperimentConfig cfg = small_experiment_config();
  const std::string c = write_config(dir.path(), cfg).string();
  REQUIRE(cli({"synth", "--config", c, "--out", (dir / "data").string()}) == kExitOk);
  save_checkpoint(dir / "ck", make_model(cfg.model, 1));
  ExperimentConfig wider = cfg;
  wider.model.adapter_bottleneck = 6;
  const std::string w = (dir / "wide.json").string();
  write_json_file(w, config_to_json(wider));
  CHECK(cli({"generate", "--config", w, "--checkpoint", (dir / "ck").string(), "--dataset", (dir / "data").string(),
             "--mode", "adapters", "--out", (dir / "g").string()}) == kExitData);
  try {
    load_checkpoint(dir / "ck", wider);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("h_global.down") != std::string::npos);
  }
  CHECK(cli({"generate", "--config", c, "--checkpoint", (dir / "nope").string(), "--dataset", (dir / "data").string(),
             "--mode", "adapters", "--out", (dir / "g").string()}) == kExitData);
}

TEST_CASE("a non-finite loss exits with the numeric code and leaves a snapshot") {
  log::set_quiet(true);
  TempDir dir("nan-cli");
  const ExperimentConfig cfg = small_experiment_config();
  const std::string c = write_config(dir.path(), cfg).string();
  REQUIRE(cli({"synth", "--config", c, "--out", (dir / "data").string()}) == kExitOk);
  Model model = make_model(cfg.model, 0);
  model.base.at("dit.out.b").value[0] = std::nan("");
  save_checkpoint(dir / "poisoned", model);
  CHECK(cli({"train", "--config", c, "--dataset", (dir / "data").string(), "--mode", "adapters_only", "--init",
             (dir / "poisoned").string(), "--out", (dir / "t").string()}) == kExitNumeric);
  CHECK(fs::exists(dir / "t" / "nan_snapshot.json"));
}

TEST_CASE("percent deltas and the comparison table") {
  CHECK(*percent_delta(0.3013, 0.1349) == doctest::Approx(-55.2273).epsilon(1e-5));
  CHECK(*percent_delta(2.0, 2.0) == 0.0);
  CHECK_FALSE(percent_delta(0.0, 1.0).has_value());
  CHECK(lower_is_better("fd"));
  CHECK_FALSE(lower_is_better("is"));

  TempDir dir("report");
  const fs::path a = fake_run(dir.path(), "old", {{"energy_delta_10ms", 0.3013}, {"kl", 0.0}, {"is", 2.0}});
  const fs::path b = fake_run(dir.path(), "new", {{"energy_delta_10ms", 0.1349}, {"kl", 0.5}, {"is", 2.5}});
  const json cmp = cmd_report({a, b}, dir / "out");
  std::ifstream f(dir / "out" / "comparison.csv");
  const std::string csv((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  CHECK(csv.rfind("metric,run,value,delta_pct,improved\r\n", 0) == 0);
  CHECK(csv.find("energy_delta_10ms,new,0.1349,-55.23,true\r\n") != std::string::npos);
  CHECK(csv.find("kl,new,0.5,n/a,false\r\n") != std::string::npos);
  CHECK(csv.find("is,new,2.5,25.00,true\r\n") != std::string::npos);

  const json same = cmd_report({a, a}, dir / "same");
  for (const auto& m : same.at("metrics")) {
    const json& cell = m.at("runs").at(1);
    if (cell.at("delta_pct").is_number()) CHECK(cell.at("delta_pct").get<double>() == 0.0);
  }
  CHECK_THROWS_AS(cmd_report({}, dir / "none"), ConfigError);
}
