#include "cli.hpp"

#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "longfoley/errors.hpp"
#include "longfoley/harness.hpp"
#include "longfoley/log.hpp"

namespace lf {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t workers = 1;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config JSON (defaults when omitted)");
  cmd->add_option("--seed", c.seed, "override the config seed");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--workers", c.workers, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_flag("--quiet", c.quiet, "suppress progress output");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? default_experiment_config() : load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

fs::path out_dir(const Common& c, const ExperimentConfig& cfg, const char* sub) {
  return c.out.empty() ? cfg.out_dir / sub : fs::path(c.out);
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Long-form video-to-audio toy harness"};
  app.require_subcommand(1);

  Common common;
  std::string dataset, checkpoint, init, mode;
  EvalInputs eval_in;
  std::string generated, gt, gen_emb, ref_emb, gen_logits, ref_logits, video_emb;
  std::vector<std::string> runs;

  auto* synth = app.add_subcommand("synth", "write the synthetic dataset");
  add_common(synth, common);

  auto* train = app.add_subcommand("train", "train a checkpoint");
  add_common(train, common);
  train->add_option("--dataset", dataset, "dataset directory")->required();
  train->add_option("--mode", mode, "finetune_all or adapters_only")->required();
  train->add_option("--init", init, "checkpoint to start from");

  auto* generate = app.add_subcommand("generate", "generate latents for the test split");
  add_common(generate, common);
  generate->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  generate->add_option("--dataset", dataset, "dataset directory")->required();
  generate->add_option("--mode", mode, "baseline or adapters")->required();

  auto* eval = app.add_subcommand("eval", "score a generated run against ground truth");
  add_common(eval, common);
  eval->add_option("--generated", generated, "generated run directory")->required();
  eval->add_option("--gt", gt, "ground-truth run directory")->required();
  eval->add_option("--gen-embeddings", gen_emb, "LDT1 embeddings of the generated audio");
  eval->add_option("--ref-embeddings", ref_emb, "LDT1 embeddings of the reference audio");
  eval->add_option("--gen-logits", gen_logits, "LDT1 classifier logits of the generated audio");
  eval->add_option("--ref-logits", ref_logits, "LDT1 classifier logits of the reference audio");
  eval->add_option("--video-embeddings", video_emb, "LDT1 video embeddings paired with --gen-embeddings");

  auto* report = app.add_subcommand("report", "compare eval runs; deltas are relative to the first");
  add_common(report, common);
  report->add_option("runs", runs, "eval run directories")->required();

  auto* config = app.add_subcommand("config", "inspect configuration");
  config->require_subcommand(1);
  auto* defaults = config->add_subcommand("print-defaults", "print the default config JSON");

  std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  log::set_quiet(common.quiet);

  try {
    if (defaults->parsed()) {
      std::cout << config_to_json(default_experiment_config()).dump(2) << "\n";
      return kExitOk;
    }
    if (synth->parsed()) {
      const ExperimentConfig cfg = resolve(common);
      cmd_synth(cfg, out_dir(common, cfg, "dataset"));
    } else if (train->parsed()) {
      const ExperimentConfig cfg = resolve(common);
      TrainMode m;
      try {
        m = train_mode_from_string(mode);
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
      cmd_train(cfg, dataset, m, init.empty() ? std::nullopt : std::optional<fs::path>(init),
                out_dir(common, cfg, to_string(m).data()));
    } else if (generate->parsed()) {
      const ExperimentConfig cfg = resolve(common);
      const GenerateMode m = generate_mode_from_string(mode);
      cmd_generate(cfg, checkpoint, dataset, m, out_dir(common, cfg, to_string(m).data()), common.workers);
    } else if (eval->parsed()) {
      eval_in.generated = generated;
      eval_in.ground_truth = gt;
      auto opt = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<fs::path>(s); };
      eval_in.gen_embeddings = opt(gen_emb);
      eval_in.ref_embeddings = opt(ref_emb);
      eval_in.gen_logits = opt(gen_logits);
      eval_in.ref_logits = opt(ref_logits);
      eval_in.video_embeddings = opt(video_emb);
      const fs::path out = common.out.empty() ? fs::path(generated) / "eval" : fs::path(common.out);
      const MetricReport r = cmd_eval(eval_in, out, common.workers);
      for (const auto& m : r.metrics) {
        log::info(m.name + ": " + (m.value ? std::to_string(*m.value) : "skipped"));
      }
    } else if (report->parsed()) {
      std::vector<fs::path> dirs(runs.begin(), runs.end());
      cmd_report(dirs, common.out.empty() ? fs::path("report") : fs::path(common.out));
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace lf
