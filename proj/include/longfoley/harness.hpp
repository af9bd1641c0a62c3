#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "longfoley/generator.hpp"
#include "longfoley/metrics.hpp"
#include "longfoley/synth.hpp"

namespace lf {

struct DatasetConfig {
  SyntheticSpec spec;
  std::uint64_t seed = 7;
  // The first n_train videos form the training split, the rest the test split.
  std::size_t n_train = 48;
};

struct ExperimentConfig {
  // Drives adapter training, generation and evaluation draws.
  std::uint64_t seed = 0;
  DatasetConfig dataset;
  ModelConfig model;
  std::uint64_t init_seed = 0;
  // finetune_all stage, then the adapters_only stage.
  OptimizerSettings pretrain;
  OptimizerSettings adapters;
  std::filesystem::path out_dir = "runs/toy";

  void validate() const;
};

// The desk-scale toy used by the committed configs.
ExperimentConfig default_experiment_config();

nlohmann::json config_to_json(const ExperimentConfig& cfg);
// Missing keys keep their defaults; unknown keys are a ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

struct DatasetVideo {
  TrainingVideo video;
  LatentSequence ground_truth;
  bool train = false;
  double level = 0.0;
};

std::vector<DatasetVideo> make_dataset(const ExperimentConfig& cfg);
std::vector<TrainingVideo> split(const std::vector<DatasetVideo>& data, bool train);

// Dataset directory: index.json, and per video a parent manifest (video.json),
// one manifest per clip, and f64 LDT1 streams including the target latents.
// ground_truth/ holds the full-video targets in the generated-run layout.
void write_dataset(const std::filesystem::path& dir, const ExperimentConfig& cfg, const std::vector<DatasetVideo>& data);
std::vector<DatasetVideo> load_dataset(const std::filesystem::path& dir);

// Checkpoint directory: base/ and adapters/ parameter stores.
void save_checkpoint(const std::filesystem::path& dir, const Model& model);
Model load_checkpoint(const std::filesystem::path& dir, const ExperimentConfig& cfg);

// Generated-run directory: index.json plus <video_id>.ldt latents and
// <video_id>.splices.json per video.
struct GeneratedVideo {
  std::string video_id;
  Concatenated output;
};
void write_generated(const std::filesystem::path& dir, const std::vector<GeneratedVideo>& videos);
std::vector<GeneratedVideo> read_generated(const std::filesystem::path& dir);

enum class GenerateMode { baseline, adapters };
std::string_view to_string(GenerateMode mode);
GenerateMode generate_mode_from_string(std::string_view name);

// Command entry points shared by the CLI and the tests. Failures are thrown
// as lf::Error subclasses.
void cmd_synth(const ExperimentConfig& cfg, const std::filesystem::path& out);

// Trains from `init` when given, otherwise from a fresh model; writes the
// checkpoint and train_log.jsonl under `out`.
std::vector<TrainLogEntry> cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& dataset, TrainMode mode,
                                     const std::optional<std::filesystem::path>& init, const std::filesystem::path& out);

// Generates every test-split video.
void cmd_generate(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                  const std::filesystem::path& dataset, GenerateMode mode, const std::filesystem::path& out,
                  std::size_t workers);

struct EvalInputs {
  std::filesystem::path generated;
  std::filesystem::path ground_truth;  // generated-run layout
  std::optional<std::filesystem::path> gen_embeddings, ref_embeddings;
  std::optional<std::filesystem::path> gen_logits, ref_logits;
  std::optional<std::filesystem::path> video_embeddings;
};

// Writes report.json and report.csv under `out`.
MetricReport cmd_eval(const EvalInputs& in, const std::filesystem::path& out, std::size_t workers);

// Reads <run>/report.json for each run and writes comparison.{csv,json} under
// `out`; deltas are relative to the first run.
nlohmann::json cmd_report(const std::vector<std::filesystem::path>& runs, const std::filesystem::path& out);

// Signed percentage change, nullopt when old is zero.
std::optional<double> percent_delta(double old_value, double new_value);
bool lower_is_better(const std::string& metric);

// In-memory consistency experiment on the test split: the pretrained base is
// shared, adapters are trained and clips sampled with `seed`.
struct ConsistencyOutcome {
  std::uint64_t seed = 0;
  double loss_ratio = 0.0;  // adapters_only eval loss after / before
  double baseline_delta = 0.0, adapters_delta = 0.0, gt_delta = 0.0;
  double baseline_vs_gt = 0.0, adapters_vs_gt = 0.0;
};

Model pretrain_base(const ExperimentConfig& cfg, const std::vector<DatasetVideo>& data);
ConsistencyOutcome run_consistency_seed(const Model& pretrained, const ExperimentConfig& cfg,
                                        const std::vector<DatasetVideo>& data, std::uint64_t seed,
                                        std::size_t workers = 1);

}  // namespace lf
