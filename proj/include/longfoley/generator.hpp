#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "longfoley/adapters.hpp"
#include "longfoley/autograd.hpp"
#include "longfoley/conditioning.hpp"
#include "longfoley/rng.hpp"
#include "longfoley/streams.hpp"

namespace lf {

struct DiTConfig {
  std::size_t n_layers = 4;
  std::size_t hidden_dim = 64;
  std::size_t n_heads = 4;
  std::size_t latent_dim = 20;
  std::size_t sampler_steps = 16;

  // n_layers == 0 is accepted only when `allow_empty` is set (test configs).
  void validate(bool allow_empty = false) const;
};

struct ModelConfig {
  ConditioningConfig cond;
  DiTConfig dit;
  std::size_t adapter_bottleneck = 16;
  AdapterInit adapter_init = AdapterInit::zero_out;
};

// Base parameters (conditioning projections + DiT) and the dual adapters live
// in separate stores so one can be frozen while the other trains.
struct Model {
  ModelConfig cfg;
  ParameterStore base;
  ParameterStore adapters;
};

// Base from streams "init/cond" and "init/dit", adapters from "adapters/*".
Model make_model(const ModelConfig& cfg, std::uint64_t seed);
void init_dit_params(ParameterStore& store, const DiTConfig& dit, const ConditioningConfig& cond, Philox& rng);

struct ClipConditions {
  GlobalCondition global;
  FrameCondition frame;
};

// Interpolation state x_t = (1 - t) * noise + t * data.
struct FlowState {
  double t = 0.0;
  Var x_t;
};

// Velocity [T_a x latent_dim] for the state under the clip's conditions.
Var dit_forward(const FlowState& x, const ClipConditions& c, ParameterStore& base, const DiTConfig& cfg);

using VelocityField = std::function<Var(const FlowState&)>;

struct CfmDraw {
  Var loss;
  double t = 0.0;
  Tensor eps;
};

// Draws t ~ U(0,1) then eps ~ N(0,1) row-major from `rng` and returns the MSE
// between the predicted velocity and target - eps.
CfmDraw cfm_loss(const VelocityField& field, const Tensor& target, Philox& rng);

// Euler integration from t = 0 (pure noise drawn from `rng`) to t = 1.
Tensor sample_euler(const VelocityField& field, std::size_t frames, std::size_t latent_dim, std::size_t steps,
                    Philox& rng);

// One clip of a long-form video: its local streams and its span in the parent.
struct ClipInputs {
  std::string clip_id;
  TokenStream visual;
  TokenStream text;
  TokenStream sync;
  ClipWindow window;
};

struct LongFormInput {
  std::string video_id;
  std::vector<ClipInputs> clips;
  GlobalFeatureBundle bundle;

  double duration_s() const { return clips.empty() ? 0.0 : clips.back().window.end_s; }
};

// c_g from the clip's visual/text streams and c_f from its sync stream. When
// `bundle` is given the adapter corrections are fused in.
ClipConditions build_clip_conditions(Model& model, const ClipInputs& clip, const GlobalFeatureBundle* bundle);

// Samples one clip with RNG stream "sample/<video_id>/<clip_id>".
LatentSequence sample_clip(Model& model, const std::string& video_id, const ClipInputs& clip,
                           const GlobalFeatureBundle* bundle, std::uint64_t seed);

// Throws ContractError unless clips start at 0, are ordered and contiguous,
// and the last one ends at the bundle's end within one latent frame.
void check_contiguous(const LongFormInput& video, bool require_bundle);

Concatenated generate_long_form(Model& model, const LongFormInput& video, std::uint64_t seed, std::size_t workers = 1);
Concatenated generate_long_form_baseline(Model& model, const LongFormInput& video, std::uint64_t seed,
                                         std::size_t workers = 1);

enum class TrainMode { finetune_all, adapters_only };

std::string_view to_string(TrainMode mode);
TrainMode train_mode_from_string(std::string_view name);

enum class OptimizerKind { sgd_momentum, adam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(std::string_view name);

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::sgd_momentum;
  double lr = 1e-3;
  // Momentum for SGD; first-moment decay for Adam.
  double momentum = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  std::size_t steps = 200;
  std::size_t batch_size = 4;
  // adapters_only normally freezes the base; this lets it train as well.
  bool unfreeze_base = false;
};

struct TrainingVideo {
  LongFormInput input;
  std::vector<Tensor> targets;  // latents per clip
};

struct TrainLogEntry {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

struct TrainOptions {
  TrainMode mode = TrainMode::adapters_only;
  OptimizerSettings opt;
  std::uint64_t seed = 0;
  // Written before a NumericError is thrown for a non-finite loss.
  std::filesystem::path snapshot_path;
  std::function<void(const TrainLogEntry&)> on_step;
};

std::vector<TrainLogEntry> train(Model& model, const std::vector<TrainingVideo>& data, const TrainOptions& options);

// Mean cfm loss over `draws` fixed (clip, t, eps) draws from stream "eval/<seed>";
// comparable across checkpoints.
double evaluate_loss(Model& model, const std::vector<TrainingVideo>& data, TrainMode mode, std::uint64_t seed,
                     std::size_t draws);

}  // namespace lf
