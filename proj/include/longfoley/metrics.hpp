#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "longfoley/streams.hpp"
#include "longfoley/tensor.hpp"

namespace lf {

// Mono signal at a native sample rate.
struct AudioBuffer {
  double sample_rate = 0.0;
  std::vector<double> samples;

  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
  void validate() const;
};

// Energy proxy for latents: one sample per frame, the L2 norm of the frame.
AudioBuffer latent_energy_signal(const LatentSequence& latents);

inline constexpr double kSpliceWindowS = 0.010;

// Mean square of round(len_s * rate) samples (at least one) starting at round(start_s * rate).
double energy_window(const AudioBuffer& a, double start_s, double len_s);

struct SpliceRow {
  double t_s = 0.0;
  double e_pre = 0.0;
  double e_post = 0.0;
  double delta = 0.0;
};

struct EnergyDelta {
  double average = 0.0;
  std::vector<SpliceRow> rows;
};

// Per splice point t with c = round(t * rate) and n = max(1, round(0.01 * rate)):
// |E[c-n, c) - E[c, c+n)|, averaged over points.
EnergyDelta energy_delta_10ms(const AudioBuffer& a, const SplicePoints& sp);
double energy_delta_vs_gt(const AudioBuffer& gen, const AudioBuffer& gt, const SplicePoints& sp);

struct EmbeddingSet {
  Tensor vectors;  // [N x d]
  std::string source;
};

struct LogitSet {
  Tensor logits;  // [N x C]
  std::string source;
};

double frechet_distance(const EmbeddingSet& x, const EmbeddingSet& y);
// Mean over pairs of KL(softmax(ref_i) || softmax(gen_i)).
double kl_paired(const LogitSet& gen, const LogitSet& ref);
double inception_score(const LogitSet& s);
double ib_score(const EmbeddingSet& a, const EmbeddingSet& v);

// RIFF/WAVE PCM16 or IEEE float32. Multi-channel input keeps the first channel.
AudioBuffer read_wav(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);
void write_wav(const std::filesystem::path& path, const AudioBuffer& a, bool float32 = true);

// LDT1 tensor plus `<path>.json` sidecar {source, kind, paired_with}.
struct TensorSidecar {
  std::string source;
  std::string kind;  // "embeddings" or "logits"
  std::optional<std::string> paired_with;
};
TensorSidecar read_sidecar(const std::filesystem::path& tensor_path);
void write_sidecar(const std::filesystem::path& tensor_path, const TensorSidecar& sidecar);
EmbeddingSet load_embeddings(const std::filesystem::path& path);
LogitSet load_logits(const std::filesystem::path& path);

// A named metric; an empty value marks it skipped.
struct MetricValue {
  std::string name;
  std::optional<double> value;
  std::string note;
};

struct MetricReport {
  std::vector<MetricValue> metrics;
  std::vector<SpliceRow> rows;

  std::optional<double> get(const std::string& name) const;
};

nlohmann::json report_to_json(const MetricReport& r);
// Header t_s,e_pre,e_post,delta; one row per splice point; then a "mean" summary row.
std::string report_to_csv(const MetricReport& r);
// Rows of a CSV written by report_to_csv (summary row excluded).
std::vector<SpliceRow> rows_from_csv(const std::string& csv);

}  // namespace lf
