#include "longfoley/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "longfoley/errors.hpp"
#include "longfoley/log.hpp"
#include "longfoley/tensor_file.hpp"

namespace lf {

namespace {

struct Window {
  std::size_t first = 0;
  std::size_t count = 0;
};

double mean_square(const AudioBuffer& a, Window w) {
  double acc = 0.0;
  for (std::size_t i = w.first; i < w.first + w.count; ++i) acc += a.samples[i] * a.samples[i];
  return acc / static_cast<double>(w.count);
}

std::size_t window_samples(double len_s, double rate) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(len_s * rate)));
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

std::vector<double> log_softmax_row(std::span<const double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  double z = 0.0;
  for (double v : row) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] - lz;
  return out;
}

Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) m(r, c) = t.at(r, c);
  }
  return m;
}

}  // namespace

void AudioBuffer::validate() const {
  if (!(sample_rate > 0.0)) throw ContractError("audio buffer: sample_rate must be positive");
  if (samples.empty()) throw ContractError("audio buffer is empty");
}

AudioBuffer latent_energy_signal(const LatentSequence& latents) {
  AudioBuffer a;
  a.sample_rate = latents.rate_fps;
  a.samples.resize(latents.length());
  for (std::size_t r = 0; r < latents.length(); ++r) {
    double sq = 0.0;
    for (double v : latents.latents.row(r)) sq += v * v;
    a.samples[r] = std::sqrt(sq);
  }
  return a;
}

double energy_window(const AudioBuffer& a, double start_s, double len_s) {
  a.validate();
  if (!(len_s > 0.0)) throw ContractError("energy_window: length must be positive");
  if (!(start_s >= 0.0)) throw ContractError("energy_window: window starts before the buffer");
  const Window w{static_cast<std::size_t>(std::llround(start_s * a.sample_rate)), window_samples(len_s, a.sample_rate)};
  if (w.first + w.count > a.samples.size()) {
    std::ostringstream msg;
    msg << "energy_window: [" << start_s << ", " << start_s + len_s << ") s exceeds buffer of " << a.duration_s() << " s";
    throw ContractError(msg.str());
  }
  return mean_square(a, w);
}

EnergyDelta energy_delta_10ms(const AudioBuffer& a, const SplicePoints& sp) {
  a.validate();
  if (sp.times.empty()) throw ContractError("energy_delta_10ms: no splice points; metric undefined");
  const std::size_t n = window_samples(kSpliceWindowS, a.sample_rate);
  const double duration = a.duration_s();
  EnergyDelta out;
  for (std::size_t i = 0; i < sp.times.size(); ++i) {
    const double t = sp.times[i];
    if (i > 0 && !(t > sp.times[i - 1])) throw ContractError("energy_delta_10ms: splice points not strictly increasing");
    const auto c = static_cast<long long>(std::llround(t * a.sample_rate));
    const bool margin_ok = t >= kSpliceWindowS - 1e-9 && t <= duration - kSpliceWindowS + 1e-9;
    if (!margin_ok || c < static_cast<long long>(n) || c + static_cast<long long>(n) > static_cast<long long>(a.samples.size())) {
      std::ostringstream msg;
      msg << "energy_delta_10ms: splice point " << t << " s lacks 10 ms of audio on both sides (duration "
          << duration << " s)";
      throw ContractError(msg.str());
    }
    const auto center = static_cast<std::size_t>(c);
    SpliceRow row;
    row.t_s = t;
    row.e_pre = mean_square(a, Window{center - n, n});
    row.e_post = mean_square(a, Window{center, n});
    row.delta = std::abs(row.e_pre - row.e_post);
    out.rows.push_back(row);
  }
  double acc = 0.0;
  for (const auto& r : out.rows) acc += r.delta;
  out.average = acc / static_cast<double>(out.rows.size());
  return out;
}

double energy_delta_vs_gt(const AudioBuffer& gen, const AudioBuffer& gt, const SplicePoints& sp) {
  gen.validate();
  gt.validate();
  if (std::abs(gen.duration_s() - gt.duration_s()) > kSpliceWindowS + 1e-9) {
    std::ostringstream msg;
    msg << "energy_delta_vs_gt: durations differ (" << gen.duration_s() << " s vs " << gt.duration_s() << " s)";
    throw ContractError(msg.str());
  }
  return std::abs(energy_delta_10ms(gen, sp).average - energy_delta_10ms(gt, sp).average);
}

double frechet_distance(const EmbeddingSet& x, const EmbeddingSet& y) {
  const Tensor& a = x.vectors;
  const Tensor& b = y.vectors;
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw ShapeError("frechet_distance: embedding dims differ (" + shape_str(a.shape()) + " vs " + shape_str(b.shape()) + ")");
  }
  if (a.rows() < 2 || b.rows() < 2) throw ContractError("frechet_distance: need at least 2 embeddings per set");
  const auto d = static_cast<Eigen::Index>(a.cols());

  auto moments = [d](const Tensor& t, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
    const Eigen::MatrixXd m = to_eigen(t);
    mu = m.colwise().mean().transpose();
    const Eigen::MatrixXd centered = m.rowwise() - mu.transpose();
    cov = centered.transpose() * centered / static_cast<double>(t.rows() - 1);
    if (t.rows() <= static_cast<std::size_t>(d)) cov += 1e-10 * Eigen::MatrixXd::Identity(d, d);
  };
  Eigen::VectorXd mu_x, mu_y;
  Eigen::MatrixXd cov_x, cov_y;
  moments(a, mu_x, cov_x);
  moments(b, mu_y, cov_y);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ex(cov_x);
  const Eigen::VectorXd lx = ex.eigenvalues().cwiseMax(0.0);
  const Eigen::MatrixXd sqrt_x = ex.eigenvectors() * lx.cwiseSqrt().asDiagonal() * ex.eigenvectors().transpose();
  Eigen::MatrixXd inner = sqrt_x * cov_y * sqrt_x;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ei(inner);
  const Eigen::VectorXd li = ei.eigenvalues();
  const double tr_sqrt = li.cwiseMax(0.0).cwiseSqrt().sum();

  const double value = (mu_x - mu_y).squaredNorm() + cov_x.trace() + cov_y.trace() - 2.0 * tr_sqrt;
  if (!std::isfinite(value)) {
    std::ostringstream msg;
    msg << "frechet_distance: non-finite result; eigenvalue ranges cov_x [" << ex.eigenvalues().minCoeff() << ", "
        << ex.eigenvalues().maxCoeff() << "], product [" << li.minCoeff() << ", " << li.maxCoeff() << "]";
    throw NumericError(msg.str());
  }
  return std::max(0.0, value);
}

double kl_paired(const LogitSet& gen, const LogitSet& ref) {
  const Tensor& g = gen.logits;
  const Tensor& r = ref.logits;
  if (g.rank() != 2 || g.shape() != r.shape()) {
    throw ShapeError("kl_paired: logit shapes differ (" + shape_str(g.shape()) + " vs " + shape_str(r.shape()) + ")");
  }
  if (g.cols() < 2) throw ContractError("kl_paired: need at least 2 classes");
  double total = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i) {
    const auto lg = log_softmax_row(g.row(i));
    const auto lr = log_softmax_row(r.row(i));
    double kl = 0.0;
    for (std::size_t c = 0; c < lg.size(); ++c) {
      const double p = std::exp(lr[c]);
      if (p > 0.0) kl += p * (lr[c] - lg[c]);
    }
    total += kl;
  }
  return total / static_cast<double>(g.rows());
}

double inception_score(const LogitSet& s) {
  const Tensor& l = s.logits;
  if (l.rank() != 2 || l.rows() < 1) throw ContractError("inception_score: need at least one logit row");
  const std::size_t n = l.rows(), c = l.cols();
  std::vector<std::vector<double>> logp(n);
  std::vector<double> mean_p(c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    logp[i] = log_softmax_row(l.row(i));
    for (std::size_t k = 0; k < c; ++k) mean_p[k] += std::exp(logp[i][k]) / static_cast<double>(n);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      const double p = std::exp(logp[i][k]);
      if (p > 0.0 && mean_p[k] > 0.0) total += p * (logp[i][k] - std::log(mean_p[k]));
    }
  }
  return std::exp(total / static_cast<double>(n));
}

double ib_score(const EmbeddingSet& a, const EmbeddingSet& v) {
  if (a.vectors.rank() != 2 || a.vectors.shape() != v.vectors.shape()) {
    throw ShapeError("ib_score: embedding shapes differ (" + shape_str(a.vectors.shape()) + " vs " +
                     shape_str(v.vectors.shape()) + ")");
  }
  double total = 0.0;
  std::size_t zero_rows = 0;
  for (std::size_t i = 0; i < a.vectors.rows(); ++i) {
    double dot = 0.0, na = 0.0, nv = 0.0;
    const auto ra = a.vectors.row(i);
    const auto rv = v.vectors.row(i);
    for (std::size_t k = 0; k < ra.size(); ++k) {
      dot += ra[k] * rv[k];
      na += ra[k] * ra[k];
      nv += rv[k] * rv[k];
    }
    if (na == 0.0 || nv == 0.0) {
      ++zero_rows;
      continue;
    }
    total += dot / (std::sqrt(na) * std::sqrt(nv));
  }
  if (zero_rows > 0) log::warn("ib_score: " + std::to_string(zero_rows) + " zero-vector pair(s) counted as 0");
  return total / static_cast<double>(a.vectors.rows());
}

// ---------------------------------------------------------------------------
// WAV

namespace {

std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}
std::uint16_t le16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | p[1] << 8); }

void put32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

}  // namespace

AudioBuffer read_wav(const std::filesystem::path& path, std::vector<std::string>* warnings) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  const std::string name = path.string();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw FormatError(name + ": not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (size > bytes.size() - body) throw FormatError(name + ": truncated chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw FormatError(name + ": fmt chunk too short");
      format = le16(bytes.data() + body);
      channels = le16(bytes.data() + body + 2);
      rate = le32(bytes.data() + body + 4);
      bits = le16(bytes.data() + body + 14);
      if (format == 0xFFFE && size >= 26) format = le16(bytes.data() + body + 24);  // extensible subformat
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw FormatError(name + ": data chunk before fmt chunk");
      const bool pcm16 = format == 1 && bits == 16;
      const bool f32 = format == 3 && bits == 32;
      if (!pcm16 && !f32) {
        throw FormatError(name + ": unsupported encoding (format " + std::to_string(format) + ", " +
                          std::to_string(bits) + " bits)");
      }
      if (channels < 1 || rate == 0) throw FormatError(name + ": invalid channel count or sample rate");
      if (channels > 1) {
        const std::string msg = name + ": " + std::to_string(channels) + " channels, using the first";
        log::warn(msg);
        if (warnings) warnings->push_back(msg);
      }
      const std::size_t frame_bytes = static_cast<std::size_t>(bits / 8) * channels;
      const std::size_t frames = size / frame_bytes;
      AudioBuffer a;
      a.sample_rate = rate;
      a.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        const unsigned char* p = bytes.data() + body + i * frame_bytes;
        if (pcm16) {
          a.samples[i] = static_cast<std::int16_t>(le16(p)) / 32768.0;
        } else {
          const std::uint32_t u = le32(p);
          float v;
          std::memcpy(&v, &u, 4);
          a.samples[i] = v;
        }
      }
      a.validate();
      return a;
    }
    pos = body + size + (size & 1);
  }
  throw FormatError(name + ": no data chunk");
}

void write_wav(const std::filesystem::path& path, const AudioBuffer& a, bool float32) {
  a.validate();
  const std::uint16_t bits = float32 ? 32 : 16;
  const auto rate = static_cast<std::uint32_t>(std::llround(a.sample_rate));
  const std::uint32_t data_size = static_cast<std::uint32_t>(a.samples.size() * (bits / 8));
  std::string out = "RIFF";
  put32(out, 36 + data_size);
  out += "WAVEfmt ";
  put32(out, 16);
  put16(out, float32 ? 3 : 1);
  put16(out, 1);
  put32(out, rate);
  put32(out, rate * (bits / 8));
  put16(out, bits / 8);
  put16(out, bits);
  out += "data";
  put32(out, data_size);
  for (double v : a.samples) {
    if (float32) {
      const float f = static_cast<float>(v);
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      put32(out, u);
    } else {
      const double c = std::clamp(v, -1.0, 32767.0 / 32768.0);
      put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32768.0))));
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

// ---------------------------------------------------------------------------
// Sidecars

namespace {

std::filesystem::path sidecar_path(const std::filesystem::path& tensor_path) {
  return std::filesystem::path(tensor_path.string() + ".json");
}

}  // namespace

TensorSidecar read_sidecar(const std::filesystem::path& tensor_path) {
  const auto path = sidecar_path(tensor_path);
  std::ifstream f(path);
  if (!f) throw IoError("cannot open sidecar " + path.string());
  nlohmann::json j;
  try {
    f >> j;
    TensorSidecar s;
    s.source = j.value("source", "");
    s.kind = j.at("kind").get<std::string>();
    if (j.contains("paired_with") && !j.at("paired_with").is_null()) s.paired_with = j.at("paired_with").get<std::string>();
    if (s.kind != "embeddings" && s.kind != "logits") throw FormatError(path.string() + ": unknown kind '" + s.kind + "'");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_sidecar(const std::filesystem::path& tensor_path, const TensorSidecar& s) {
  nlohmann::json j{{"source", s.source}, {"kind", s.kind}};
  j["paired_with"] = s.paired_with ? nlohmann::json(*s.paired_with) : nlohmann::json(nullptr);
  std::ofstream f(sidecar_path(tensor_path), std::ios::trunc);
  if (!f) throw IoError("cannot write sidecar for " + tensor_path.string());
  f << j.dump(2) << '\n';
}

EmbeddingSet load_embeddings(const std::filesystem::path& path) {
  const TensorSidecar s = read_sidecar(path);
  if (s.kind != "embeddings") throw FormatError(path.string() + ": sidecar kind is " + s.kind + ", expected embeddings");
  Tensor t = load_tensor_file(path);
  if (t.rank() != 2) throw FormatError(path.string() + ": embeddings must be rank 2");
  if (!t.all_finite()) throw FormatError(path.string() + ": non-finite embedding entries");
  return EmbeddingSet{std::move(t), s.source};
}

LogitSet load_logits(const std::filesystem::path& path) {
  const TensorSidecar s = read_sidecar(path);
  if (s.kind != "logits") throw FormatError(path.string() + ": sidecar kind is " + s.kind + ", expected logits");
  Tensor t = load_tensor_file(path);
  if (t.rank() != 2 || t.cols() < 2) throw FormatError(path.string() + ": logits must be [N x C] with C >= 2");
  return LogitSet{std::move(t), s.source};
}

// ---------------------------------------------------------------------------
// Reports

std::optional<double> MetricReport::get(const std::string& name) const {
  for (const auto& m : metrics) {
    if (m.name == name) return m.value;
  }
  return std::nullopt;
}

nlohmann::json report_to_json(const MetricReport& r) {
  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& m : r.metrics) {
    nlohmann::json entry;
    if (m.value) {
      entry["value"] = *m.value;
      entry["status"] = "ok";
    } else {
      entry["value"] = nullptr;
      entry["status"] = "skipped";
    }
    if (!m.note.empty()) entry["note"] = m.note;
    metrics[m.name] = entry;
  }
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"t_s", row.t_s}, {"e_pre", row.e_pre}, {"e_post", row.e_post}, {"delta", row.delta}});
  }
  return {{"metrics", metrics}, {"splice_rows", rows}};
}

std::string report_to_csv(const MetricReport& r) {
  std::string out = "t_s,e_pre,e_post,delta\r\n";
  double pre = 0.0, post = 0.0, delta = 0.0;
  for (const auto& row : r.rows) {
    out += fmt(row.t_s) + "," + fmt(row.e_pre) + "," + fmt(row.e_post) + "," + fmt(row.delta) + "\r\n";
    pre += row.e_pre;
    post += row.e_post;
    delta += row.delta;
  }
  if (!r.rows.empty()) {
    const auto n = static_cast<double>(r.rows.size());
    out += "mean," + fmt(pre / n) + "," + fmt(post / n) + "," + fmt(delta / n) + "\r\n";
  }
  return out;
}

std::vector<SpliceRow> rows_from_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::vector<SpliceRow> rows;
  if (!std::getline(in, line)) throw FormatError("report CSV is empty");
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.rfind("mean,", 0) == 0) continue;
    std::istringstream fields(line);
    std::string cell;
    double v[4];
    for (double& x : v) {
      if (!std::getline(fields, cell, ',')) throw FormatError("report CSV row has fewer than 4 fields: " + line);
      x = std::stod(cell);
    }
    rows.push_back({v[0], v[1], v[2], v[3]});
  }
  return rows;
}

}  // namespace lf
