#include "longfoley/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "longfoley/errors.hpp"
#include "longfoley/log.hpp"
#include "longfoley/tensor_file.hpp"

namespace lf {

using nlohmann::json;

namespace {

const std::set<std::string> kKnownFields = {"clip_id", "parent_id", "duration_s", "streams",
                                            "splices", "start_s",   "toy_dims"};

template <typename T>
T require_field(const json& j, const char* key) {
  if (!j.contains(key)) throw FormatError(std::string("manifest: missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: field '") + key + "' has the wrong type: " + e.what());
  }
}

}  // namespace

std::filesystem::path ClipManifest::stream_path(StreamKind kind) const {
  auto it = streams.find(kind);
  if (it == streams.end()) throw ContractError("manifest " + clip_id + " has no " + std::string(to_string(kind)) + " stream");
  std::filesystem::path p(it->second);
  return p.is_absolute() ? p : base_dir / p;
}

json dims_to_json(const DimProfile& d) {
  return json{{"visual", d.visual}, {"text", d.text}, {"sync", d.sync}, {"latent", d.latent}, {"text_tokens", d.text_tokens}};
}

DimProfile dims_from_json(const json& j) {
  DimProfile d;
  if (!j.is_object()) throw FormatError("toy_dims must be an object");
  auto take = [&](const char* key, std::size_t& dst) {
    if (!j.contains(key)) return;
    const auto v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 1) throw FormatError(std::string("toy_dims.") + key + " must be a positive integer");
    dst = v.get<std::size_t>();
  };
  take("visual", d.visual);
  take("text", d.text);
  take("sync", d.sync);
  take("latent", d.latent);
  take("text_tokens", d.text_tokens);
  return d;
}

json manifest_to_json(const ClipManifest& m) {
  json j;
  j["clip_id"] = m.clip_id;
  if (m.parent_id) j["parent_id"] = *m.parent_id;
  j["duration_s"] = m.duration_s;
  json streams = json::object();
  for (const auto& [kind, path] : m.streams) streams[std::string(to_string(kind))] = path;
  j["streams"] = streams;
  j["splices"] = m.splices;
  if (m.start_s) j["start_s"] = *m.start_s;
  if (m.toy_dims) j["toy_dims"] = dims_to_json(*m.toy_dims);
  return j;
}

ClipManifest manifest_from_json(const json& j, const std::filesystem::path& base_dir, std::vector<std::string>* warnings) {
  if (!j.is_object()) throw FormatError("manifest: expected a JSON object");
  ClipManifest m;
  m.base_dir = base_dir;
  m.clip_id = require_field<std::string>(j, "clip_id");
  m.duration_s = require_field<double>(j, "duration_s");
  if (j.contains("parent_id") && !j.at("parent_id").is_null()) m.parent_id = require_field<std::string>(j, "parent_id");
  if (j.contains("streams")) {
    const auto& s = j.at("streams");
    if (!s.is_object()) throw FormatError("manifest: 'streams' must be an object");
    for (const auto& [key, value] : s.items()) {
      if (!value.is_string()) throw FormatError("manifest: stream '" + key + "' path must be a string");
      m.streams[stream_kind_from_string(key)] = value.get<std::string>();
    }
  }
  if (j.contains("splices")) m.splices = require_field<std::vector<double>>(j, "splices");
  if (j.contains("start_s")) m.start_s = require_field<double>(j, "start_s");
  if (j.contains("toy_dims")) m.toy_dims = dims_from_json(j.at("toy_dims"));
  for (const auto& [key, _] : j.items()) {
    if (!kKnownFields.count(key)) {
      const std::string msg = "manifest " + m.clip_id + ": ignoring unknown field '" + key + "'";
      log::warn(msg);
      if (warnings) warnings->push_back(msg);
    }
  }
  return m;
}

ClipManifest read_manifest(const std::filesystem::path& path, std::vector<std::string>* warnings) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": invalid JSON: " + e.what());
  }
  return manifest_from_json(j, path.parent_path(), warnings);
}

void write_manifest(const std::filesystem::path& path, const ClipManifest& m) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << manifest_to_json(m).dump(2) << '\n';
}

TokenStream load_stream(const ClipManifest& m, StreamKind kind) {
  Tensor t = load_tensor_file(m.stream_path(kind));
  if (t.rank() != 2) {
    throw FormatError(m.stream_path(kind).string() + ": stream tensor must be rank 2, got " + shape_str(t.shape()));
  }
  return make_stream(kind, std::move(t));
}

std::vector<std::string> validate_manifest(const ClipManifest& m) {
  std::vector<std::string> report;
  if (m.clip_id.empty()) report.push_back("clip_id is empty");
  if (!(m.duration_s > 0.0)) {
    std::ostringstream msg;
    msg << "duration_s " << m.duration_s << " must be positive";
    report.push_back(msg.str());
  }
  for (std::size_t i = 0; i < m.splices.size(); ++i) {
    const double t = m.splices[i];
    if (i > 0 && !(t > m.splices[i - 1])) report.push_back("splices not strictly increasing at index " + std::to_string(i));
    const bool upper_ok = m.parent_id.has_value() || t < m.duration_s;
    if (!(t > 0.0) || !upper_ok) {
      std::ostringstream msg;
      msg << "splice " << t << " s outside (0, " << m.duration_s << ")";
      report.push_back(msg.str());
    }
  }
  const DimProfile dims = m.dims();
  for (const auto& [kind, _] : m.streams) {
    try {
      const TokenStream s = load_stream(m, kind);
      for (auto& v : check_stream(s, dims, m.duration_s)) report.push_back(std::move(v));
    } catch (const Error& e) {
      report.push_back(std::string("I/O error for ") + std::string(to_string(kind)) + " stream: " + e.what());
    }
  }
  return report;
}

}  // namespace lf
