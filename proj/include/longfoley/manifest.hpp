#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "longfoley/streams.hpp"

namespace lf {

// Describes one clip (or a whole long-form video when parent_id is empty).
// Stream paths are stored as written; relative paths resolve against base_dir.
struct ClipManifest {
  std::string clip_id;
  std::optional<std::string> parent_id;
  double duration_s = 0.0;
  std::map<StreamKind, std::string> streams;
  std::vector<double> splices;
  // Position of the clip inside its parent video.
  std::optional<double> start_s;
  std::optional<DimProfile> toy_dims;
  std::filesystem::path base_dir;

  DimProfile dims() const { return toy_dims.value_or(DimProfile{}); }
  std::filesystem::path stream_path(StreamKind kind) const;
  bool has_stream(StreamKind kind) const { return streams.count(kind) != 0; }
};

nlohmann::json manifest_to_json(const ClipManifest& m);
// Unknown top-level fields are dropped with a warning (also appended to `warnings`).
ClipManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir,
                                std::vector<std::string>* warnings = nullptr);

ClipManifest read_manifest(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);
void write_manifest(const std::filesystem::path& path, const ClipManifest& m);

TokenStream load_stream(const ClipManifest& m, StreamKind kind);

// Every violated TokenStream / ClipManifest invariant; I/O problems become
// entries rather than exceptions. Empty means valid.
std::vector<std::string> validate_manifest(const ClipManifest& m);

nlohmann::json dims_to_json(const DimProfile& d);
DimProfile dims_from_json(const nlohmann::json& j);

}  // namespace lf
