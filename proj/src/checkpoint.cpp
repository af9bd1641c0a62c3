#include "longfoley/checkpoint.hpp"

#include <fstream>

#include "json.hpp"
#include "longfoley/errors.hpp"
#include "longfoley/tensor_file.hpp"

namespace lf {

using nlohmann::json;

namespace {

json read_index(const std::filesystem::path& dir) {
  const auto path = dir / "index.json";
  std::ifstream f(path);
  if (!f) throw IoError("cannot open checkpoint index " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": invalid JSON: " + e.what());
  }
  if (!j.contains("tensors") || !j.at("tensors").is_array()) throw FormatError(path.string() + ": missing tensor list");
  return j;
}

}  // namespace

void save_store(const std::filesystem::path& dir, const ParameterStore& store) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  json tensors = json::array();
  for (const auto& [name, p] : store) {
    const std::string file = name + ".ldt";
    save_tensor_file(dir / file, p.value, Dtype::f64);
    tensors.push_back(json{{"name", name}, {"file", file}, {"shape", p.value.shape()}});
  }
  std::ofstream f(dir / "index.json", std::ios::trunc);
  if (!f) throw IoError("cannot write " + (dir / "index.json").string());
  f << json{{"format", "LDT1"}, {"tensors", tensors}}.dump(2) << '\n';
}

ParameterStore load_store(const std::filesystem::path& dir) {
  ParameterStore store;
  const json index = read_index(dir);
  for (const auto& entry : index.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    store.add(name, load_tensor_file(dir / entry.at("file").get<std::string>()));
  }
  return store;
}

void load_store_into(const std::filesystem::path& dir, ParameterStore& store) {
  ParameterStore loaded = load_store(dir);
  for (const auto& [name, p] : loaded) {
    if (!store.contains(name)) throw FormatError("checkpoint tensor '" + name + "' is not a model parameter");
    Parameter& dst = store.at(name);
    if (dst.value.shape() != p.value.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(p.value.shape()) + ", model expects " +
                        shape_str(dst.value.shape()));
    }
  }
  for (const auto& [name, _] : store) {
    if (!loaded.contains(name)) throw FormatError("checkpoint is missing tensor '" + name + "'");
  }
  for (auto& [name, p] : loaded) store.at(name).value = std::move(p.value);
}

}  // namespace lf
