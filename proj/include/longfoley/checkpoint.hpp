#pragma once

#include <filesystem>

#include "longfoley/autograd.hpp"

namespace lf {

// A parameter store on disk: one LDT1 tensor (f64) per parameter plus
// index.json mapping parameter names to files.
void save_store(const std::filesystem::path& dir, const ParameterStore& store);
ParameterStore load_store(const std::filesystem::path& dir);
// Copies every tensor in `dir` into the existing `store`. Names and shapes
// must match exactly; a mismatch names the offending tensor.
void load_store_into(const std::filesystem::path& dir, ParameterStore& store);

}  // namespace lf
