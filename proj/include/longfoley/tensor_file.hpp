#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "longfoley/tensor.hpp"

namespace lf {

// LDT1 container:
//   "LDT1" | dtype u8 (0 = f32, 1 = f64) | rank u32 | dims u64[rank] | payload
// All integers and scalars little-endian, payload row-major.
enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

std::size_t dtype_size(Dtype dtype);

std::vector<std::uint8_t> encode_tensor(const Tensor& t, Dtype dtype);
// `name` prefixes error messages (usually the file path).
Tensor decode_tensor(std::span<const std::uint8_t> bytes, const std::string& name, Dtype* dtype_out = nullptr);

void save_tensor_file(const std::filesystem::path& path, const Tensor& t, Dtype dtype = Dtype::f32);
// Validates the header against the file size before reading the payload.
Tensor load_tensor_file(const std::filesystem::path& path, Dtype* dtype_out = nullptr);

}  // namespace lf
