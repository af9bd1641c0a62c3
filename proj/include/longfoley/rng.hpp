#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace lf {

// Philox4x32-10 counter-based generator. A (seed, stream) pair names an
// independent sequence, so work split across threads stays reproducible as
// long as every unit of work derives its own stream name.
class Philox {
 public:
  using Block = std::array<std::uint32_t, 4>;

  Philox(std::uint64_t seed, std::uint64_t stream);
  Philox(std::uint64_t seed, std::string_view stream_name);

  // Raw 32-bit output; consumes one quarter of a block.
  std::uint32_t next_u32();
  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform in (0, 1]; safe for logarithms.
  double uniform_open();
  // Standard normal via Box-Muller; the second variate is cached.
  double normal();

  static Block round_function(Block counter, std::array<std::uint32_t, 2> key);

 private:
  void refill();

  std::array<std::uint32_t, 2> key_{};
  std::uint64_t counter_ = 0;
  std::uint64_t stream_ = 0;
  Block block_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a, used to turn stream names into 64-bit stream ids.
std::uint64_t hash_name(std::string_view name);

}  // namespace lf
