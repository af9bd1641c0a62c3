#include "longfoley/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "longfoley/errors.hpp"

namespace lf {

namespace {

constexpr char kMagic[4] = {'L', 'D', 'T', '1'};
constexpr std::size_t kMaxRank = 8;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

struct Header {
  Dtype dtype;
  Shape shape;
  std::size_t header_bytes;
  std::uint64_t payload_bytes;
};

// Parses the fixed part and the dims. `avail` is the total byte count of the source.
Header parse_header(const std::uint8_t* p, std::uint64_t avail, const std::string& name) {
  if (avail < 9) throw FormatError(name + ": truncated header (" + std::to_string(avail) + " bytes)");
  if (std::memcmp(p, kMagic, 4) != 0) throw FormatError(name + ": bad magic, expected \"LDT1\"");
  Header h{};
  const std::uint8_t dtype = p[4];
  if (dtype > 1) throw FormatError(name + ": unknown dtype byte " + std::to_string(dtype));
  h.dtype = static_cast<Dtype>(dtype);
  const auto rank = get_le<std::uint32_t>(p + 5);
  if (rank == 0 || rank > kMaxRank) throw FormatError(name + ": unsupported rank " + std::to_string(rank));
  h.header_bytes = 9 + 8 * static_cast<std::size_t>(rank);
  if (avail < h.header_bytes) throw FormatError(name + ": truncated dims (rank " + std::to_string(rank) + ")");
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto d = get_le<std::uint64_t>(p + 9 + 8 * i);
    if (d == 0) throw FormatError(name + ": dim " + std::to_string(i) + " is zero");
    if (count > std::numeric_limits<std::uint64_t>::max() / d) throw FormatError(name + ": dims overflow");
    count *= d;
    h.shape.push_back(static_cast<std::size_t>(d));
  }
  const std::uint64_t elem = dtype_size(h.dtype);
  if (count > std::numeric_limits<std::uint64_t>::max() / elem) throw FormatError(name + ": payload size overflow");
  h.payload_bytes = count * elem;
  return h;
}

void check_payload(const Header& h, std::uint64_t avail, const std::string& name) {
  const std::uint64_t have = avail - h.header_bytes;
  if (have < h.payload_bytes) {
    throw FormatError(name + ": truncated payload, dims " + shape_str(h.shape) + " need " +
                      std::to_string(h.payload_bytes) + " bytes, file has " + std::to_string(have));
  }
  if (have > h.payload_bytes) {
    throw FormatError(name + ": " + std::to_string(have - h.payload_bytes) + " trailing bytes after payload");
  }
}

Tensor decode_payload(const Header& h, const std::uint8_t* payload) {
  const std::size_t n = shape_numel(h.shape);
  std::vector<double> data(n);
  if (h.dtype == Dtype::f32) {
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<double>(get_le<float>(payload + 4 * i));
  } else {
    for (std::size_t i = 0; i < n; ++i) data[i] = get_le<double>(payload + 8 * i);
  }
  return Tensor(h.shape, std::move(data));
}

}  // namespace

std::size_t dtype_size(Dtype dtype) { return dtype == Dtype::f32 ? 4 : 8; }

std::vector<std::uint8_t> encode_tensor(const Tensor& t, Dtype dtype) {
  if (t.rank() == 0 || t.rank() > kMaxRank) throw ShapeError("LDT1 supports ranks 1.." + std::to_string(kMaxRank));
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.reserve(9 + 8 * t.rank() + t.numel() * dtype_size(dtype));
  out.push_back(static_cast<std::uint8_t>(dtype));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_le<std::uint64_t>(out, d);
  if (dtype == Dtype::f32) {
    for (double v : t.data()) put_le<float>(out, static_cast<float>(v));
  } else {
    for (double v : t.data()) put_le<double>(out, v);
  }
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes, const std::string& name, Dtype* dtype_out) {
  const Header h = parse_header(bytes.data(), bytes.size(), name);
  check_payload(h, bytes.size(), name);
  if (dtype_out) *dtype_out = h.dtype;
  return decode_payload(h, bytes.data() + h.header_bytes);
}

void save_tensor_file(const std::filesystem::path& path, const Tensor& t, Dtype dtype) {
  const auto bytes = encode_tensor(t, dtype);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

Tensor load_tensor_file(const std::filesystem::path& path, Dtype* dtype_out) {
  const std::string name = path.string();
  std::error_code ec;
  const auto file_size = std::filesystem::file_size(path, ec);
  if (ec) throw IoError(name + ": " + ec.message());
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + name);

  std::vector<std::uint8_t> head(std::min<std::uint64_t>(file_size, 9 + 8 * kMaxRank));
  f.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  if (!f) throw IoError("read failed for " + name);
  const Header h = parse_header(head.data(), file_size, name);
  check_payload(h, file_size, name);

  std::vector<std::uint8_t> payload(h.payload_bytes);
  f.seekg(static_cast<std::streamoff>(h.header_bytes));
  f.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!f) throw IoError("read failed for " + name);
  if (dtype_out) *dtype_out = h.dtype;
  return decode_payload(h, payload.data());
}

}  // namespace lf
