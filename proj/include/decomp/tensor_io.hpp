#pragma once

// FTEN tensor files.
//
// Layout (all multi-byte fields little-endian):
//   0..3   magic "FTEN"
//   4      format version (1)
//   5      dtype code (1 = f32, 2 = f64)
//   6      ndim (1..4)
//   7      reserved, must be 0
//   8..    ndim x u64 dimension sizes, each >= 1
//   ...    row-major payload, product(shape) scalars

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "decomp/error.hpp"

namespace decomp {

enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

inline std::size_t dtype_size(DType dtype) { return dtype == DType::F32 ? 4 : 8; }

/// In-memory tensor. Values are held as double; f32 tensors only ever hold
/// values representable in float, so widening and narrowing is lossless.
struct TensorFile {
  DType dtype = DType::F32;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;

  std::size_t rank() const { return shape.size(); }

  std::uint64_t element_count() const {
    return std::accumulate(shape.begin(), shape.end(), std::uint64_t{1},
                           [](std::uint64_t a, std::uint64_t b) { return a * b; });
  }

  bool operator==(const TensorFile&) const = default;
};

namespace tensor_format {
inline constexpr std::array<char, 4> kMagic = {'F', 'T', 'E', 'N'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kMaxRank = 4;
inline constexpr std::size_t kPreambleSize = 8;
}  // namespace tensor_format

namespace detail {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  auto bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>(bits & 0xffu));
    bits >>= 8;
  }
}

template <typename T>
T get_le(const std::uint8_t* p) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits = 0;
  for (std::size_t i = sizeof(T); i-- > 0;) bits = (bits << 8) | p[i];
  return std::bit_cast<T>(bits);
}

}  // namespace detail

/// Throws ShapeMismatch/UnsupportedDtype if the tensor invariants do not hold.
inline void validate(const TensorFile& t) {
  if (t.dtype != DType::F32 && t.dtype != DType::F64)
    throw Error(ErrorCode::UnsupportedDtype, "dtype code " + std::to_string(int(t.dtype)));
  if (t.shape.empty() || t.shape.size() > tensor_format::kMaxRank)
    throw Error(ErrorCode::ShapeMismatch, "rank must be 1..4, got " + std::to_string(t.shape.size()));
  for (auto d : t.shape)
    if (d == 0) throw Error(ErrorCode::ShapeMismatch, "zero-sized dimension");
  if (t.element_count() != t.data.size())
    throw Error(ErrorCode::ShapeMismatch, "shape product " + std::to_string(t.element_count()) +
                                              " != " + std::to_string(t.data.size()) + " values");
}

inline std::vector<std::uint8_t> encode_tensor(const TensorFile& t) {
  validate(t);
  std::vector<std::uint8_t> out;
  out.reserve(tensor_format::kPreambleSize + 8 * t.shape.size() + dtype_size(t.dtype) * t.data.size());
  out.insert(out.end(), tensor_format::kMagic.begin(), tensor_format::kMagic.end());
  out.push_back(tensor_format::kVersion);
  out.push_back(static_cast<std::uint8_t>(t.dtype));
  out.push_back(static_cast<std::uint8_t>(t.shape.size()));
  out.push_back(0);
  for (auto d : t.shape) detail::put_le<std::uint64_t>(out, d);
  if (t.dtype == DType::F32) {
    for (double v : t.data) detail::put_le<float>(out, static_cast<float>(v));
  } else {
    for (double v : t.data) detail::put_le<double>(out, v);
  }
  return out;
}

inline TensorFile decode_tensor(std::span<const std::uint8_t> bytes) {
  using namespace tensor_format;
  if (bytes.size() < kMagic.size() || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0)
    throw Error(ErrorCode::BadMagic, "missing FTEN magic");
  if (bytes.size() < kPreambleSize) throw Error(ErrorCode::TruncatedFile, "header shorter than 8 bytes");
  if (bytes[4] != kVersion) throw Error(ErrorCode::BadMagic, "unknown format version " + std::to_string(bytes[4]));
  if (bytes[5] != 1 && bytes[5] != 2)
    throw Error(ErrorCode::UnsupportedDtype, "dtype code " + std::to_string(bytes[5]));
  if (bytes[7] != 0) throw Error(ErrorCode::BadMagic, "reserved header byte is not zero");

  TensorFile t;
  t.dtype = static_cast<DType>(bytes[5]);
  const std::size_t rank = bytes[6];
  if (rank == 0 || rank > kMaxRank) throw Error(ErrorCode::ShapeMismatch, "ndim " + std::to_string(rank));
  const std::size_t header = kPreambleSize + 8 * rank;
  if (bytes.size() < header) throw Error(ErrorCode::TruncatedFile, "dimension table cut short");

  std::uint64_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    auto d = detail::get_le<std::uint64_t>(bytes.data() + kPreambleSize + 8 * i);
    if (d == 0) throw Error(ErrorCode::ShapeMismatch, "zero-sized dimension");
    if (count > (std::uint64_t{1} << 48) / d) throw Error(ErrorCode::ShapeMismatch, "declared size overflows");
    count *= d;
    t.shape.push_back(d);
  }

  const std::size_t width = dtype_size(t.dtype);
  const std::size_t payload = bytes.size() - header;
  if (payload < count * width)
    throw Error(ErrorCode::TruncatedFile, "expected " + std::to_string(count * width) + " payload bytes, found " +
                                              std::to_string(payload));
  if (payload != count * width)
    throw Error(ErrorCode::ShapeMismatch, "payload has " + std::to_string(payload - count * width) +
                                              " trailing bytes beyond declared shape");

  t.data.resize(count);
  const std::uint8_t* p = bytes.data() + header;
  for (std::size_t i = 0; i < count; ++i, p += width)
    t.data[i] = t.dtype == DType::F32 ? double(detail::get_le<float>(p)) : detail::get_le<double>(p);
  return t;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "short write to " + path.string());
}

inline TensorFile read_tensor(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  try {
    return decode_tensor(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

inline void write_tensor(const std::filesystem::path& path, const TensorFile& tensor) {
  write_file_bytes(path, encode_tensor(tensor));
}

inline TensorFile make_tensor(DType dtype, std::vector<std::uint64_t> shape, std::vector<double> data) {
  TensorFile t{dtype, std::move(shape), std::move(data)};
  if (dtype == DType::F32)
    for (auto& v : t.data) v = static_cast<float>(v);
  validate(t);
  return t;
}

}  // namespace decomp
