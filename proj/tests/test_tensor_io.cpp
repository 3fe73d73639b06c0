#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <random>

#include "decomp/tensor_io.hpp"
#include "test_support.hpp"

using namespace decomp;
using decomp::testing::TempDir;
using decomp::testing::code_of;

namespace {

std::vector<std::uint8_t> header(std::uint8_t dtype, std::vector<std::uint64_t> dims) {
  std::vector<std::uint8_t> b = {'F', 'T', 'E', 'N', 1, dtype, static_cast<std::uint8_t>(dims.size()), 0};
  for (auto d : dims)
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>((d >> (8 * i)) & 0xff));
  return b;
}

}  // namespace

TEST_CASE("2x3 f32 tensor round-trips through a file") {
  TempDir dir("tio");
  const auto t = make_tensor(DType::F32, {2, 3}, {1, 2, 3, 4, 5, 6});
  write_tensor(dir / "a.ften", t);
  const auto back = read_tensor(dir / "a.ften");
  CHECK(back == t);
  CHECK(back.shape == std::vector<std::uint64_t>{2, 3});
  CHECK(back.data == std::vector<double>{1, 2, 3, 4, 5, 6});
}

TEST_CASE("byte layout of a small f32 tensor") {
  const auto bytes = encode_tensor(make_tensor(DType::F32, {2, 3}, {1, 2, 3, 4, 5, 6}));
  auto expected = header(1, {2, 3});
  for (float v : {1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f}) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int i = 0; i < 4; ++i) expected.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
  }
  CHECK(bytes == expected);
}

TEST_CASE("scalar tensor writes header plus one element") {
  const auto bytes = encode_tensor(make_tensor(DType::F32, {1}, {3.5}));
  CHECK(bytes.size() == 8 + 8 + 4);
}

TEST_CASE("1x1 f64 zero has an all-zero payload") {
  const auto bytes = encode_tensor(make_tensor(DType::F64, {1, 1}, {0.0}));
  REQUIRE(bytes.size() == 8 + 16 + 8);
  for (std::size_t i = 24; i < 32; ++i) CHECK(bytes[i] == 0);
  CHECK(bytes[5] == 2);
}

TEST_CASE("random 64-dim vector round-trips bitwise") {
  TempDir dir("tio");
  std::mt19937_64 rng(7);
  for (auto dtype : {DType::F32, DType::F64}) {
    const auto t = make_tensor(dtype, {64}, testing::uniform_vector(rng, 64, -1e3, 1e3));
    write_tensor(dir / "v.ften", t);
    const auto first = read_file_bytes(dir / "v.ften");
    const auto back = read_tensor(dir / "v.ften");
    REQUIRE(back.data.size() == 64);
    CHECK(std::memcmp(back.data.data(), t.data.data(), 64 * sizeof(double)) == 0);
    write_tensor(dir / "v2.ften", back);
    CHECK(read_file_bytes(dir / "v2.ften") == first);
  }
}

TEST_CASE("read(write(t)) == t over dtype x rank with random shapes") {
  std::mt19937_64 rng(20240611);
  std::uniform_int_distribution<std::uint64_t> dim(1, 16);
  for (auto dtype : {DType::F32, DType::F64}) {
    for (std::size_t rank = 1; rank <= 4; ++rank) {
      for (int trial = 0; trial < 8; ++trial) {
        std::vector<std::uint64_t> shape(rank);
        std::uint64_t n = 1;
        for (auto& d : shape) n *= (d = dim(rng));
        const auto t = make_tensor(dtype, shape, testing::uniform_vector(rng, n, -10, 10));
        const auto bytes = encode_tensor(t);
        CHECK(decode_tensor(bytes) == t);
        CHECK(encode_tensor(decode_tensor(bytes)) == bytes);
      }
    }
  }
}

TEST_CASE("decoder error cases") {
  SECTION("bad magic") {
    std::vector<std::uint8_t> b = {'X', 'X', 'X', 'X', 1, 1, 1, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    CHECK(code_of([&] { decode_tensor(b); }) == ErrorCode::BadMagic);
  }
  SECTION("shape 4x4 with only 8 f32 values is truncated") {
    auto b = header(1, {4, 4});
    b.resize(b.size() + 8 * 4, 0);
    CHECK(code_of([&] { decode_tensor(b); }) == ErrorCode::TruncatedFile);
  }
  SECTION("header cut inside the dimension table") {
    auto b = header(1, {4, 4});
    b.resize(12);
    CHECK(code_of([&] { decode_tensor(b); }) == ErrorCode::TruncatedFile);
  }
  SECTION("payload longer than declared") {
    auto b = header(2, {2});
    b.resize(b.size() + 3 * 8, 0);
    CHECK(code_of([&] { decode_tensor(b); }) == ErrorCode::ShapeMismatch);
  }
  SECTION("unknown dtype code") {
    auto b = header(3, {1});
    b.resize(b.size() + 8, 0);
    CHECK(code_of([&] { decode_tensor(b); }) == ErrorCode::UnsupportedDtype);
  }
  SECTION("rank outside 1..4") {
    auto b = header(1, {1, 1, 1, 1, 1});
    b.resize(b.size() + 4, 0);
    CHECK(code_of([&] { decode_tensor(b); }) == ErrorCode::ShapeMismatch);
  }
  SECTION("zero-sized dimension") {
    auto b = header(1, {0});
    CHECK(code_of([&] { decode_tensor(b); }) == ErrorCode::ShapeMismatch);
  }
}

TEST_CASE("writer rejects invalid tensors and unwritable paths") {
  TensorFile bad{DType::F32, {2, 2}, {1, 2, 3}};
  CHECK(code_of([&] { encode_tensor(bad); }) == ErrorCode::ShapeMismatch);
  const auto ok = make_tensor(DType::F32, {1}, {1.0});
  CHECK(code_of([&] { write_tensor("/nonexistent-dir/x.ften", ok); }) == ErrorCode::IoFailure);
  CHECK(code_of([&] { read_tensor("/nonexistent-dir/x.ften"); }) == ErrorCode::IoFailure);
}
