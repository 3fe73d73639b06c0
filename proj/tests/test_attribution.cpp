#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "test_support.hpp"

#ifdef DECOMP_HAVE_OPENCV
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#endif

using namespace decomp;
using decomp::testing::code_of;
using decomp::testing::TempDir;
using decomp::testing::uniform_vector;

namespace {

// Closed-form bilinear interpolation of a 2x2 source: f(u, v) with u, v in [0, 1].
double bilinear_2x2(const std::vector<double>& s, double u, double v) {
  return s[0] * (1 - u) * (1 - v) + s[1] * (1 - u) * v + s[2] * u * (1 - v) + s[3] * u * v;
}

}  // namespace

TEST_CASE("bilinear upsampling of a 2x2 map matches the closed form") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto src = uniform_vector(rng, 4, -2.0, 2.0);
    const std::size_t th = 2 + rng() % 30, tw = 2 + rng() % 30;
    const auto out = bilinear_upsample(src, 2, 2, th, tw);
    for (std::size_t i = 0; i < th; ++i)
      for (std::size_t j = 0; j < tw; ++j)
        CHECK(out[i * tw + j] ==
              Catch::Approx(bilinear_2x2(src, double(i) / double(th - 1), double(j) / double(tw - 1))).margin(1e-12));
  }
}

TEST_CASE("bilinear upsampling preserves corners and affine maps") {
  // f(y, x) = 2y - 3x + 1 on a 3x4 grid stays affine after resizing.
  std::vector<double> src;
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x) src.push_back(2.0 * y - 3.0 * x + 1.0);
  const auto out = bilinear_upsample(src, 3, 4, 9, 13);
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t j = 0; j < 13; ++j) {
      const double y = double(i) * 2.0 / 8.0, x = double(j) * 3.0 / 12.0;
      CHECK(out[i * 13 + j] == Catch::Approx(2.0 * y - 3.0 * x + 1.0).margin(1e-12));
    }
  CHECK(out.front() == src.front());
  CHECK(out.back() == src.back());
  CHECK(bilinear_upsample(src, 3, 4, 3, 4) == src);
}

TEST_CASE("raw attribution with spatial-mean centering") {
  // Two 2x2 channels; channel 0 = (1,2,3,4), channel 1 = (0,0,0,8).
  const std::vector<double> block = {1, 2, 3, 4, 0, 0, 0, 8};
  const std::vector<std::size_t> both = {0, 1};
  const auto r = raw_attribution(block, 2, 2, 2, both);
  // Centered: (-1.5,-0.5,0.5,1.5) and (-2,-2,-2,6); mean of the two.
  CHECK(r == std::vector<double>{-1.75, -1.25, -0.75, 3.75});
  const std::vector<std::size_t> first = {0};
  const auto cross = raw_attribution(block, 2, 2, 2, first, Centering::CrossChannelMean);
  // Channel 0 minus the all-channel mean (0.5, 1, 1.5, 6).
  CHECK(cross == std::vector<double>{0.5, 1.0, 1.5, -2.0});
}

TEST_CASE("raw attribution validation") {
  const std::vector<double> block(8, 1.0);
  const std::vector<std::size_t> none, bad = {2}, ok = {0};
  CHECK(code_of([&] { raw_attribution(block, 2, 2, 2, none); }) == ErrorCode::EmptyIndexSet);
  CHECK(code_of([&] { raw_attribution(block, 2, 2, 2, bad); }) == ErrorCode::IndexOutOfRange);
  CHECK(code_of([&] { raw_attribution(block, 2, 3, 2, ok); }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([&] { attribution_map(block, 2, 2, 2, ok, 1, 1); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("normalization") {
  std::vector<double> v = {2, 4, 3};
  normalize_unit(v);
  CHECK(v == std::vector<double>{0.0, 1.0, 0.5});
  std::vector<double> flat(5, 3.25);
  normalize_unit(flat);
  CHECK(flat == std::vector<double>(5, 0.5));
  std::vector<double> residue = {1e6, 1e6 + 1e-7};
  normalize_unit(residue);
  CHECK(residue == std::vector<double>{0.5, 0.5});
}

TEST_CASE("attribution maps lie in [0, 1] and reach both ends") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const std::size_t m = 8, h = 3 + rng() % 5, w = 3 + rng() % 5;
    const auto block = uniform_vector(rng, m * h * w);
    const std::vector<std::size_t> idx = {1, 5};
    const auto map = attribution_map(block, m, h, w, idx, 32, 40, t % 2 ? Centering::CrossChannelMean : Centering::SpatialMean);
    CHECK(map.values.size() == 32 * 40);
    const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
    CHECK(*lo == 0.0);
    CHECK(*hi == 1.0);
    CHECK(map.source_height == h);
  }
}

TEST_CASE("a constant block yields a flat 0.5 map") {
  const std::vector<double> block(2 * 4 * 4, 1.0);
  const std::vector<std::size_t> idx = {0};
  const auto map = attribution_map(block, 2, 4, 4, idx, 16, 16);
  for (double v : map.values) CHECK(v == 0.5);
}

TEST_CASE("normalization keeps the raw peak location at source resolution") {
  PlantedSpec spec;
  spec.per_class = 2;
  spec.spatial = 7;
  const auto data = generate_planted(spec);
  const auto& cls = data.classes[0];
  const auto map = attribution_map(cls.instance(0), cls.channels(), 7, 7, data.planted[0], 7, 7);
  const auto peak = std::max_element(map.values.begin(), map.values.end()) - map.values.begin();
  const auto raw = raw_attribution(cls.instance(0), cls.channels(), 7, 7, data.planted[0]);
  CHECK(std::max_element(raw.begin(), raw.end()) - raw.begin() == peak);
  CHECK(raw[std::size_t(peak)] > 0.0);
}

TEST_CASE("complement sampling avoids the influential set") {
  const std::vector<std::size_t> idx = {0, 3, 5};
  const auto s = sample_complement(idx, 10, 3, 4);
  CHECK(s.size() == 3);
  CHECK(std::is_sorted(s.begin(), s.end()));
  for (auto c : s) CHECK(std::find(idx.begin(), idx.end(), c) == idx.end());
  CHECK(sample_complement(idx, 10, 3, 4) == s);
  CHECK(sample_complement(idx, 6, 10, 4) == std::vector<std::size_t>{1, 2, 4});
}

TEST_CASE("PGM encoding") {
  AttributionMap map;
  map.height = 1;
  map.width = 4;
  map.values = {0.0, 0.5, 1.0, 0.2};
  const auto bytes = encode_pgm(map);
  const std::string header = "P5\n4 1\n255\n";
  REQUIRE(bytes.size() == header.size() + 4);
  CHECK(std::string(bytes.begin(), bytes.begin() + long(header.size())) == header);
  CHECK(bytes[header.size() + 0] == 0);
  CHECK(bytes[header.size() + 1] == 128);  // floor(127.5 + 0.5)
  CHECK(bytes[header.size() + 2] == 255);
  CHECK(bytes[header.size() + 3] == 51);
}

#ifdef DECOMP_HAVE_OPENCV
TEST_CASE("PGM files decode with an independent reader") {
  TempDir dir("pgm");
  std::mt19937_64 rng(3);
  const auto block = uniform_vector(rng, 4 * 5 * 6);
  const std::vector<std::size_t> idx = {0, 2};
  const auto map = attribution_map(block, 4, 5, 6, idx, 20, 30);
  write_pgm(map, dir / "m.pgm");
  const cv::Mat img = cv::imread((dir / "m.pgm").string(), cv::IMREAD_UNCHANGED);
  REQUIRE(img.rows == 20);
  REQUIRE(img.cols == 30);
  REQUIRE(img.type() == CV_8UC1);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 30; ++x)
      CHECK(int(img.at<std::uint8_t>(y, x)) == int(std::floor(map.at(std::size_t(y), std::size_t(x)) * 255.0 + 0.5)));
}
#endif
