#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "decomp/detail/rng.hpp"
#include "decomp/error.hpp"
#include "decomp/tensor_io.hpp"

namespace decomp {

enum class Centering {
  SpatialMean,       // each selected channel minus its own spatial mean
  CrossChannelMean,  // selected-channel mean minus the mean over all channels at each position
};

struct AttributionMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;  // row-major, in [0, 1]
  std::size_t source_height = 0;
  std::size_t source_width = 0;
  int label = -1;
  std::vector<std::size_t> indices;

  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

/// Bilinear resize with aligned corners: target pixel (i, j) samples source
/// coordinate (i (h-1)/(H-1), j (w-1)/(W-1)).
inline std::vector<double> bilinear_upsample(std::span<const double> src, std::size_t h, std::size_t w, std::size_t th,
                                             std::size_t tw) {
  std::vector<double> out(th * tw);
  const double sy = th > 1 ? double(h - 1) / double(th - 1) : 0.0;
  const double sx = tw > 1 ? double(w - 1) / double(tw - 1) : 0.0;
  for (std::size_t i = 0; i < th; ++i) {
    const double fy = double(i) * sy;
    const auto y0 = std::min(static_cast<std::size_t>(fy), h - 1);
    const auto y1 = std::min(y0 + 1, h - 1);
    const double ay = fy - double(y0);
    for (std::size_t j = 0; j < tw; ++j) {
      const double fx = double(j) * sx;
      const auto x0 = std::min(static_cast<std::size_t>(fx), w - 1);
      const auto x1 = std::min(x0 + 1, w - 1);
      const double ax = fx - double(x0);
      const double top = (1.0 - ax) * src[y0 * w + x0] + ax * src[y0 * w + x1];
      const double bottom = (1.0 - ax) * src[y1 * w + x0] + ax * src[y1 * w + x1];
      out[i * tw + j] = (1.0 - ay) * top + ay * bottom;
    }
  }
  return out;
}

/// Centered mean activation of the selected channels of one m x h x w block.
inline std::vector<double> raw_attribution(std::span<const double> block, std::size_t channels, std::size_t h,
                                           std::size_t w, std::span<const std::size_t> indices,
                                           Centering centering = Centering::SpatialMean) {
  if (indices.empty()) throw Error(ErrorCode::EmptyIndexSet, "attribution needs at least one channel");
  if (block.size() != channels * h * w) throw Error(ErrorCode::ShapeMismatch, "block is not m x h x w");
  for (auto c : indices)
    if (c >= channels) throw Error(ErrorCode::IndexOutOfRange, "channel " + std::to_string(c));
  const std::size_t area = h * w;
  std::vector<double> raw(area, 0.0);
  for (auto c : indices) {
    const double* ch = block.data() + c * area;
    double mean = 0.0;
    if (centering == Centering::SpatialMean) {
      for (std::size_t p = 0; p < area; ++p) mean += ch[p];
      mean /= double(area);
    }
    for (std::size_t p = 0; p < area; ++p) raw[p] += ch[p] - mean;
  }
  for (auto& v : raw) v /= double(indices.size());
  if (centering == Centering::CrossChannelMean) {
    for (std::size_t p = 0; p < area; ++p) {
      double all = 0.0;
      for (std::size_t c = 0; c < channels; ++c) all += block[c * area + p];
      raw[p] -= all / double(channels);
    }
  }
  return raw;
}

/// Min-max scaling to [0, 1]. A map whose range is negligible relative to
/// its magnitude (rounding residue of a constant map) becomes all 0.5.
inline void normalize_unit(std::vector<double>& v) {
  if (v.empty()) return;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double low = *lo, range = *hi - *lo;
  const double magnitude = std::max({1.0, std::abs(*lo), std::abs(*hi)});
  if (!(range > 1e-12 * magnitude)) {
    std::fill(v.begin(), v.end(), 0.5);
    return;
  }
  for (auto& x : v) x = (x - low) / range;
}

inline AttributionMap attribution_map(std::span<const double> block, std::size_t channels, std::size_t h,
                                      std::size_t w, std::span<const std::size_t> indices, std::size_t target_h,
                                      std::size_t target_w, Centering centering = Centering::SpatialMean) {
  if (target_h < h || target_w < w) throw Error(ErrorCode::ShapeMismatch, "target size smaller than source");
  AttributionMap map;
  map.values = bilinear_upsample(raw_attribution(block, channels, h, w, indices, centering), h, w, target_h, target_w);
  normalize_unit(map.values);
  map.height = target_h;
  map.width = target_w;
  map.source_height = h;
  map.source_width = w;
  map.indices.assign(indices.begin(), indices.end());
  return map;
}

/// count channels drawn uniformly from outside indices, ascending.
inline std::vector<std::size_t> sample_complement(std::span<const std::size_t> indices, std::size_t channels,
                                                  std::size_t count, std::uint64_t seed) {
  std::vector<char> taken(channels, 0);
  for (auto c : indices) taken.at(c) = 1;
  std::vector<std::size_t> pool;
  for (std::size_t c = 0; c < channels; ++c)
    if (!taken[c]) pool.push_back(c);
  std::mt19937_64 rng(detail::splitmix64(seed));
  count = std::min(count, pool.size());
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

/// Binary PGM (P5, maxval 255); v maps to floor(v * 255 + 0.5).
inline std::vector<std::uint8_t> encode_pgm(const AttributionMap& map) {
  const std::string header = "P5\n" + std::to_string(map.width) + " " + std::to_string(map.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + map.values.size());
  for (double v : map.values) {
    const double q = std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
    out.push_back(static_cast<std::uint8_t>(q));
  }
  return out;
}

inline void write_pgm(const AttributionMap& map, const std::filesystem::path& path) {
  write_file_bytes(path, encode_pgm(map));
}

}  // namespace decomp
