#pragma once

// Synthetic "planted feature" datasets with known influential sets.
//
// Each class owns k* feature indices (pairwise disjoint across classes) that
// fire strongly, |N(signal_mean, signal_sd)|, while every other feature
// carries |N(noise_mean, noise_sd)| background. The matching head weights a
// class's planted indices by 1 and everything else by U(-0.01, 0.01).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "decomp/detail/rng.hpp"
#include "decomp/error.hpp"
#include "decomp/features.hpp"
#include "decomp/head.hpp"

namespace decomp {

struct PlantedSpec {
  std::size_t classes = 4;
  std::size_t dim = 32;
  std::size_t planted_per_class = 3;
  std::size_t per_class = 200;
  double signal_mean = 5.0;
  double noise_mean = 0.1;
  double signal_sd = 1.0;
  double noise_sd = 0.5;  // N(noise_mean, 0.25) read as variance 0.25
  std::uint64_t seed = 0;
  std::size_t spatial = 0;  // side of square spatial maps; 0 = pooled rank-2 features only

  void validate() const {
    if (classes == 0 || dim == 0 || per_class == 0 || planted_per_class == 0)
      throw Error(ErrorCode::SpecInvalid, "planted spec has an empty dimension");
    if (planted_per_class * classes > dim) throw Error(ErrorCode::SpecInvalid, "k* x c exceeds m");
    // Equal means are allowed: that is the indistinguishable negative control.
    if (!(noise_mean >= 0.0 && signal_mean >= noise_mean))
      throw Error(ErrorCode::SpecInvalid, "need signal_mean >= noise_mean >= 0");
    if (!(signal_sd >= 0.0 && noise_sd >= 0.0)) throw Error(ErrorCode::SpecInvalid, "negative standard deviation");
  }
};

struct PlantedData {
  std::vector<ClassFeatures> classes;          // by label
  ClassifierHead head;
  std::vector<std::vector<std::size_t>> planted;  // ascending, by label
};

namespace detail {

inline double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

/// Spatial map with unit mean: a bump at a channel-specific position for
/// planted channels, a mild random texture otherwise.
inline std::vector<double> unit_mean_pattern(std::size_t side, bool bump, std::mt19937_64& rng) {
  std::vector<double> p(side * side);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (bump) {
    const double cy = u(rng) * double(side - 1), cx = u(rng) * double(side - 1);
    const double width = std::max(1.0, double(side) / 4.0);
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) {
        const double d2 = (double(y) - cy) * (double(y) - cy) + (double(x) - cx) * (double(x) - cx);
        p[y * side + x] = 0.05 + std::exp(-d2 / (2.0 * width * width));
      }
  } else {
    for (auto& v : p) v = 0.5 + u(rng);
  }
  const double mean = std::accumulate(p.begin(), p.end(), 0.0) / double(p.size());
  for (auto& v : p) v /= mean;
  return p;
}

}  // namespace detail

/// Generates a planted dataset. All values are rounded to f32 so the data
/// survives an f32 tensor round trip unchanged.
inline PlantedData generate_planted(const PlantedSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(detail::splitmix64(spec.seed));
  const std::size_t m = spec.dim, c = spec.classes, k = spec.planted_per_class;

  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  PlantedData out;
  out.planted.resize(c);
  for (std::size_t y = 0; y < c; ++y) {
    out.planted[y].assign(perm.begin() + static_cast<std::ptrdiff_t>(y * k),
                          perm.begin() + static_cast<std::ptrdiff_t>((y + 1) * k));
    std::sort(out.planted[y].begin(), out.planted[y].end());
  }

  out.head.classes = c;
  out.head.dim = m;
  out.head.weights.resize(c * m);
  std::uniform_real_distribution<double> small(-0.01, 0.01);
  for (auto& w : out.head.weights) w = detail::to_f32(small(rng));
  for (std::size_t y = 0; y < c; ++y)
    for (auto j : out.planted[y]) out.head.weights[y * m + j] = 1.0;

  std::normal_distribution<double> signal(spec.signal_mean, spec.signal_sd);
  std::normal_distribution<double> noise(spec.noise_mean, spec.noise_sd);
  const std::size_t side = spec.spatial;
  const std::size_t area = side == 0 ? 1 : side * side;
  for (std::size_t y = 0; y < c; ++y) {
    std::vector<char> is_planted(m, 0);
    for (auto j : out.planted[y]) is_planted[j] = 1;
    ClassFeatures cls;
    cls.label = static_cast<int>(y);
    cls.name = "class_" + std::to_string(y);
    cls.tensor.dtype = DType::F32;
    cls.tensor.shape = side == 0 ? std::vector<std::uint64_t>{spec.per_class, m}
                                 : std::vector<std::uint64_t>{spec.per_class, m, side, side};
    cls.tensor.data.reserve(spec.per_class * m * area);
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const double level = std::abs(is_planted[j] ? signal(rng) : noise(rng));
        if (side == 0) {
          cls.tensor.data.push_back(detail::to_f32(level));
        } else {
          for (double p : detail::unit_mean_pattern(side, is_planted[j], rng))
            cls.tensor.data.push_back(detail::to_f32(level * p));
        }
      }
    }
    out.classes.push_back(std::move(cls));
  }
  return out;
}

}  // namespace decomp
