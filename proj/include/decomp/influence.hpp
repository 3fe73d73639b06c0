#pragma once

// Class-specific influential feature selection.
//
// For every instance of a class the k1 largest feature components (by l1
// magnitude, i.e. the channel activation sum) are noted. The occurrences are
// pooled into a per-class histogram over feature indices and the k2 most
// frequent indices become that class's influential set.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "decomp/detail/parallel.hpp"
#include "decomp/error.hpp"
#include "decomp/features.hpp"
#include "decomp/head.hpp"

namespace decomp {

/// l1 norm of every channel of an m x h x w block (values are post-ReLU, so
/// this is the plain sum). A pooled m-vector maps to itself.
inline std::vector<double> channel_l1(std::span<const double> block, std::size_t channels) {
  const std::size_t area = block.size() / channels;
  std::vector<double> out(channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    double acc = 0.0;
    for (std::size_t p = 0; p < area; ++p) acc += std::abs(block[c * area + p]);
    out[c] = acc;
  }
  return out;
}

/// Indices of the k largest components, largest first. Equal values keep
/// ascending index order, so zeros fill the tail when fewer than k are positive.
inline std::vector<std::size_t> topk_l1_indices(std::span<const double> v, std::size_t k) {
  if (k > v.size())
    throw Error(ErrorCode::KTooLarge, "k=" + std::to_string(k) + " exceeds dimension " + std::to_string(v.size()));
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) { return v[a] > v[b] || (v[a] == v[b] && a < b); };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), before);
  idx.resize(k);
  return idx;
}

/// Occurrence counts of feature indices across the per-instance top-k1 sets
/// of one class, plus the summed component value at those occurrences.
struct IndexHistogram {
  std::vector<std::size_t> counts;  // indexed by feature, size m
  std::vector<double> mass;         // indexed by feature, size m
  std::size_t num_instances = 0;
  std::size_t k1 = 0;

  std::size_t dim() const { return counts.size(); }

  std::size_t support() const {
    return static_cast<std::size_t>(std::count_if(counts.begin(), counts.end(), [](auto n) { return n > 0; }));
  }

  std::size_t total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

  /// Indices with nonzero count, ordered by (count desc, mass desc, index asc).
  std::vector<std::size_t> ranking() const {
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < counts.size(); ++j)
      if (counts[j] > 0) idx.push_back(j);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      if (counts[a] != counts[b]) return counts[a] > counts[b];
      if (mass[a] != mass[b]) return mass[a] > mass[b];
      return a < b;
    });
    return idx;
  }
};

/// Histogram over an N x m matrix of pooled (l1) instance vectors.
inline IndexHistogram aggregate_histogram(const FeatureMatrix& instances, std::size_t k1) {
  if (instances.empty()) throw Error(ErrorCode::EmptyClass, "class has no instances");
  IndexHistogram h;
  h.counts.assign(instances.cols(), 0);
  h.mass.assign(instances.cols(), 0.0);
  h.num_instances = instances.rows();
  h.k1 = k1;
  for (std::size_t i = 0; i < instances.rows(); ++i) {
    const auto v = instances.row(i);
    for (auto j : topk_l1_indices(v, k1)) {
      ++h.counts[j];
      h.mass[j] += v[j];
    }
  }
  return h;
}

inline std::vector<std::size_t> select_influential(const IndexHistogram& hist, std::size_t k2) {
  auto ranked = hist.ranking();
  if (ranked.size() < k2)
    throw Error(ErrorCode::InsufficientSupport, "histogram has " + std::to_string(ranked.size()) +
                                                    " distinct indices, k2=" + std::to_string(k2));
  ranked.resize(k2);
  return ranked;
}

/// Per-class l1-pooled instance vectors (rank-4 channels are summed spatially).
inline FeatureMatrix l1_pooled(const ClassFeatures& cls) {
  FeatureMatrix out(0, cls.channels());
  for (std::size_t i = 0; i < cls.instances(); ++i) out.append_row(channel_l1(cls.instance(i), cls.channels()));
  return out;
}

/// Mapping from class label to its ordered influential feature indices.
struct InfluenceMap {
  std::size_t k1 = 0;
  std::size_t k2 = 0;
  std::size_t dim = 0;
  std::vector<std::vector<std::size_t>> classes;  // classes[label]

  bool operator==(const InfluenceMap&) const = default;
};

namespace detail {
inline Error label_error(int label, const Error& e) {
  return Error(e.code(), "class " + std::to_string(label) + ": " + e.what());
}
}  // namespace detail

/// Per-class histograms for a fixed k1, computed in parallel over classes.
inline std::vector<IndexHistogram> class_histograms(std::span<const ClassFeatures> classes, std::size_t k1,
                                                    unsigned threads = 1) {
  std::vector<IndexHistogram> out(classes.size());
  detail::parallel_for(classes.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t c = begin; c < end; ++c) {
      try {
        out[c] = aggregate_histogram(l1_pooled(classes[c]), k1);
      } catch (const Error& e) {
        throw detail::label_error(classes[c].label, e);
      }
    }
  });
  return out;
}

/// Builds the influence map. classes must be ordered by label 0..c-1.
inline InfluenceMap build_influence_map(std::span<const ClassFeatures> classes, std::size_t k1, std::size_t k2,
                                        unsigned threads = 1) {
  if (classes.empty()) throw Error(ErrorCode::EmptyDataset, "no classes");
  InfluenceMap map;
  map.k1 = k1;
  map.k2 = k2;
  map.dim = classes.front().channels();
  if (k1 > map.dim) throw Error(ErrorCode::KTooLarge, "k1=" + std::to_string(k1) + " > m=" + std::to_string(map.dim));
  const auto hists = class_histograms(classes, k1, threads);
  map.classes.resize(classes.size());
  for (std::size_t c = 0; c < classes.size(); ++c) {
    try {
      map.classes[c] = select_influential(hists[c], k2);
    } catch (const Error& e) {
      throw detail::label_error(classes[c].label, e);
    }
  }
  return map;
}

/// Share of the vector's total mass held by its k largest components. A
/// zero vector is fully covered by definition.
inline double coverage_fraction(std::span<const double> v, std::size_t k) {
  if (k > v.size()) throw Error(ErrorCode::KTooLarge, "k=" + std::to_string(k) + " > m=" + std::to_string(v.size()));
  std::vector<double> sorted(v.begin(), v.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double total = std::accumulate(sorted.begin(), sorted.end(), 0.0);
  if (total == 0.0) return 1.0;
  if (k == v.size()) return 1.0;
  const double top = std::accumulate(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), 0.0);
  return top / total;
}

enum class CoverageMode {
  InstanceMean,  // mean over all instances of per-instance coverage
  ClassMean,     // mean over classes of the coverage of each class's summed vector
};

namespace detail {

/// Cumulative coverage curve of one vector: curve[k-1] = coverage at k.
inline std::vector<double> coverage_curve(std::span<const double> v) {
  std::vector<double> sorted(v.begin(), v.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double total = std::accumulate(sorted.begin(), sorted.end(), 0.0);
  std::vector<double> curve(v.size(), 1.0);
  if (total == 0.0) return curve;
  double run = 0.0;
  for (std::size_t k = 0; k + 1 < v.size(); ++k) {
    run += sorted[k];
    curve[k] = run / total;
  }
  return curve;
}

}  // namespace detail

/// Smallest k1 whose mean coverage reaches target (0 < target <= 1).
inline std::size_t choose_k1_by_coverage(std::span<const ClassFeatures> classes, double target,
                                         CoverageMode mode = CoverageMode::InstanceMean) {
  if (!(target > 0.0 && target <= 1.0)) throw Error(ErrorCode::SpecInvalid, "coverage target must be in (0, 1]");
  if (classes.empty()) throw Error(ErrorCode::EmptyDataset, "no classes");
  const std::size_t m = classes.front().channels();
  std::vector<double> mean_curve(m, 0.0);
  std::size_t terms = 0;
  for (const auto& cls : classes) {
    const auto pooled = l1_pooled(cls);
    if (mode == CoverageMode::InstanceMean) {
      for (std::size_t i = 0; i < pooled.rows(); ++i) {
        const auto curve = detail::coverage_curve(pooled.row(i));
        for (std::size_t k = 0; k < m; ++k) mean_curve[k] += curve[k];
        ++terms;
      }
    } else {
      std::vector<double> summed(m, 0.0);
      for (std::size_t i = 0; i < pooled.rows(); ++i)
        for (std::size_t j = 0; j < m; ++j) summed[j] += pooled(i, j);
      const auto curve = detail::coverage_curve(summed);
      for (std::size_t k = 0; k < m; ++k) mean_curve[k] += curve[k];
      ++terms;
    }
  }
  if (terms == 0) throw Error(ErrorCode::EmptyDataset, "no instances");
  for (std::size_t k = 0; k < m; ++k)
    if (mean_curve[k] / double(terms) >= target) return k + 1;
  return m;
}

inline nlohmann::ordered_json influence_map_json(const InfluenceMap& map) {
  nlohmann::ordered_json j;
  j["k1"] = map.k1;
  j["k2"] = map.k2;
  j["m"] = map.dim;
  j["classes"] = nlohmann::ordered_json::object();
  for (std::size_t c = 0; c < map.classes.size(); ++c) j["classes"][std::to_string(c)] = map.classes[c];
  return j;
}

inline InfluenceMap influence_map_from_json(const nlohmann::json& j) {
  InfluenceMap map;
  try {
    map.k1 = j.at("k1").get<std::size_t>();
    map.k2 = j.at("k2").get<std::size_t>();
    map.dim = j.at("m").get<std::size_t>();
    std::map<int, std::vector<std::size_t>> by_label;
    for (const auto& [key, value] : j.at("classes").items()) by_label[std::stoi(key)] = value.get<std::vector<std::size_t>>();
    int expected = 0;
    for (auto& [label, indices] : by_label) {
      if (label != expected) throw Error(ErrorCode::MissingClass, "influence map lacks class " + std::to_string(expected));
      for (auto idx : indices)
        if (idx >= map.dim) throw Error(ErrorCode::IndexOutOfRange, "index " + std::to_string(idx));
      map.classes.push_back(std::move(indices));
      ++expected;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ManifestInvalid, std::string("influence map: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw Error(ErrorCode::ManifestInvalid, "influence map class keys must be integer labels");
  }
  return map;
}

/// Map that assigns every class all m features, in ascending order.
inline InfluenceMap full_width_map(std::size_t classes, std::size_t dim) {
  InfluenceMap map{dim, dim, dim, {}};
  std::vector<std::size_t> all(dim);
  std::iota(all.begin(), all.end(), std::size_t{0});
  map.classes.assign(classes, all);
  return map;
}

inline DecomposedHead decompose(const ClassifierHead& head, const InfluenceMap& map) {
  return decompose(head, std::span<const std::vector<std::size_t>>(map.classes), map.dim);
}

}  // namespace decomp
