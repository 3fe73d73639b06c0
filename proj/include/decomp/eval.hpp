#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "decomp/detail/parallel.hpp"
#include "decomp/detail/rng.hpp"
#include "decomp/error.hpp"
#include "decomp/features.hpp"
#include "decomp/head.hpp"
#include "decomp/influence.hpp"

namespace decomp {

/// A_d / A_f; empty when the full head never predicts correctly.
inline std::optional<double> relative_accuracy(double decomposed, double full) {
  if (full <= 0.0) return std::nullopt;
  return decomposed / full;
}

struct EvalReport {
  double full_accuracy = 0.0;        // A_f
  double decomposed_accuracy = 0.0;  // A_d
  std::optional<double> relative;   // r_A
  std::vector<double> per_class_full;
  std::vector<double> per_class_decomposed;
  std::size_t instances = 0;
  std::size_t k1 = 0;
  std::size_t k2 = 0;
  std::uint64_t seed = 0;
};

struct EvalOptions {
  unsigned threads = 1;
  std::size_t k1 = 0;  // echoed only
  std::size_t k2 = 0;
  std::uint64_t seed = 0;
};

/// Top-1 accuracy of the full and decomposed heads on a labeled set.
/// All reported numbers come from integer hit counts, so they do not depend
/// on instance order or thread count.
inline EvalReport evaluate(const LabeledSet& data, const ClassifierHead& head, const DecomposedHead& dhead,
                           const EvalOptions& opts = {}) {
  if (data.size() == 0) throw Error(ErrorCode::EmptyDataset, "nothing to evaluate");
  if (dhead.classes() != head.classes) throw Error(ErrorCode::DimMismatch, "decomposed head has a different class count");
  const std::size_t c = head.classes;
  for (int y : data.labels)
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw Error(ErrorCode::MissingClass, "label " + std::to_string(y));

  std::vector<char> full_hit(data.size()), dec_hit(data.size());
  detail::parallel_for(data.size(), opts.threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto x = data.features.row(i);
      full_hit[i] = argmax(full_logits(x, head)) == data.labels[i];
      dec_hit[i] = argmax(dhead.logits(x)) == data.labels[i];
    }
  });

  std::vector<std::size_t> total(c, 0), full_ok(c, 0), dec_ok(c, 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto y = static_cast<std::size_t>(data.labels[i]);
    ++total[y];
    full_ok[y] += full_hit[i];
    dec_ok[y] += dec_hit[i];
  }
  EvalReport r;
  r.instances = data.size();
  std::size_t f = 0, d = 0;
  for (std::size_t y = 0; y < c; ++y) {
    f += full_ok[y];
    d += dec_ok[y];
    r.per_class_full.push_back(total[y] ? double(full_ok[y]) / double(total[y]) : 0.0);
    r.per_class_decomposed.push_back(total[y] ? double(dec_ok[y]) / double(total[y]) : 0.0);
  }
  r.full_accuracy = double(f) / double(data.size());
  r.decomposed_accuracy = double(d) / double(data.size());
  r.relative = relative_accuracy(r.decomposed_accuracy, r.full_accuracy);
  r.k1 = opts.k1;
  r.k2 = opts.k2;
  r.seed = opts.seed;
  return r;
}

struct SweepCell {
  std::size_t k1 = 0;
  std::size_t k2 = 0;
  bool skipped = false;  // histogram support smaller than k2 for some class
  EvalReport report;
};

/// Evaluates every (k1, k2) pair. Histograms are built once per k1 from the
/// training classes; each k2 takes a prefix of the ranked histogram.
inline std::vector<SweepCell> sweep(std::span<const ClassFeatures> train, const LabeledSet& eval_set,
                                    const ClassifierHead& head, std::span<const std::size_t> k1_grid,
                                    std::span<const std::size_t> k2_grid, unsigned threads = 1) {
  if (k1_grid.empty() || k2_grid.empty()) throw Error(ErrorCode::SpecInvalid, "sweep grids must be non-empty");
  std::vector<SweepCell> cells;
  for (auto k1 : k1_grid) {
    if (k1 > head.dim) throw Error(ErrorCode::KTooLarge, "k1=" + std::to_string(k1) + " > m");
    const auto hists = class_histograms(train, k1, threads);
    std::vector<std::vector<std::size_t>> ranked;
    for (const auto& h : hists) ranked.push_back(h.ranking());
    for (auto k2 : k2_grid) {
      if (k2 > head.dim) throw Error(ErrorCode::KTooLarge, "k2=" + std::to_string(k2) + " > m");
      SweepCell cell{k1, k2, false, {}};
      InfluenceMap map{k1, k2, head.dim, {}};
      for (const auto& r : ranked) {
        if (r.size() < k2) {
          cell.skipped = true;
          break;
        }
        map.classes.emplace_back(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(k2));
      }
      if (!cell.skipped) cell.report = evaluate(eval_set, head, decompose(head, map), {threads, k1, k2, 0});
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Noise ablation

enum class NoiseKind {
  Fitted,  // per-dimension N(mean_j, sd_j) from training features, truncated at 0
  Unit,    // N(0, 1) truncated at 0
  Zero,    // constant 0
};

struct NoiseModel {
  NoiseKind kind = NoiseKind::Fitted;
  std::vector<double> mean;
  std::vector<double> stddev;

  static NoiseModel fitted(const FeatureMatrix& train) {
    if (train.empty()) throw Error(ErrorCode::EmptyDataset, "cannot fit noise to an empty set");
    NoiseModel n{NoiseKind::Fitted, std::vector<double>(train.cols(), 0.0), std::vector<double>(train.cols(), 0.0)};
    const double rows = double(train.rows());
    for (std::size_t i = 0; i < train.rows(); ++i)
      for (std::size_t j = 0; j < train.cols(); ++j) n.mean[j] += train(i, j);
    for (auto& m : n.mean) m /= rows;
    for (std::size_t i = 0; i < train.rows(); ++i)
      for (std::size_t j = 0; j < train.cols(); ++j) {
        const double d = train(i, j) - n.mean[j];
        n.stddev[j] += d * d;
      }
    for (auto& s : n.stddev) s = std::sqrt(s / rows);
    return n;
  }

  static NoiseModel unit(std::size_t dim) {
    return {NoiseKind::Unit, std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
  }

  static NoiseModel zero(std::size_t dim) {
    return {NoiseKind::Zero, std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
  }

  /// Draw for feature j. Truncation is by rejection; a distribution with
  /// almost no mass above zero falls back to max(0, mean).
  double draw(std::size_t j, std::mt19937_64& rng) const {
    if (kind == NoiseKind::Zero) return 0.0;
    const double mu = mean[j], sd = stddev[j];
    if (sd <= 0.0) return std::max(0.0, mu);
    std::normal_distribution<double> normal(mu, sd);
    for (int attempt = 0; attempt < 256; ++attempt) {
      const double v = normal(rng);
      if (v >= 0.0) return v;
    }
    return std::max(0.0, mu);
  }
};

inline std::string_view to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::Fitted: return "fitted";
    case NoiseKind::Unit: return "unit";
    case NoiseKind::Zero: return "zero";
  }
  return "?";
}

enum class AblationTarget { Influential, Complement };

enum class ReplacementSet {
  TrueLabel,  // influential set of the instance's true class
  Union,      // union of every class's influential set
};

inline std::string_view to_string(AblationTarget t) {
  return t == AblationTarget::Influential ? "influential" : "complement";
}
inline std::string_view to_string(ReplacementSet s) { return s == ReplacementSet::TrueLabel ? "true-label" : "union"; }

struct AblationConfig {
  AblationTarget target = AblationTarget::Influential;
  ReplacementSet set = ReplacementSet::TrueLabel;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  bool full_complement = false;  // complement mode: replace every non-influential feature
};

struct AblationReport {
  double baseline_accuracy = 0.0;  // A_f on clean features
  double accuracy = 0.0;           // A_f after replacement
  double drop = 0.0;
  std::vector<double> per_class_accuracy;
  double mean_replaced = 0.0;  // features replaced per instance
  std::size_t instances = 0;
  AblationConfig config;
  NoiseKind noise = NoiseKind::Fitted;
};

namespace detail {

/// count distinct draws from pool without replacement (partial Fisher-Yates).
inline std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool, std::size_t count,
                                                           std::mt19937_64& rng) {
  count = std::min(count, pool.size());
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  return pool;
}

inline std::vector<std::size_t> complement_of(std::span<const std::size_t> set, std::size_t dim) {
  std::vector<char> in(dim, 0);
  for (auto j : set) in[j] = 1;
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < dim; ++j)
    if (!in[j]) out.push_back(j);
  return out;
}

}  // namespace detail

/// Replaces a feature subset of every instance with noise and measures the
/// full head's accuracy. Each instance draws from its own stream derived
/// from (seed, instance index), so results do not depend on thread count.
inline AblationReport ablate_noise(const LabeledSet& data, const ClassifierHead& head, const InfluenceMap& map,
                                   const NoiseModel& noise, const AblationConfig& cfg) {
  if (data.size() == 0) throw Error(ErrorCode::EmptyDataset, "nothing to ablate");
  if (map.dim != head.dim || data.dim() != head.dim)
    throw Error(ErrorCode::DimMismatch, "influence map, data and head disagree on m");
  if (map.classes.size() != head.classes) throw Error(ErrorCode::MissingClass, "influence map does not cover all classes");
  if (noise.mean.size() != head.dim) throw Error(ErrorCode::DimMismatch, "noise model dimension");

  std::vector<std::size_t> union_set;
  {
    std::vector<char> in(head.dim, 0);
    for (const auto& s : map.classes)
      for (auto j : s) in[j] = 1;
    for (std::size_t j = 0; j < head.dim; ++j)
      if (in[j]) union_set.push_back(j);
  }

  std::vector<char> clean_hit(data.size()), noisy_hit(data.size());
  std::vector<std::size_t> replaced(data.size());
  detail::parallel_for(data.size(), cfg.threads, [&](std::size_t begin, std::size_t end) {
    std::vector<double> x(head.dim);
    for (std::size_t i = begin; i < end; ++i) {
      const auto row = data.features.row(i);
      const int y = data.labels[i];
      clean_hit[i] = argmax(full_logits(row, head)) == y;

      auto rng = detail::stream_for(cfg.seed, i);
      std::span<const std::size_t> influential =
          cfg.set == ReplacementSet::TrueLabel ? std::span<const std::size_t>(map.classes.at(static_cast<std::size_t>(y)))
                                               : std::span<const std::size_t>(union_set);
      std::vector<std::size_t> chosen;
      if (cfg.target == AblationTarget::Influential) {
        chosen.assign(influential.begin(), influential.end());
      } else {
        auto rest = detail::complement_of(influential, head.dim);
        chosen = cfg.full_complement ? rest : detail::sample_without_replacement(std::move(rest), influential.size(), rng);
        std::sort(chosen.begin(), chosen.end());
      }
      std::copy(row.begin(), row.end(), x.begin());
      for (auto j : chosen) x[j] = noise.draw(j, rng);
      noisy_hit[i] = argmax(full_logits(x, head)) == y;
      replaced[i] = chosen.size();
    }
  });

  AblationReport r;
  r.config = cfg;
  r.noise = noise.kind;
  r.instances = data.size();
  std::vector<std::size_t> total(head.classes, 0), ok(head.classes, 0);
  std::size_t clean = 0, noisy = 0, replaced_total = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto y = static_cast<std::size_t>(data.labels[i]);
    ++total[y];
    ok[y] += noisy_hit[i];
    clean += clean_hit[i];
    noisy += noisy_hit[i];
    replaced_total += replaced[i];
  }
  for (std::size_t y = 0; y < head.classes; ++y)
    r.per_class_accuracy.push_back(total[y] ? double(ok[y]) / double(total[y]) : 0.0);
  r.baseline_accuracy = double(clean) / double(data.size());
  r.accuracy = double(noisy) / double(data.size());
  r.drop = r.baseline_accuracy - r.accuracy;
  r.mean_replaced = double(replaced_total) / double(data.size());
  return r;
}

// ---------------------------------------------------------------------------
// Overlap between class index sets

struct OverlapMatrix {
  std::size_t classes = 0;
  std::vector<std::size_t> intersection;  // c x c
  std::vector<double> jaccard;            // c x c
  double mean_offdiag_jaccard = 0.0;

  std::size_t intersect(std::size_t a, std::size_t b) const { return intersection[a * classes + b]; }
  double jac(std::size_t a, std::size_t b) const { return jaccard[a * classes + b]; }
};

inline OverlapMatrix overlap(const InfluenceMap& map) {
  const std::size_t c = map.classes.size();
  OverlapMatrix o{c, std::vector<std::size_t>(c * c, 0), std::vector<double>(c * c, 0.0), 0.0};
  std::vector<std::vector<char>> member(c, std::vector<char>(map.dim, 0));
  for (std::size_t a = 0; a < c; ++a)
    for (auto j : map.classes[a]) member[a][j] = 1;
  double offdiag = 0.0;
  for (std::size_t a = 0; a < c; ++a)
    for (std::size_t b = 0; b < c; ++b) {
      std::size_t both = 0, either = 0;
      for (std::size_t j = 0; j < map.dim; ++j) {
        both += member[a][j] && member[b][j];
        either += member[a][j] || member[b][j];
      }
      o.intersection[a * c + b] = both;
      o.jaccard[a * c + b] = either == 0 ? 1.0 : double(both) / double(either);
      if (a != b) offdiag += o.jaccard[a * c + b];
    }
  o.mean_offdiag_jaccard = c > 1 ? offdiag / double(c * (c - 1)) : 0.0;
  return o;
}

// ---------------------------------------------------------------------------
// JSON and text rendering

inline nlohmann::ordered_json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["A_f"] = r.full_accuracy;
  j["A_d"] = r.decomposed_accuracy;
  j["r_A"] = optional_number(r.relative);
  j["r_A_defined"] = r.relative.has_value();
  j["per_class_full"] = r.per_class_full;
  j["per_class_decomposed"] = r.per_class_decomposed;
  j["n_instances"] = r.instances;
  j["k1"] = r.k1;
  j["k2"] = r.k2;
  j["seed"] = r.seed;
  return j;
}

inline nlohmann::ordered_json report_json(const AblationReport& r) {
  nlohmann::ordered_json j;
  j["target"] = to_string(r.config.target);
  j["replacement_set"] = to_string(r.config.set);
  j["noise"] = to_string(r.noise);
  j["full_complement"] = r.config.full_complement;
  j["seed"] = r.config.seed;
  j["original_accuracy"] = r.baseline_accuracy;
  j["ablated_accuracy"] = r.accuracy;
  j["drop"] = r.drop;
  j["per_class_accuracy"] = r.per_class_accuracy;
  j["mean_replaced"] = r.mean_replaced;
  j["n_instances"] = r.instances;
  return j;
}

inline nlohmann::ordered_json overlap_json(const OverlapMatrix& o) {
  nlohmann::ordered_json j;
  j["classes"] = o.classes;
  j["intersection"] = nlohmann::ordered_json::array();
  j["jaccard"] = nlohmann::ordered_json::array();
  for (std::size_t a = 0; a < o.classes; ++a) {
    j["intersection"].push_back(std::vector<std::size_t>(o.intersection.begin() + a * o.classes,
                                                          o.intersection.begin() + (a + 1) * o.classes));
    j["jaccard"].push_back(
        std::vector<double>(o.jaccard.begin() + a * o.classes, o.jaccard.begin() + (a + 1) * o.classes));
  }
  j["mean_offdiag_jaccard"] = o.mean_offdiag_jaccard;
  return j;
}

namespace detail {
inline std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}
}  // namespace detail

/// Aligned two-column summary table.
inline std::string report_table(const EvalReport& r, std::size_t dim, std::size_t classes) {
  std::vector<std::pair<std::string, std::string>> rows = {
      {"Final Dim m", std::to_string(dim)},
      {"k2/c", detail::fixed(classes ? double(r.k2) / double(classes) : 0.0)},
      {"k2/m", detail::fixed(dim ? double(r.k2) / double(dim) : 0.0)},
      {"A_d", detail::fixed(r.decomposed_accuracy)},
      {"A_f", detail::fixed(r.full_accuracy)},
      {"r_A", r.relative ? detail::fixed(*r.relative) : std::string("undefined")},
  };
  std::string out;
  for (const auto& [k, v] : rows) out += k + std::string(14 - k.size(), ' ') + detail::pad(v, 12) + "\n";
  return out;
}

inline std::string report_table(const AblationReport& r) {
  std::string out = "Original Accuracy   Ablated (" + std::string(to_string(r.config.target)) + ", " +
                    std::string(to_string(r.noise)) + " noise)\n";
  out += detail::pad(detail::fixed(r.baseline_accuracy * 100.0, 2), 17) + detail::pad(detail::fixed(r.accuracy * 100.0, 2), 11) + "\n";
  return out;
}

inline std::string overlap_table(const OverlapMatrix& o) {
  std::string out = "      ";
  for (std::size_t b = 0; b < o.classes; ++b) out += detail::pad(std::to_string(b), 6);
  out += "\n";
  for (std::size_t a = 0; a < o.classes; ++a) {
    out += detail::pad(std::to_string(a), 6);
    for (std::size_t b = 0; b < o.classes; ++b) out += detail::pad(std::to_string(o.intersect(a, b)), 6);
    out += "\n";
  }
  out += "mean off-diagonal Jaccard: " + detail::fixed(o.mean_offdiag_jaccard) + "\n";
  return out;
}

inline std::string sweep_csv(std::span<const SweepCell> cells) {
  std::string out = "k1,k2,A_d,A_f,r_A\n";
  for (const auto& c : cells) {
    out += std::to_string(c.k1) + "," + std::to_string(c.k2) + ",";
    if (c.skipped) {
      out += "skipped,skipped,skipped\n";
      continue;
    }
    out += detail::fixed(c.report.decomposed_accuracy, 8) + "," + detail::fixed(c.report.full_accuracy, 8) + "," +
           (c.report.relative ? detail::fixed(*c.report.relative, 8) : std::string("undefined")) + "\n";
  }
  return out;
}

}  // namespace decomp
