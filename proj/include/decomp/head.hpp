#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "decomp/error.hpp"
#include "decomp/tensor_io.hpp"

namespace decomp {

/// Final fully connected layer: logits = W x + b with W stored c x m row-major.
struct ClassifierHead {
  std::size_t classes = 0;
  std::size_t dim = 0;
  std::vector<double> weights;
  std::optional<std::vector<double>> bias;

  std::span<const double> row(std::size_t i) const { return {weights.data() + i * dim, dim}; }
  double weight(std::size_t i, std::size_t j) const { return weights[i * dim + j]; }
  double bias_of(std::size_t i) const { return bias ? (*bias)[i] : 0.0; }

  void validate() const {
    if (classes == 0 || dim == 0) throw Error(ErrorCode::DimMismatch, "head has an empty dimension");
    if (weights.size() != classes * dim) throw Error(ErrorCode::DimMismatch, "weights are not c x m");
    if (bias && bias->size() != classes) throw Error(ErrorCode::DimMismatch, "bias length != class count");
  }
};

struct Prediction {
  int label = 0;
  std::vector<double> logits;
  std::vector<double> probabilities;
};

/// Numerically stable softmax (max subtraction, f64 accumulation).
inline std::vector<double> softmax(std::span<const double> z) {
  if (z.empty()) throw Error(ErrorCode::DimMismatch, "softmax of an empty vector");
  for (double v : z)
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteInput, "softmax input is not finite");
  const double top = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - top);
    total += p[i];
  }
  for (auto& v : p) v /= total;
  return p;
}

/// Index of the largest value; ties resolve to the lowest index.
inline int argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return static_cast<int>(best);
}

/// Logits of the full head. Summation runs over ascending feature index.
inline std::vector<double> full_logits(std::span<const double> x, const ClassifierHead& head) {
  if (x.size() != head.dim)
    throw Error(ErrorCode::DimMismatch, "input has " + std::to_string(x.size()) + " features, head expects " +
                                            std::to_string(head.dim));
  std::vector<double> logits(head.classes);
  for (std::size_t i = 0; i < head.classes; ++i) {
    const auto w = head.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < head.dim; ++j) acc += w[j] * x[j];
    logits[i] = acc + head.bias_of(i);
  }
  return logits;
}

inline Prediction predict_full(std::span<const double> x, const ClassifierHead& head) {
  Prediction p;
  p.logits = full_logits(x, head);
  p.label = argmax(p.logits);
  p.probabilities = softmax(p.logits);
  return p;
}

/// One class's slice of a decomposed head: the selected feature indices (in
/// selection order) and the matching truncated weights.
struct ClassSubspace {
  std::vector<std::size_t> indices;
  std::vector<double> weights;
};

/// Per-class truncated head. Each class logit is an independent dot product
/// over that class's own index set; the bias is carried through unchanged.
class DecomposedHead {
 public:
  DecomposedHead() = default;

  DecomposedHead(std::size_t dim, std::vector<ClassSubspace> classes, std::optional<std::vector<double>> bias)
      : dim_(dim), classes_(std::move(classes)), bias_(std::move(bias)) {
    if (bias_ && bias_->size() != classes_.size()) throw Error(ErrorCode::DimMismatch, "bias length != class count");
    order_.resize(classes_.size());
    for (std::size_t i = 0; i < classes_.size(); ++i) {
      const auto& cls = classes_[i];
      if (cls.indices.size() != cls.weights.size())
        throw Error(ErrorCode::DimMismatch, "class " + std::to_string(i) + " has mismatched index/weight lengths");
      for (auto j : cls.indices)
        if (j >= dim_) throw Error(ErrorCode::IndexOutOfRange, "feature index " + std::to_string(j));
      auto& ord = order_[i];
      ord.resize(cls.indices.size());
      std::iota(ord.begin(), ord.end(), std::size_t{0});
      std::sort(ord.begin(), ord.end(), [&](std::size_t a, std::size_t b) { return cls.indices[a] < cls.indices[b]; });
      for (std::size_t t = 1; t < ord.size(); ++t)
        if (cls.indices[ord[t]] == cls.indices[ord[t - 1]])
          throw Error(ErrorCode::SpecInvalid, "class " + std::to_string(i) + " repeats a feature index");
    }
  }

  std::size_t dim() const { return dim_; }
  std::size_t classes() const { return classes_.size(); }
  const ClassSubspace& subspace(std::size_t i) const { return classes_[i]; }
  const std::optional<std::vector<double>>& bias() const { return bias_; }
  double bias_of(std::size_t i) const { return bias_ ? (*bias_)[i] : 0.0; }

  /// Weights may be updated in place (retraining); index sets never change.
  std::span<double> mutable_weights(std::size_t i) { return classes_[i].weights; }
  std::optional<std::vector<double>>& mutable_bias() { return bias_; }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> out;
    for (const auto& c : classes_) out.push_back(c.indices.size());
    return out;
  }

  /// logit_i depends only on (w_i, J_i, b_i, x). Terms are accumulated in
  /// ascending feature-index order so a full-width decomposition reproduces
  /// full_logits bit for bit.
  double logit(std::size_t i, std::span<const double> x) const {
    const auto& cls = classes_[i];
    double acc = 0.0;
    for (auto t : order_[i]) acc += cls.weights[t] * x[cls.indices[t]];
    return acc + bias_of(i);
  }

  std::vector<double> logits(std::span<const double> x) const {
    if (x.size() != dim_)
      throw Error(ErrorCode::DimMismatch, "input has " + std::to_string(x.size()) + " features, head expects " +
                                              std::to_string(dim_));
    std::vector<double> out(classes_.size());
    for (std::size_t i = 0; i < classes_.size(); ++i) out[i] = logit(i, x);
    return out;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<ClassSubspace> classes_;
  std::optional<std::vector<double>> bias_;
  std::vector<std::vector<std::size_t>> order_;
};

inline Prediction predict_decomposed(std::span<const double> x, const DecomposedHead& head) {
  Prediction p;
  p.logits = head.logits(x);
  p.label = argmax(p.logits);
  p.probabilities = softmax(p.logits);
  return p;
}

/// Truncates the head to the given per-class index lists (list i belongs to
/// class label i). The source head is not modified.
inline DecomposedHead decompose(const ClassifierHead& head, std::span<const std::vector<std::size_t>> index_sets,
                                std::size_t index_dim) {
  head.validate();
  if (index_dim != head.dim)
    throw Error(ErrorCode::DimMismatch, "index sets are over " + std::to_string(index_dim) +
                                            " features, head has " + std::to_string(head.dim));
  if (index_sets.size() < head.classes)
    throw Error(ErrorCode::MissingClass, "no index set for class " + std::to_string(index_sets.size()));
  if (index_sets.size() > head.classes)
    throw Error(ErrorCode::DimMismatch, "more index sets than head classes");
  std::vector<ClassSubspace> classes(head.classes);
  for (std::size_t i = 0; i < head.classes; ++i) {
    classes[i].indices = index_sets[i];
    for (auto j : index_sets[i]) {
      if (j >= head.dim) throw Error(ErrorCode::IndexOutOfRange, "feature index " + std::to_string(j));
      classes[i].weights.push_back(head.weight(i, j));
    }
  }
  return DecomposedHead(head.dim, std::move(classes), head.bias);
}

struct CostReport {
  std::size_t full_mults = 0;
  std::size_t decomposed_mults = 0;
  double ratio = 0.0;
};

/// Multiply count of the final layer before and after decomposition.
inline CostReport cost_report(std::size_t dim, std::size_t classes, std::span<const std::size_t> sizes_per_class) {
  CostReport r;
  r.full_mults = dim * classes;
  r.decomposed_mults = std::accumulate(sizes_per_class.begin(), sizes_per_class.end(), std::size_t{0});
  r.ratio = r.full_mults == 0 ? 0.0 : double(r.decomposed_mults) / double(r.full_mults);
  return r;
}

// Serialization: <stem>.json metadata plus <stem>_weights.ften (all class
// weight vectors concatenated in class order, f64) and <stem>_bias.ften.

inline nlohmann::ordered_json decomposed_head_json(const DecomposedHead& head, const std::string& weights_file,
                                                   const std::optional<std::string>& bias_file) {
  nlohmann::ordered_json j;
  j["m"] = head.dim();
  j["c"] = head.classes();
  const auto sizes = head.sizes();
  if (!sizes.empty() && std::all_of(sizes.begin(), sizes.end(), [&](auto s) { return s == sizes.front(); }))
    j["k2"] = sizes.front();
  else
    j["k2"] = sizes;
  j["classes"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < head.classes(); ++i)
    j["classes"].push_back({{"label", i}, {"indices", head.subspace(i).indices}});
  j["weights"] = weights_file;
  j["bias"] = bias_file ? nlohmann::ordered_json(*bias_file) : nlohmann::ordered_json(nullptr);
  return j;
}

inline void save_decomposed_head(const DecomposedHead& head, const std::filesystem::path& dir, const std::string& stem) {
  std::vector<double> packed;
  for (std::size_t i = 0; i < head.classes(); ++i) {
    const auto& w = head.subspace(i).weights;
    packed.insert(packed.end(), w.begin(), w.end());
  }
  const std::string weights_file = stem + "_weights.ften";
  if (packed.empty()) packed.push_back(0.0);  // tensors need at least one element
  write_tensor(dir / weights_file, make_tensor(DType::F64, {packed.size()}, packed));
  std::optional<std::string> bias_file;
  if (head.bias()) {
    bias_file = stem + "_bias.ften";
    write_tensor(dir / *bias_file, make_tensor(DType::F64, {head.bias()->size()}, *head.bias()));
  }
  const auto text = decomposed_head_json(head, weights_file, bias_file).dump(2) + "\n";
  write_file_bytes(dir / (stem + ".json"), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline DecomposedHead load_decomposed_head(const std::filesystem::path& json_path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_bytes(json_path));
    const auto dir = json_path.parent_path();
    const auto weights = read_tensor(dir / j.at("weights").get<std::string>());
    std::optional<std::vector<double>> bias;
    if (!j.at("bias").is_null()) bias = read_tensor(dir / j.at("bias").get<std::string>()).data;
    std::vector<ClassSubspace> classes;
    std::size_t offset = 0;
    for (const auto& c : j.at("classes")) {
      ClassSubspace s;
      s.indices = c.at("indices").get<std::vector<std::size_t>>();
      if (offset + s.indices.size() > weights.data.size())
        throw Error(ErrorCode::ShapeMismatch, "weights tensor shorter than index lists");
      s.weights.assign(weights.data.begin() + offset, weights.data.begin() + offset + s.indices.size());
      offset += s.indices.size();
      classes.push_back(std::move(s));
    }
    return DecomposedHead(j.at("m").get<std::size_t>(), std::move(classes), std::move(bias));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ManifestInvalid, json_path.string() + ": " + e.what());
  }
}

}  // namespace decomp
