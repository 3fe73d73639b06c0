#pragma once

#include <cassert>
#include <span>
#include <string>
#include <vector>

#include "decomp/error.hpp"
#include "decomp/tensor_io.hpp"

namespace decomp {

/// Dense row-major matrix of feature vectors, one instance per row.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), values_(rows * cols, 0.0) {}
  FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) throw Error(ErrorCode::ShapeMismatch, "feature matrix size");
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0; }

  std::span<const double> row(std::size_t i) const { return {values_.data() + i * cols_, cols_}; }
  std::span<double> row(std::size_t i) { return {values_.data() + i * cols_, cols_}; }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * cols_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return values_[i * cols_ + j]; }

  const std::vector<double>& values() const { return values_; }

  void append_row(std::span<const double> r) {
    assert(r.size() == cols_);
    values_.insert(values_.end(), r.begin(), r.end());
    ++rows_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

/// All exported instances of one class: a rank-2 (N x m) pooled tensor or a
/// rank-4 (N x m x h x w) spatial tensor.
struct ClassFeatures {
  int label = 0;
  std::string name;
  TensorFile tensor;

  std::size_t instances() const { return static_cast<std::size_t>(tensor.shape.at(0)); }
  std::size_t channels() const { return static_cast<std::size_t>(tensor.shape.at(1)); }
  bool spatial() const { return tensor.rank() == 4; }
  std::size_t height() const { return spatial() ? static_cast<std::size_t>(tensor.shape[2]) : 1; }
  std::size_t width() const { return spatial() ? static_cast<std::size_t>(tensor.shape[3]) : 1; }
  std::size_t instance_size() const { return channels() * height() * width(); }

  /// The m x h x w block (or m values) of instance i.
  std::span<const double> instance(std::size_t i) const {
    return {tensor.data.data() + i * instance_size(), instance_size()};
  }
};

/// Splits a class into its first n instances and the rest.
inline std::pair<ClassFeatures, ClassFeatures> split_instances(const ClassFeatures& cls, std::size_t n) {
  if (n == 0 || n > cls.instances()) throw Error(ErrorCode::SpecInvalid, "split point outside (0, N]");
  auto first = cls, second = cls;
  const auto cut = static_cast<std::ptrdiff_t>(n * cls.instance_size());
  first.tensor.shape[0] = n;
  first.tensor.data.assign(cls.tensor.data.begin(), cls.tensor.data.begin() + cut);
  second.tensor.shape[0] = cls.instances() - n;
  second.tensor.data.assign(cls.tensor.data.begin() + cut, cls.tensor.data.end());
  return {std::move(first), std::move(second)};
}

/// Spatial average per channel; identity for pooled features.
inline std::vector<double> average_pool(std::span<const double> block, std::size_t channels) {
  const std::size_t area = block.size() / channels;
  std::vector<double> out(channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    double acc = 0.0;
    for (std::size_t p = 0; p < area; ++p) acc += block[c * area + p];
    out[c] = area == 1 ? acc : acc / static_cast<double>(area);
  }
  return out;
}

/// Instances with their true labels, stacked in class order. Rank-4 features
/// are average pooled, which is what the classifier head consumes.
struct LabeledSet {
  FeatureMatrix features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
};

inline LabeledSet stack_classes(std::span<const ClassFeatures> classes) {
  LabeledSet set;
  if (classes.empty()) return set;
  set.features = FeatureMatrix(0, classes.front().channels());
  for (const auto& cls : classes) {
    if (cls.channels() != set.features.cols())
      throw Error(ErrorCode::DimMismatch, "class " + std::to_string(cls.label) + " has a different feature width");
    for (std::size_t i = 0; i < cls.instances(); ++i) {
      set.features.append_row(average_pool(cls.instance(i), cls.channels()));
      set.labels.push_back(cls.label);
    }
  }
  return set;
}

}  // namespace decomp
