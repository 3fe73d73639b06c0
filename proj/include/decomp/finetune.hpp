#pragma once

// Retraining of a decomposed head on cached features. Only the truncated
// weights (and bias, when the head has one) move; index sets stay fixed.
// The objective is mean softmax cross-entropy over the decomposed logits
// plus (l2/2)||w||^2, which is convex in the parameters.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "decomp/detail/rng.hpp"
#include "decomp/error.hpp"
#include "decomp/features.hpp"
#include "decomp/head.hpp"

namespace decomp {

struct TrainConfig {
  double learning_rate = 0.1;
  std::size_t epochs = 1;
  std::size_t batch_size = 0;  // 0 = full batch
  double l2_penalty = 0.0;
  std::uint64_t seed = 0;
  bool halve_on_increase = false;  // full batch only: halve the rate and retry any step without sufficient decrease

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw Error(ErrorCode::SpecInvalid, "learning rate must be positive");
    if (!(l2_penalty >= 0.0)) throw Error(ErrorCode::SpecInvalid, "l2 penalty must be >= 0");
  }
};

struct HeadGradient {
  std::vector<std::vector<double>> weights;  // same layout as the head's subspaces
  std::vector<double> bias;                  // size c; ignored when the head has no bias

  double squared_norm(bool with_bias) const {
    double s = 0.0;
    for (const auto& w : weights)
      for (double g : w) s += g * g;
    if (with_bias)
      for (double g : bias) s += g * g;
    return s;
  }
};

struct LossAndGrad {
  double loss = 0.0;
  HeadGradient grad;
};

namespace detail {

inline std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

inline void check_batch(const DecomposedHead& head, const LabeledSet& data) {
  if (data.dim() != head.dim()) throw Error(ErrorCode::DimMismatch, "feature width differs from head");
  for (int y : data.labels)
    if (y < 0 || static_cast<std::size_t>(y) >= head.classes())
      throw Error(ErrorCode::MissingClass, "label " + std::to_string(y));
}

}  // namespace detail

/// Loss and gradient over the given rows of data.
inline LossAndGrad loss_and_grad(const DecomposedHead& head, const LabeledSet& data, std::span<const std::size_t> rows,
                                 double l2) {
  detail::check_batch(head, data);
  if (rows.empty()) throw Error(ErrorCode::EmptyDataset, "empty batch");
  const std::size_t c = head.classes();
  LossAndGrad out;
  out.grad.weights.resize(c);
  for (std::size_t i = 0; i < c; ++i) out.grad.weights[i].assign(head.subspace(i).indices.size(), 0.0);
  out.grad.bias.assign(c, 0.0);

  const double scale = 1.0 / double(rows.size());
  std::vector<double> z(c);
  for (auto r : rows) {
    const auto x = data.features.row(r);
    const auto y = static_cast<std::size_t>(data.labels[r]);
    for (std::size_t i = 0; i < c; ++i) z[i] = head.logit(i, x);
    const double top = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (std::size_t i = 0; i < c; ++i) total += std::exp(z[i] - top);
    const double log_norm = top + std::log(total);
    out.loss += (log_norm - z[y]) * scale;
    for (std::size_t i = 0; i < c; ++i) {
      const double residual = (std::exp(z[i] - log_norm) - (i == y ? 1.0 : 0.0)) * scale;
      const auto& idx = head.subspace(i).indices;
      auto& g = out.grad.weights[i];
      for (std::size_t t = 0; t < idx.size(); ++t) g[t] += residual * x[idx[t]];
      out.grad.bias[i] += residual;
    }
  }
  if (l2 > 0.0) {
    for (std::size_t i = 0; i < c; ++i) {
      const auto& w = head.subspace(i).weights;
      for (std::size_t t = 0; t < w.size(); ++t) {
        out.loss += 0.5 * l2 * w[t] * w[t];
        out.grad.weights[i][t] += l2 * w[t];
      }
    }
  }
  return out;
}

inline LossAndGrad loss_and_grad(const DecomposedHead& head, const LabeledSet& data, double l2) {
  const auto rows = detail::all_rows(data.size());
  return loss_and_grad(head, data, rows, l2);
}

inline void apply_step(DecomposedHead& head, const HeadGradient& grad, double lr) {
  for (std::size_t i = 0; i < head.classes(); ++i) {
    auto w = head.mutable_weights(i);
    for (std::size_t t = 0; t < w.size(); ++t) w[t] -= lr * grad.weights[i][t];
  }
  if (auto& b = head.mutable_bias())
    for (std::size_t i = 0; i < b->size(); ++i) (*b)[i] -= lr * grad.bias[i];
}

struct FitResult {
  DecomposedHead head;
  std::vector<double> loss_history;      // [0] before training, then after each epoch
  std::vector<double> holdout_accuracy;  // same indexing; empty without a holdout set
  double learning_rate = 0.0;
};

/// Raised when the training loss stops being finite. Carries the last state
/// whose loss was finite.
class DivergenceError : public Error {
 public:
  DivergenceError(std::string what, FitResult last)
      : Error(ErrorCode::DivergenceDetected, what), last_(std::move(last)) {}
  const FitResult& last_finite() const { return last_; }

 private:
  FitResult last_;
};

inline double decomposed_accuracy(const DecomposedHead& head, const LabeledSet& data) {
  if (data.size() == 0) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < data.size(); ++i) hit += argmax(head.logits(data.features.row(i))) == data.labels[i];
  return double(hit) / double(data.size());
}

/// Gradient descent on the decomposed head. Mini-batch order is shuffled
/// per epoch from config.seed; batch_size 0 means full-batch steps.
inline FitResult fit(const DecomposedHead& initial, const LabeledSet& train, const TrainConfig& config,
                     const LabeledSet* holdout = nullptr) {
  config.validate();
  detail::check_batch(initial, train);
  if (train.size() == 0) throw Error(ErrorCode::EmptyDataset, "empty training set");

  FitResult result{initial, {}, {}, config.learning_rate};
  auto record = [&](const DecomposedHead& h) {
    const double loss = loss_and_grad(h, train, config.l2_penalty).loss;
    if (holdout) result.holdout_accuracy.push_back(decomposed_accuracy(h, *holdout));
    return loss;
  };
  result.loss_history.push_back(record(initial));
  if (config.epochs == 0) return result;

  auto rows = detail::all_rows(train.size());
  const std::size_t batch = config.batch_size == 0 ? rows.size() : std::min(config.batch_size, rows.size());
  DecomposedHead head = initial;
  if (config.halve_on_increase && config.batch_size == 0) {
    double lr = config.learning_rate;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
      const auto base = loss_and_grad(head, train, config.l2_penalty);
      const double gnorm2 = base.grad.squared_norm(head.bias().has_value());
      DecomposedHead trial = head;
      double loss = base.loss;
      for (int h = 0; h < 60; ++h, lr *= 0.5) {
        trial = head;
        apply_step(trial, base.grad, lr);
        loss = loss_and_grad(trial, train, config.l2_penalty).loss;
        if (std::isfinite(loss) && loss <= base.loss - 0.5 * lr * gnorm2) break;
      }
      if (!(loss <= base.loss)) {
        trial = head;  // no acceptable step at any rate tried: stay put
        loss = base.loss;
      }
      head = trial;
      result.head = head;
      result.learning_rate = lr;
      result.loss_history.push_back(loss);
      if (holdout) result.holdout_accuracy.push_back(decomposed_accuracy(head, *holdout));
    }
    return result;
  }
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.batch_size != 0) {
      std::mt19937_64 rng(detail::splitmix64(config.seed) + epoch);
      std::shuffle(rows.begin(), rows.end(), rng);
    }
    for (std::size_t start = 0; start < rows.size(); start += batch) {
      const std::span<const std::size_t> slice(rows.data() + start, std::min(batch, rows.size() - start));
      const auto lg = loss_and_grad(head, train, slice, config.l2_penalty);
      apply_step(head, lg.grad, config.learning_rate);
    }
    const double loss = loss_and_grad(head, train, config.l2_penalty).loss;
    if (!std::isfinite(loss))
      throw DivergenceError("loss became non-finite in epoch " + std::to_string(epoch + 1), result);
    result.head = head;
    result.loss_history.push_back(loss);
    if (holdout) result.holdout_accuracy.push_back(decomposed_accuracy(head, *holdout));
  }
  return result;
}

/// Step size by halving: start from initial and halve until one full-batch
/// step achieves the sufficient-decrease condition
///   loss(w - lr g) <= loss(w) - (lr / 2) ||g||^2.
inline double select_learning_rate(const DecomposedHead& head, const LabeledSet& train, double l2,
                                   double initial = 1.0, int max_halvings = 60) {
  const auto base = loss_and_grad(head, train, l2);
  const double gnorm2 = base.grad.squared_norm(head.bias().has_value());
  double lr = initial;
  for (int h = 0; h < max_halvings; ++h, lr *= 0.5) {
    DecomposedHead trial = head;
    apply_step(trial, base.grad, lr);
    const double loss = loss_and_grad(trial, train, l2).loss;
    if (std::isfinite(loss) && loss <= base.loss - 0.5 * lr * gnorm2) return lr;
  }
  return lr;
}

/// Upper bound on the gradient's Lipschitz constant: the softmax
/// cross-entropy Hessian is at most 1/2 per logit, and logit i only touches
/// class i's parameters, so L <= max_i lambda_max(G_i)/2 + l2 where G_i is
/// the mean outer product of (x[J_i], 1). lambda_max comes from power iteration.
inline double lipschitz_bound(const DecomposedHead& head, const LabeledSet& train, double l2, int iterations = 200) {
  detail::check_batch(head, train);
  const bool with_bias = head.bias().has_value();
  double worst = 0.0;
  for (std::size_t i = 0; i < head.classes(); ++i) {
    const auto& idx = head.subspace(i).indices;
    const std::size_t d = idx.size() + (with_bias ? 1 : 0);
    if (d == 0) continue;
    std::vector<double> gram(d * d, 0.0), z(d);
    for (std::size_t r = 0; r < train.size(); ++r) {
      const auto x = train.features.row(r);
      for (std::size_t t = 0; t < idx.size(); ++t) z[t] = x[idx[t]];
      if (with_bias) z[d - 1] = 1.0;
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) gram[a * d + b] += z[a] * z[b];
    }
    for (auto& g : gram) g /= double(train.size());
    std::vector<double> v(d, 1.0 / std::sqrt(double(d))), next(d);
    double lambda = 0.0;
    for (int it = 0; it < iterations; ++it) {
      for (std::size_t a = 0; a < d; ++a) {
        double acc = 0.0;
        for (std::size_t b = 0; b < d; ++b) acc += gram[a * d + b] * v[b];
        next[a] = acc;
      }
      const double norm = std::sqrt(std::inner_product(next.begin(), next.end(), next.begin(), 0.0));
      if (norm == 0.0) break;
      lambda = norm;
      for (std::size_t a = 0; a < d; ++a) v[a] = next[a] / norm;
    }
    worst = std::max(worst, lambda);
  }
  return 0.5 * worst + l2;
}

}  // namespace decomp
