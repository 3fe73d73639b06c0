#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "test_support.hpp"

using namespace decomp;
using decomp::testing::code_of;
using decomp::testing::planted_set;
using decomp::testing::random_head;
using decomp::testing::uniform_vector;

namespace {

struct Problem {
  DecomposedHead head;
  LabeledSet data;
};

Problem random_problem(std::mt19937_64& rng, bool with_bias) {
  const std::size_t c = 2 + rng() % 4, m = 3 + rng() % 12, n = 5 + rng() % 40;
  const auto full = random_head(rng, c, m, with_bias);
  std::vector<std::vector<std::size_t>> sets;
  for (std::size_t i = 0; i < c; ++i) {
    std::vector<std::size_t> all(m);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(1 + rng() % m);
    sets.push_back(all);
  }
  Problem p{decompose(full, std::span<const std::vector<std::size_t>>(sets), m), {}};
  p.data.features = FeatureMatrix(n, m, uniform_vector(rng, n * m, 0.0, 3.0));
  for (std::size_t i = 0; i < n; ++i) p.data.labels.push_back(int(rng() % c));
  return p;
}

// Independent loss: log-sum-exp via std::log(sum(exp)) with no shift.
double oracle_loss(const DecomposedHead& h, const LabeledSet& d, double l2) {
  double loss = 0.0;
  for (std::size_t r = 0; r < d.size(); ++r) {
    const auto z = h.logits(d.features.row(r));
    double s = 0.0;
    for (double v : z) s += std::exp(v);
    loss += std::log(s) - z[std::size_t(d.labels[r])];
  }
  loss /= double(d.size());
  for (std::size_t i = 0; i < h.classes(); ++i)
    for (double w : h.subspace(i).weights) loss += 0.5 * l2 * w * w;
  return loss;
}

}  // namespace

TEST_CASE("loss matches an unshifted log-sum-exp oracle") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    auto p = random_problem(rng, t % 2 == 0);
    const double l2 = t % 3 == 0 ? 0.1 : 0.0;
    CHECK(loss_and_grad(p.head, p.data, l2).loss == Catch::Approx(oracle_loss(p.head, p.data, l2)).epsilon(1e-12));
  }
}

TEST_CASE("analytic gradient matches central differences") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    auto p = random_problem(rng, true);
    const double l2 = 0.05;
    const auto g = loss_and_grad(p.head, p.data, l2).grad;
    const double h = 1e-5;
    for (std::size_t i = 0; i < p.head.classes(); ++i) {
      for (std::size_t k = 0; k < g.weights[i].size(); ++k) {
        auto plus = p.head, minus = p.head;
        plus.mutable_weights(i)[k] += h;
        minus.mutable_weights(i)[k] -= h;
        const double fd = (oracle_loss(plus, p.data, l2) - oracle_loss(minus, p.data, l2)) / (2 * h);
        CHECK(std::abs(fd - g.weights[i][k]) < 1e-7 + 1e-6 * std::abs(fd));
      }
      auto plus = p.head, minus = p.head;
      (*plus.mutable_bias())[i] += h;
      (*minus.mutable_bias())[i] -= h;
      const double fd = (oracle_loss(plus, p.data, l2) - oracle_loss(minus, p.data, l2)) / (2 * h);
      CHECK(std::abs(fd - g.bias[i]) < 1e-7 + 1e-6 * std::abs(fd));
    }
  }
}

TEST_CASE("full-batch descent with the halving rate never increases the loss") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 10; ++t) {
    auto p = random_problem(rng, t % 2 == 0);
    const double lr = select_learning_rate(p.head, p.data, 0.01);
    CHECK(lr > 0.0);
    TrainConfig cfg{lr, 20, 0, 0.01, 0, true};
    const auto r = fit(p.head, p.data, cfg);
    REQUIRE(r.loss_history.size() == 21);
    for (std::size_t e = 1; e < r.loss_history.size(); ++e) CHECK(r.loss_history[e] <= r.loss_history[e - 1] + 1e-12);
    CHECK(r.loss_history.back() < r.loss_history.front());
  }
}

TEST_CASE("step 1/L from the Lipschitz bound decreases the loss monotonically") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 10; ++t) {
    auto p = random_problem(rng, true);
    const double L = lipschitz_bound(p.head, p.data, 0.0);
    CHECK(L > 0.0);
    const auto r = fit(p.head, p.data, {1.0 / L, 30, 0, 0.0, 0});
    for (std::size_t e = 1; e < r.loss_history.size(); ++e) CHECK(r.loss_history[e] <= r.loss_history[e - 1] + 1e-12);
  }
}

TEST_CASE("Lipschitz bound of a one-feature problem") {
  // One class, J = {0}, no bias, x0 = 2 for every row: G = [4], L = 2.
  ClassifierHead full{2, 1, {0.0, 0.0}, std::nullopt};
  std::vector<std::vector<std::size_t>> sets = {{0}, {}};
  const auto d = decompose(full, std::span<const std::vector<std::size_t>>(sets), 1);
  LabeledSet data;
  data.features = FeatureMatrix(3, 1, {2, 2, 2});
  data.labels = {0, 1, 0};
  CHECK(lipschitz_bound(d, data, 0.0) == Catch::Approx(2.0));
  CHECK(lipschitz_bound(d, data, 0.5) == Catch::Approx(2.5));
}

TEST_CASE("fine-tuning keeps index sets and the absent bias") {
  std::mt19937_64 rng(5);
  auto p = random_problem(rng, false);
  const auto r = fit(p.head, p.data, {0.1, 5, 0, 0.0, 0});
  for (std::size_t i = 0; i < p.head.classes(); ++i)
    CHECK(r.head.subspace(i).indices == p.head.subspace(i).indices);
  CHECK_FALSE(r.head.bias().has_value());
}

TEST_CASE("a fixed rate above 2/L can increase the loss without backtracking") {
  // One feature x = 4 for both rows; lr far above 2/L oscillates.
  ClassifierHead full{2, 1, {0.3, -0.3}, std::nullopt};
  const auto d = decompose(full, full_width_map(2, 1));
  LabeledSet data;
  data.features = FeatureMatrix(2, 1, {4, 4});
  data.labels = {0, 1};
  const auto plain = fit(d, data, {5.0, 5, 0, 0.0, 0});
  bool increased = false;
  for (std::size_t e = 1; e < plain.loss_history.size(); ++e) increased = increased || plain.loss_history[e] > plain.loss_history[e - 1];
  CHECK(increased);
  const auto guarded = fit(d, data, {5.0, 5, 0, 0.0, 0, true});
  for (std::size_t e = 1; e < guarded.loss_history.size(); ++e)
    CHECK(guarded.loss_history[e] <= guarded.loss_history[e - 1]);
  CHECK(guarded.learning_rate < 5.0);
}

TEST_CASE("zero epochs returns the input head") {
  std::mt19937_64 rng(6);
  auto p = random_problem(rng, true);
  const auto r = fit(p.head, p.data, {0.1, 0, 0, 0.0, 0});
  CHECK(r.loss_history.size() == 1);
  CHECK(r.head.subspace(0).weights == p.head.subspace(0).weights);
}

TEST_CASE("mini-batch training is reproducible from its seed") {
  std::mt19937_64 rng(7);
  auto p = random_problem(rng, true);
  TrainConfig cfg{0.05, 4, 3, 0.0, 11};
  const auto a = fit(p.head, p.data, cfg);
  const auto b = fit(p.head, p.data, cfg);
  CHECK(a.loss_history == b.loss_history);
  cfg.seed = 12;
  const auto c = fit(p.head, p.data, cfg);
  CHECK(c.loss_history != a.loss_history);
}

TEST_CASE("holdout accuracy is tracked per epoch") {
  PlantedSpec spec;
  spec.per_class = 30;
  const auto data = generate_planted(spec);
  const auto set = planted_set(data);
  const auto d = decompose(data.head, build_influence_map(data.classes, 3, 3));
  const auto r = fit(d, set, {0.01, 3, 0, 0.0, 0}, &set);
  CHECK(r.holdout_accuracy.size() == 4);
  CHECK(r.holdout_accuracy.front() == decomposed_accuracy(d, set));
}

TEST_CASE("divergence carries the last finite state") {
  ClassifierHead full{2, 1, {0.0, 0.0}, std::vector<double>{0.0, 0.0}};
  const auto d = decompose(full, full_width_map(2, 1));
  LabeledSet data;
  data.features = FeatureMatrix(1, 1, {1e150});
  data.labels = {0};
  try {
    fit(d, data, {1e10, 5, 0, 0.0, 0});
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.code() == ErrorCode::DivergenceDetected);
    for (double v : e.last_finite().loss_history) CHECK(std::isfinite(v));
  }
}

TEST_CASE("training config and batch validation") {
  std::mt19937_64 rng(8);
  auto p = random_problem(rng, true);
  CHECK(code_of([&] { fit(p.head, p.data, {0.0, 1, 0, 0.0, 0}); }) == ErrorCode::SpecInvalid);
  CHECK(code_of([&] { fit(p.head, p.data, {0.1, 1, 0, -1.0, 0}); }) == ErrorCode::SpecInvalid);
  auto bad = p.data;
  bad.labels[0] = int(p.head.classes());
  CHECK(code_of([&] { loss_and_grad(p.head, bad, 0.0); }) == ErrorCode::MissingClass);
  LabeledSet narrow;
  narrow.features = FeatureMatrix(1, p.head.dim() + 1);
  narrow.labels = {0};
  CHECK(code_of([&] { loss_and_grad(p.head, narrow, 0.0); }) == ErrorCode::DimMismatch);
}
