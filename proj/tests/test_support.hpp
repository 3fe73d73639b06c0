#pragma once

#include <unistd.h>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "decomp/decomp.hpp"

namespace decomp::testing {

/// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("decomp_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<double> uniform_vector(std::mt19937_64& rng, std::size_t n, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

inline ClassifierHead random_head(std::mt19937_64& rng, std::size_t c, std::size_t m, bool with_bias) {
  ClassifierHead h;
  h.classes = c;
  h.dim = m;
  h.weights = uniform_vector(rng, c * m, -1.0, 1.0);
  if (with_bias) h.bias = uniform_vector(rng, c, -0.5, 0.5);
  return h;
}

/// Pooled class features from an explicit N x m matrix.
inline ClassFeatures pooled_class(int label, std::size_t n, std::size_t m, std::vector<double> values) {
  ClassFeatures c;
  c.label = label;
  c.name = "c" + std::to_string(label);
  c.tensor = TensorFile{DType::F64, {n, m}, std::move(values)};
  return c;
}

/// Code of the decomp::Error thrown by fn; fails the test if none is thrown.
template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected decomp::Error");
  return ErrorCode::IoFailure;
}

inline LabeledSet planted_set(const PlantedData& d) { return stack_classes(d.classes); }

}  // namespace decomp::testing
