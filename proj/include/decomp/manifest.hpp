#pragma once

#include <algorithm>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "decomp/error.hpp"
#include "decomp/features.hpp"
#include "decomp/head.hpp"
#include "decomp/tensor_io.hpp"

namespace decomp {

struct ClassEntry {
  int label = 0;
  std::string name;
  std::filesystem::path features_path;
};

/// Dataset manifest as written by the exporter. Paths are stored as given;
/// relative paths resolve against the manifest's own directory.
struct Manifest {
  std::vector<ClassEntry> classes;
  std::filesystem::path weights_path;
  std::optional<std::filesystem::path> bias_path;
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
};

enum class NegativePolicy {
  Strict,   // values below -tolerance are an error
  Lenient,  // negatives are clamped to zero with a warning
};

struct LoadOptions {
  NegativePolicy negatives = NegativePolicy::Strict;
  double tolerance = 1e-6;
};

/// A manifest with every referenced tensor loaded and checked.
struct Dataset {
  Manifest manifest;
  std::vector<ClassFeatures> classes;  // sorted by label; classes[i].label == i
  ClassifierHead head;
  std::vector<std::string> warnings;

  std::size_t class_count() const { return classes.size(); }
  std::size_t dim() const { return head.dim; }
};

inline Manifest parse_manifest(const nlohmann::json& j) {
  Manifest m;
  try {
    for (const auto& c : j.at("classes")) {
      ClassEntry e;
      e.label = c.at("label").get<int>();
      e.name = c.contains("name") ? c.at("name").get<std::string>() : std::to_string(e.label);
      e.features_path = c.at("features").get<std::string>();
      m.classes.push_back(std::move(e));
    }
    m.weights_path = j.at("weights").get<std::string>();
    if (j.contains("bias") && !j.at("bias").is_null()) m.bias_path = j.at("bias").get<std::string>();
    if (j.contains("meta")) m.meta = j.at("meta");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ManifestInvalid, e.what());
  }
  return m;
}

inline nlohmann::ordered_json manifest_json(const Manifest& m) {
  nlohmann::ordered_json j;
  j["classes"] = nlohmann::ordered_json::array();
  for (const auto& c : m.classes)
    j["classes"].push_back({{"label", c.label}, {"name", c.name}, {"features", c.features_path.generic_string()}});
  j["weights"] = m.weights_path.generic_string();
  j["bias"] = m.bias_path ? nlohmann::ordered_json(m.bias_path->generic_string()) : nlohmann::ordered_json(nullptr);
  j["meta"] = m.meta;
  return j;
}

/// Checks the structural invariants that do not need tensor contents.
inline void check_labels(const Manifest& m) {
  if (m.classes.empty()) throw Error(ErrorCode::ManifestInvalid, "manifest lists no classes");
  std::set<int> seen;
  for (const auto& c : m.classes) {
    if (!seen.insert(c.label).second) throw Error(ErrorCode::DuplicateLabel, "label " + std::to_string(c.label));
  }
  const int count = static_cast<int>(m.classes.size());
  for (int label : seen)
    if (label < 0 || label >= count)
      throw Error(ErrorCode::ManifestInvalid,
                  "label " + std::to_string(label) + " outside [0, " + std::to_string(count) + ")");
}

/// Applies the non-negativity rule in place. Values in [-tolerance, 0) are
/// rounding noise and are zeroed under either policy.
inline void enforce_non_negative(ClassFeatures& cls, const LoadOptions& opts, std::vector<std::string>& warnings) {
  std::size_t clamped = 0;
  double worst = 0.0;
  for (auto& v : cls.tensor.data) {
    if (v >= 0.0) continue;
    if (v < -opts.tolerance) {
      if (opts.negatives == NegativePolicy::Strict)
        throw Error(ErrorCode::NegativeFeature,
                    "class " + std::to_string(cls.label) + " has feature value " + std::to_string(v));
      ++clamped;
      worst = std::min(worst, v);
    }
    v = 0.0;
  }
  if (clamped > 0)
    warnings.push_back("class " + std::to_string(cls.label) + ": clamped " + std::to_string(clamped) +
                       " negative feature values (min " + std::to_string(worst) + ")");
}

inline Dataset load_dataset(const Manifest& manifest, const std::filesystem::path& base_dir,
                            const LoadOptions& opts = {}) {
  check_labels(manifest);
  auto resolve = [&](const std::filesystem::path& p) { return p.is_absolute() ? p : base_dir / p; };

  Dataset ds;
  ds.manifest = manifest;
  const std::size_t c = manifest.classes.size();

  const auto weights = read_tensor(resolve(manifest.weights_path));
  if (weights.rank() != 2) throw Error(ErrorCode::DimMismatch, "weights must be a c x m matrix");
  if (weights.shape[0] != c)
    throw Error(ErrorCode::DimMismatch, "weights have " + std::to_string(weights.shape[0]) + " rows for " +
                                            std::to_string(c) + " classes");
  ds.head.classes = c;
  ds.head.dim = static_cast<std::size_t>(weights.shape[1]);
  ds.head.weights = weights.data;
  if (manifest.bias_path) {
    const auto bias = read_tensor(resolve(*manifest.bias_path));
    if (bias.rank() != 1 || bias.shape[0] != c) throw Error(ErrorCode::DimMismatch, "bias must have shape [c]");
    ds.head.bias = bias.data;
  }

  std::vector<ClassEntry> entries = manifest.classes;
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.label < b.label; });
  std::optional<std::vector<std::uint64_t>> trailing;
  for (const auto& e : entries) {
    ClassFeatures cls{e.label, e.name, read_tensor(resolve(e.features_path))};
    if (cls.tensor.rank() != 2 && cls.tensor.rank() != 4)
      throw Error(ErrorCode::DimMismatch, "class " + std::to_string(e.label) + " features must be rank 2 or 4");
    std::vector<std::uint64_t> tail(cls.tensor.shape.begin() + 1, cls.tensor.shape.end());
    if (!trailing) trailing = tail;
    if (tail != *trailing)
      throw Error(ErrorCode::DimMismatch, "class " + std::to_string(e.label) + " feature shape differs from class " +
                                              std::to_string(entries.front().label));
    if (cls.channels() != ds.head.dim)
      throw Error(ErrorCode::DimMismatch, "features have m=" + std::to_string(cls.channels()) +
                                              " but weights have m=" + std::to_string(ds.head.dim));
    enforce_non_negative(cls, opts, ds.warnings);
    ds.classes.push_back(std::move(cls));
  }
  return ds;
}

inline Dataset load_manifest(const std::filesystem::path& path, const LoadOptions& opts = {}) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::IoFailure, "manifest not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_bytes(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ManifestInvalid, path.string() + ": " + e.what());
  }
  return load_dataset(parse_manifest(j), path.parent_path(), opts);
}

/// Writes class tensors, weights and bias next to a manifest.json in dir.
inline Manifest write_dataset(const std::filesystem::path& dir, std::span<const ClassFeatures> classes,
                              const ClassifierHead& head, const nlohmann::ordered_json& meta,
                              DType dtype = DType::F32, const std::string& prefix = "") {
  std::filesystem::create_directories(dir);
  Manifest m;
  m.meta = meta;
  for (const auto& cls : classes) {
    const std::string file = prefix + "class_" + std::to_string(cls.label) + ".ften";
    auto t = cls.tensor;
    t.dtype = dtype;
    write_tensor(dir / file, make_tensor(dtype, t.shape, t.data));
    m.classes.push_back({cls.label, cls.name, file});
  }
  m.weights_path = prefix + "weights.ften";
  write_tensor(dir / m.weights_path, make_tensor(dtype, {head.classes, head.dim}, head.weights));
  if (head.bias) {
    m.bias_path = prefix + "bias.ften";
    write_tensor(dir / *m.bias_path, make_tensor(dtype, {head.classes}, *head.bias));
  }
  const auto text = manifest_json(m).dump(2) + "\n";
  write_file_bytes(dir / (prefix + "manifest.json"),
                   std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  return m;
}

}  // namespace decomp
