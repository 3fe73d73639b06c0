// decomp: influential-feature extraction and classifier-head decomposition.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "decomp/decomp.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "0.1.0";

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  decomp::write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_json(const fs::path& path, const ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

/// Records inputs (with content hashes), seed and parameters of a run.
class RunRecord {
 public:
  RunRecord(std::string subcommand, std::uint64_t seed) {
    j_["subcommand"] = std::move(subcommand);
    j_["version"] = kVersion;
    j_["seed"] = seed;
    j_["inputs"] = ordered_json::array();
    j_["parameters"] = ordered_json::object();
  }

  void input(const fs::path& path) {
    j_["inputs"].push_back({{"path", path.generic_string()}, {"fnv1a64", hex(fnv1a64(decomp::read_file_bytes(path)))}});
  }

  /// The manifest file plus every tensor it references.
  void manifest_inputs(const fs::path& manifest_path, const decomp::Manifest& m) {
    input(manifest_path);
    const auto base = manifest_path.parent_path();
    auto resolve = [&](const fs::path& p) { return p.is_absolute() ? p : base / p; };
    for (const auto& c : m.classes) input(resolve(c.features_path));
    input(resolve(m.weights_path));
    if (m.bias_path) input(resolve(*m.bias_path));
  }

  ordered_json& parameters() { return j_["parameters"]; }

  void output(const std::string& name) {
    if (!j_.contains("outputs")) j_["outputs"] = ordered_json::array();
    j_["outputs"].push_back(name);
  }

  void save(const fs::path& dir) const { write_json(dir / "run_manifest.json", j_); }

 private:
  ordered_json j_;
};

struct Common {
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string out = "out";
  bool lenient = false;
  std::string tiebreak = "fixed";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Seed for every random draw")->capture_default_str();
  cmd->add_option("--threads", c.threads, "Worker threads (0 = auto); results do not depend on it")
      ->capture_default_str();
  cmd->add_option("--out", c.out, "Output root; artifacts go to <out>/<subcommand>/")->capture_default_str();
  cmd->add_flag("--lenient", c.lenient, "Clamp negative features to 0 instead of failing");
  cmd->add_option("--tiebreak", c.tiebreak,
                  "Tie-breaking is fixed: equal feature values by ascending index; histogram entries by "
                  "(count desc, mass desc, index asc); argmax ties by lowest class")
      ->check(CLI::IsMember({"fixed"}))
      ->capture_default_str();
}

fs::path out_dir(const Common& c, const std::string& sub) {
  fs::path dir = fs::path(c.out) / sub;
  fs::create_directories(dir);
  return dir;
}

decomp::Dataset load(const std::string& path, const Common& c) {
  decomp::LoadOptions opts;
  opts.negatives = c.lenient ? decomp::NegativePolicy::Lenient : decomp::NegativePolicy::Strict;
  auto ds = decomp::load_manifest(path, opts);
  for (const auto& w : ds.warnings) std::cerr << "warning: " << w << "\n";
  return ds;
}

decomp::InfluenceMap load_imap(const std::string& path) {
  if (!fs::exists(path)) throw decomp::Error(decomp::ErrorCode::IoFailure, "influence map not found: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(decomp::read_file_bytes(path));
  } catch (const nlohmann::json::exception& e) {
    throw decomp::Error(decomp::ErrorCode::ManifestInvalid, path + ": " + e.what());
  }
  return decomp::influence_map_from_json(j);
}

std::vector<std::size_t> parse_grid(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoul(item));
    } catch (const std::exception&) {
      throw decomp::Error(decomp::ErrorCode::SpecInvalid, "bad grid entry '" + item + "'");
    }
  }
  if (out.empty()) throw decomp::Error(decomp::ErrorCode::SpecInvalid, "empty grid");
  return out;
}

// ---------------------------------------------------------------------------

struct ExtractArgs {
  std::string manifest;
  std::optional<std::size_t> k1;
  std::optional<std::size_t> k2;
  std::optional<double> coverage;
  std::string coverage_mode = "instance";
};

void run_extract(const ExtractArgs& a, const Common& c) {
  const auto ds = load(a.manifest, c);
  std::size_t k1 = 0;
  if (a.coverage) {
    const auto mode = a.coverage_mode == "class" ? decomp::CoverageMode::ClassMean : decomp::CoverageMode::InstanceMean;
    k1 = decomp::choose_k1_by_coverage(ds.classes, *a.coverage, mode);
    std::cout << "k1 chosen by coverage " << *a.coverage << ": " << k1 << "\n";
  } else {
    k1 = *a.k1;
  }
  const std::size_t k2 = a.k2.value_or(k1);
  const auto hists = decomp::class_histograms(ds.classes, k1, c.threads);
  const auto map = decomp::build_influence_map(ds.classes, k1, k2, c.threads);

  const auto dir = out_dir(c, "extract");
  auto j = decomp::influence_map_json(map);
  if (a.coverage) {
    j["k1_source"] = "coverage";
    j["coverage_target"] = *a.coverage;
    j["coverage_mode"] = a.coverage_mode;
  } else {
    j["k1_source"] = "explicit";
  }
  write_json(dir / "influence_map.json", j);

  std::string csv = "label,index,count,mass,relative_frequency\n";
  for (std::size_t y = 0; y < hists.size(); ++y) {
    const auto& h = hists[y];
    const double total = double(h.total());
    for (std::size_t idx = 0; idx < h.dim(); ++idx) {
      if (h.counts[idx] == 0) continue;
      char buf[160];
      std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.17g,%.17g\n", y, idx, h.counts[idx], h.mass[idx],
                    double(h.counts[idx]) / total);
      csv += buf;
    }
  }
  write_text(dir / "histograms.csv", csv);

  RunRecord rec("extract", c.seed);
  rec.manifest_inputs(a.manifest, ds.manifest);
  rec.parameters()["k1"] = k1;
  rec.parameters()["k2"] = k2;
  rec.parameters()["coverage"] = a.coverage ? ordered_json(*a.coverage) : ordered_json(nullptr);
  rec.parameters()["coverage_mode"] = a.coverage_mode;
  rec.output("influence_map.json");
  rec.output("histograms.csv");
  rec.save(dir);
  std::cout << "wrote " << (dir / "influence_map.json").string() << "\n";
}

struct EvalArgs {
  std::string manifest;
  std::string imap;
};

void run_eval(const EvalArgs& a, const Common& c) {
  const auto ds = load(a.manifest, c);
  const auto map = load_imap(a.imap);
  const auto dhead = decomp::decompose(ds.head, map);
  const auto data = decomp::stack_classes(ds.classes);
  const auto report = decomp::evaluate(data, ds.head, dhead, {c.threads, map.k1, map.k2, c.seed});
  const auto cost = decomp::cost_report(ds.head.dim, ds.head.classes, dhead.sizes());

  const auto dir = out_dir(c, "eval");
  auto j = decomp::report_json(report);
  j["cost"] = {{"full_mults", cost.full_mults}, {"decomposed_mults", cost.decomposed_mults}, {"ratio", cost.ratio}};
  write_json(dir / "report.json", j);
  const auto table = decomp::report_table(report, ds.head.dim, ds.head.classes);
  write_text(dir / "report.txt", table);
  decomp::save_decomposed_head(dhead, dir, "decomposed_head");

  RunRecord rec("eval", c.seed);
  rec.manifest_inputs(a.manifest, ds.manifest);
  rec.input(a.imap);
  rec.output("report.json");
  rec.output("report.txt");
  rec.output("decomposed_head.json");
  rec.save(dir);
  std::cout << table;
}

struct SweepArgs {
  std::string manifest;
  std::string eval_manifest;
  std::string k1_grid;
  std::string k2_grid;
};

void run_sweep(const SweepArgs& a, const Common& c) {
  const auto train = load(a.manifest, c);
  const auto eval_ds = a.eval_manifest.empty() ? train : load(a.eval_manifest, c);
  if (eval_ds.head.weights != train.head.weights)
    throw decomp::Error(decomp::ErrorCode::DimMismatch, "train and eval manifests reference different heads");
  const auto k1s = parse_grid(a.k1_grid), k2s = parse_grid(a.k2_grid.empty() ? a.k1_grid : a.k2_grid);
  const auto cells = decomp::sweep(train.classes, decomp::stack_classes(eval_ds.classes), train.head, k1s, k2s, c.threads);

  const auto dir = out_dir(c, "sweep");
  write_text(dir / "sweep.csv", decomp::sweep_csv(cells));
  ordered_json j = ordered_json::array();
  for (const auto& cell : cells) {
    ordered_json e = {{"k1", cell.k1}, {"k2", cell.k2}, {"skipped", cell.skipped}};
    if (!cell.skipped) e["report"] = decomp::report_json(cell.report);
    j.push_back(e);
  }
  write_json(dir / "sweep.json", j);

  RunRecord rec("sweep", c.seed);
  rec.manifest_inputs(a.manifest, train.manifest);
  if (!a.eval_manifest.empty()) rec.manifest_inputs(a.eval_manifest, eval_ds.manifest);
  rec.parameters()["k1_grid"] = k1s;
  rec.parameters()["k2_grid"] = k2s;
  rec.output("sweep.csv");
  rec.output("sweep.json");
  rec.save(dir);
  std::cout << decomp::sweep_csv(cells);
}

struct AblateArgs {
  std::string manifest;
  std::string train_manifest;
  std::string imap;
  std::string noise_mode = "fitted";
  std::string target = "both";
  std::string set = "true-label";
  bool full_complement = false;
};

void run_ablate(const AblateArgs& a, const Common& c) {
  const auto ds = load(a.manifest, c);
  const auto train = a.train_manifest.empty() ? ds : load(a.train_manifest, c);
  const auto map = load_imap(a.imap);
  const auto data = decomp::stack_classes(ds.classes);
  decomp::NoiseModel noise;
  if (a.noise_mode == "fitted")
    noise = decomp::NoiseModel::fitted(decomp::stack_classes(train.classes).features);
  else if (a.noise_mode == "unit")
    noise = decomp::NoiseModel::unit(ds.head.dim);
  else
    noise = decomp::NoiseModel::zero(ds.head.dim);

  const auto dir = out_dir(c, "ablate");
  RunRecord rec("ablate", c.seed);
  rec.manifest_inputs(a.manifest, ds.manifest);
  if (!a.train_manifest.empty()) rec.manifest_inputs(a.train_manifest, train.manifest);
  rec.input(a.imap);
  rec.parameters()["noise_mode"] = a.noise_mode;
  rec.parameters()["ablate_target"] = a.target;
  rec.parameters()["ablate_set"] = a.set;
  rec.parameters()["full_complement"] = a.full_complement;

  std::string table;
  for (auto target : {decomp::AblationTarget::Influential, decomp::AblationTarget::Complement}) {
    const std::string name(decomp::to_string(target));
    if (a.target != "both" && a.target != name) continue;
    decomp::AblationConfig cfg;
    cfg.target = target;
    cfg.set = a.set == "union" ? decomp::ReplacementSet::Union : decomp::ReplacementSet::TrueLabel;
    cfg.seed = c.seed;
    cfg.threads = c.threads;
    cfg.full_complement = a.full_complement;
    const auto r = decomp::ablate_noise(data, ds.head, map, noise, cfg);
    write_json(dir / ("report_" + name + ".json"), decomp::report_json(r));
    rec.output("report_" + name + ".json");
    table += decomp::report_table(r);
  }
  write_text(dir / "report.txt", table);
  rec.output("report.txt");
  rec.save(dir);
  std::cout << table;
}

void run_overlap(const std::string& imap_path, const Common& c) {
  const auto map = load_imap(imap_path);
  const auto o = decomp::overlap(map);
  const auto dir = out_dir(c, "overlap");
  write_json(dir / "overlap.json", decomp::overlap_json(o));
  write_text(dir / "overlap.txt", decomp::overlap_table(o));
  RunRecord rec("overlap", c.seed);
  rec.input(imap_path);
  rec.output("overlap.json");
  rec.output("overlap.txt");
  rec.save(dir);
  std::cout << decomp::overlap_table(o);
}

struct FinetuneArgs {
  std::string manifest;
  std::string val_manifest;
  std::string imap;
  double lr = 0.0;
  std::size_t epochs = 10;
  std::size_t batch_size = 0;
  double l2 = 0.0;
};

void run_finetune(const FinetuneArgs& a, const Common& c) {
  const auto train = load(a.manifest, c);
  std::optional<decomp::Dataset> val;
  if (!a.val_manifest.empty()) val = load(a.val_manifest, c);
  const auto map = load_imap(a.imap);
  const auto start = decomp::decompose(train.head, map);
  const auto train_set = decomp::stack_classes(train.classes);
  std::optional<decomp::LabeledSet> holdout;
  if (val) holdout = decomp::stack_classes(val->classes);

  decomp::TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch_size;
  cfg.l2_penalty = a.l2;
  cfg.seed = c.seed;
  cfg.learning_rate = a.lr > 0.0 ? a.lr : decomp::select_learning_rate(start, train_set, a.l2);
  cfg.halve_on_increase = a.lr <= 0.0;

  const auto dir = out_dir(c, "finetune");
  decomp::FitResult result;
  int status = 0;
  try {
    result = decomp::fit(start, train_set, cfg, holdout ? &*holdout : nullptr);
  } catch (const decomp::DivergenceError& e) {
    std::cerr << "error: " << e.what() << " (saving last finite state)\n";
    result = e.last_finite();
    status = 2;
  }
  decomp::save_decomposed_head(result.head, dir, "decomposed_head");

  std::string csv = "epoch,loss,A_d_holdout\n";
  for (std::size_t e = 0; e < result.loss_history.size(); ++e) {
    char buf[96];
    if (holdout)
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.8f\n", e, result.loss_history[e], result.holdout_accuracy[e]);
    else
      std::snprintf(buf, sizeof buf, "%zu,%.17g,\n", e, result.loss_history[e]);
    csv += buf;
  }
  write_text(dir / "loss.csv", csv);

  ordered_json j;
  j["learning_rate"] = cfg.learning_rate;
  j["learning_rate_source"] = a.lr > 0.0 ? "explicit" : "halving";
  j["final_learning_rate"] = result.learning_rate;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["l2"] = cfg.l2_penalty;
  j["seed"] = cfg.seed;
  j["initial_loss"] = result.loss_history.front();
  j["final_loss"] = result.loss_history.back();
  j["A_d_train_before"] = decomp::decomposed_accuracy(start, train_set);
  j["A_d_train_after"] = decomp::decomposed_accuracy(result.head, train_set);
  if (holdout) {
    j["A_d_holdout_before"] = result.holdout_accuracy.front();
    j["A_d_holdout_after"] = result.holdout_accuracy.back();
  }
  write_json(dir / "report.json", j);

  RunRecord rec("finetune", c.seed);
  rec.manifest_inputs(a.manifest, train.manifest);
  if (val) rec.manifest_inputs(a.val_manifest, val->manifest);
  rec.input(a.imap);
  rec.parameters() = j;
  rec.output("decomposed_head.json");
  rec.output("loss.csv");
  rec.output("report.json");
  rec.save(dir);
  std::cout << "loss " << result.loss_history.front() << " -> " << result.loss_history.back() << "\n";
  if (status != 0) throw decomp::Error(decomp::ErrorCode::DivergenceDetected, "training diverged");
}

struct AttribArgs {
  std::string manifest;
  std::string imap;
  int label = 0;
  std::size_t instance = 0;
  std::size_t height = 224;
  std::size_t width = 224;
  std::string centering = "spatial";
};

void run_attrib(const AttribArgs& a, const Common& c) {
  const auto ds = load(a.manifest, c);
  const auto map = load_imap(a.imap);
  if (a.label < 0 || static_cast<std::size_t>(a.label) >= ds.classes.size())
    throw decomp::Error(decomp::ErrorCode::MissingClass, "label " + std::to_string(a.label));
  const auto& cls = ds.classes[static_cast<std::size_t>(a.label)];
  if (!cls.spatial())
    throw decomp::Error(decomp::ErrorCode::DimMismatch, "attribution needs rank-4 (N x m x h x w) features");
  if (a.instance >= cls.instances())
    throw decomp::Error(decomp::ErrorCode::IndexOutOfRange, "instance " + std::to_string(a.instance));
  const auto centering =
      a.centering == "cross-channel" ? decomp::Centering::CrossChannelMean : decomp::Centering::SpatialMean;
  const auto& influential = map.classes.at(static_cast<std::size_t>(a.label));
  const auto other = decomp::sample_complement(influential, cls.channels(), influential.size(), c.seed);

  const auto dir = out_dir(c, "attrib");
  const std::string stem = "class" + std::to_string(a.label) + "_inst" + std::to_string(a.instance);
  ordered_json sidecar;
  sidecar["label"] = a.label;
  sidecar["instance"] = a.instance;
  sidecar["source_size"] = {cls.height(), cls.width()};
  sidecar["target_size"] = {a.height, a.width};
  sidecar["centering"] = a.centering;
  sidecar["maps"] = ordered_json::array();
  RunRecord rec("attrib", c.seed);
  for (const auto& [kind, indices] : {std::pair{std::string("influential"), influential},
                                      std::pair{std::string("noninfluential"), other}}) {
    auto m = decomp::attribution_map(cls.instance(a.instance), cls.channels(), cls.height(), cls.width(), indices,
                                     a.height, a.width, centering);
    m.label = a.label;
    const std::string file = stem + "_" + kind + ".pgm";
    decomp::write_pgm(m, dir / file);
    sidecar["maps"].push_back({{"file", file}, {"kind", kind}, {"indices", indices}});
    rec.output(file);
  }
  write_json(dir / (stem + ".json"), sidecar);
  rec.manifest_inputs(a.manifest, ds.manifest);
  rec.input(a.imap);
  rec.parameters() = sidecar;
  rec.output(stem + ".json");
  rec.save(dir);
  std::cout << "wrote " << (dir / (stem + "_influential.pgm")).string() << "\n";
}

struct PlantedArgs {
  decomp::PlantedSpec spec;
  std::size_t val_per_class = 200;
  std::string dtype = "f32";
};

void run_gen_planted(PlantedArgs a, const Common& c) {
  a.spec.seed = c.seed;
  const std::size_t n_train = a.spec.per_class;
  a.spec.per_class = n_train + a.val_per_class;
  const auto data = decomp::generate_planted(a.spec);
  std::vector<decomp::ClassFeatures> train, val;
  for (const auto& cls : data.classes) {
    auto [first, second] = decomp::split_instances(cls, n_train);
    train.push_back(std::move(first));
    if (a.val_per_class > 0) val.push_back(std::move(second));
  }
  const auto dtype = a.dtype == "f64" ? decomp::DType::F64 : decomp::DType::F32;
  ordered_json meta = {{"model", "planted"},
                       {"classes", a.spec.classes},
                       {"m", a.spec.dim},
                       {"planted_per_class", a.spec.planted_per_class},
                       {"signal_mean", a.spec.signal_mean},
                       {"noise_mean", a.spec.noise_mean},
                       {"signal_sd", a.spec.signal_sd},
                       {"noise_sd", a.spec.noise_sd},
                       {"spatial", a.spec.spatial},
                       {"seed", a.spec.seed}};
  const auto dir = out_dir(c, "gen-planted");
  meta["split"] = "train";
  decomp::write_dataset(dir / "train", train, data.head, meta, dtype);
  if (!val.empty()) {
    meta["split"] = "val";
    decomp::write_dataset(dir / "val", val, data.head, meta, dtype);
  }
  decomp::InfluenceMap truth{a.spec.planted_per_class, a.spec.planted_per_class, a.spec.dim, data.planted};
  write_json(dir / "planted.json", decomp::influence_map_json(truth));

  RunRecord rec("gen-planted", c.seed);
  rec.parameters() = meta;
  rec.parameters()["per_class_train"] = n_train;
  rec.parameters()["per_class_val"] = a.val_per_class;
  rec.output("train/manifest.json");
  if (!val.empty()) rec.output("val/manifest.json");
  rec.output("planted.json");
  rec.save(dir);
  std::cout << "wrote " << (dir / "train" / "manifest.json").string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-specific influential features and decomposed classifier heads"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Common common;

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "Select influential features per class");
  extract->add_option("--manifest", ex.manifest, "Training manifest")->required();
  auto* k1opt = extract->add_option("--k1", ex.k1, "Per-instance top-k width");
  auto* covopt = extract->add_option("--coverage", ex.coverage, "Pick k1 as the smallest width reaching this coverage")
                     ->check(CLI::Range(0.0, 1.0));
  k1opt->excludes(covopt);
  covopt->excludes(k1opt);
  extract->add_option("--k2", ex.k2, "Features kept per class (default: k1)");
  extract->add_option("--coverage-mode", ex.coverage_mode, "instance | class")
      ->check(CLI::IsMember({"instance", "class"}))
      ->capture_default_str();
  add_common(extract, common);

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Full vs decomposed accuracy and r_A");
  eval->add_option("--manifest", ev.manifest, "Evaluation manifest")->required();
  eval->add_option("--imap", ev.imap, "Influence map JSON")->required();
  add_common(eval, common);

  SweepArgs sw;
  auto* sweep = app.add_subcommand("sweep", "Accuracy over a k1 x k2 grid");
  sweep->add_option("--manifest", sw.manifest, "Training manifest (histograms)")->required();
  sweep->add_option("--eval-manifest", sw.eval_manifest, "Evaluation manifest (default: training manifest)");
  sweep->add_option("--k1-grid", sw.k1_grid, "Comma-separated k1 values")->required();
  sweep->add_option("--k2-grid", sw.k2_grid, "Comma-separated k2 values (default: k1 grid)");
  add_common(sweep, common);

  AblateArgs ab;
  auto* ablate = app.add_subcommand("ablate", "Replace feature subsets with noise and measure accuracy");
  ablate->add_option("--manifest", ab.manifest, "Evaluation manifest")->required();
  ablate->add_option("--train-manifest", ab.train_manifest, "Manifest the fitted noise is estimated from");
  ablate->add_option("--imap", ab.imap, "Influence map JSON")->required();
  ablate->add_option("--noise-mode", ab.noise_mode, "fitted | unit | zero")
      ->check(CLI::IsMember({"fitted", "unit", "zero"}))
      ->capture_default_str();
  ablate->add_option("--ablate-target", ab.target, "influential | complement | both")
      ->check(CLI::IsMember({"influential", "complement", "both"}))
      ->capture_default_str();
  ablate->add_option("--ablate-set", ab.set, "true-label | union")
      ->check(CLI::IsMember({"true-label", "union"}))
      ->capture_default_str();
  ablate->add_flag("--full-complement", ab.full_complement, "Complement mode replaces every non-influential feature");
  add_common(ablate, common);

  std::string overlap_imap;
  auto* overlap = app.add_subcommand("overlap", "Pairwise overlap of class index sets");
  overlap->add_option("--imap", overlap_imap, "Influence map JSON")->required();
  add_common(overlap, common);

  FinetuneArgs ft;
  auto* finetune = app.add_subcommand("finetune", "Retrain the decomposed head on cached features");
  finetune->add_option("--manifest", ft.manifest, "Training manifest")->required();
  finetune->add_option("--val-manifest", ft.val_manifest, "Holdout manifest for per-epoch A_d");
  finetune->add_option("--imap", ft.imap, "Influence map JSON")->required();
  finetune->add_option("--lr", ft.lr, "Learning rate (0 = choose by halving)")->capture_default_str();
  finetune->add_option("--epochs", ft.epochs)->capture_default_str();
  finetune->add_option("--batch-size", ft.batch_size, "0 = full batch")->capture_default_str();
  finetune->add_option("--l2", ft.l2)->capture_default_str();
  add_common(finetune, common);

  AttribArgs at;
  auto* attrib = app.add_subcommand("attrib", "Spatial attribution maps from influential channels");
  attrib->add_option("--manifest", at.manifest, "Manifest with rank-4 features")->required();
  attrib->add_option("--imap", at.imap, "Influence map JSON")->required();
  attrib->add_option("--label", at.label)->capture_default_str();
  attrib->add_option("--instance", at.instance)->capture_default_str();
  attrib->add_option("--height", at.height)->capture_default_str();
  attrib->add_option("--width", at.width)->capture_default_str();
  attrib->add_option("--centering", at.centering, "spatial | cross-channel")
      ->check(CLI::IsMember({"spatial", "cross-channel"}))
      ->capture_default_str();
  add_common(attrib, common);

  PlantedArgs pl;
  auto* gen = app.add_subcommand("gen-planted", "Write a synthetic dataset with known influential features");
  gen->add_option("--classes", pl.spec.classes)->capture_default_str();
  gen->add_option("--dim", pl.spec.dim)->capture_default_str();
  gen->add_option("--planted", pl.spec.planted_per_class)->capture_default_str();
  gen->add_option("--per-class", pl.spec.per_class, "Training instances per class")->capture_default_str();
  gen->add_option("--val-per-class", pl.val_per_class)->capture_default_str();
  gen->add_option("--signal-mean", pl.spec.signal_mean)->capture_default_str();
  gen->add_option("--noise-mean", pl.spec.noise_mean)->capture_default_str();
  gen->add_option("--signal-sd", pl.spec.signal_sd)->capture_default_str();
  gen->add_option("--noise-sd", pl.spec.noise_sd)->capture_default_str();
  gen->add_option("--spatial", pl.spec.spatial, "Side of spatial maps (0 = pooled only)")->capture_default_str();
  gen->add_option("--dtype", pl.dtype)->check(CLI::IsMember({"f32", "f64"}))->capture_default_str();
  add_common(gen, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (extract->parsed()) {
      if (!ex.k1 && !ex.coverage) throw decomp::Error(decomp::ErrorCode::SpecInvalid, "one of --k1 or --coverage is required");
      run_extract(ex, common);
    } else if (eval->parsed()) {
      run_eval(ev, common);
    } else if (sweep->parsed()) {
      run_sweep(sw, common);
    } else if (ablate->parsed()) {
      run_ablate(ab, common);
    } else if (overlap->parsed()) {
      run_overlap(overlap_imap, common);
    } else if (finetune->parsed()) {
      run_finetune(ft, common);
    } else if (attrib->parsed()) {
      run_attrib(at, common);
    } else if (gen->parsed()) {
      run_gen_planted(pl, common);
    }
  } catch (const decomp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return decomp::is_input_error(e.code()) ? 1 : 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
