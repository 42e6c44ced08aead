// histomet command line: synthetic cohort generation, two-module training,
// sensitivity-gated end-to-end evaluation, ablation studies and gradient
// checking. Every command resolves its settings from defaults, an optional
// JSON config file (flat dotted keys) and flag overrides, then writes the
// resolved snapshot next to its outputs so runs can be replayed exactly.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "histomet/checkpoint.hpp"
#include "histomet/cohort.hpp"
#include "histomet/errors.hpp"
#include "histomet/eval.hpp"
#include "histomet/generator.hpp"
#include "histomet/interpret.hpp"
#include "histomet/model.hpp"
#include "histomet/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace histomet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitValidation = 4;

/// Settings resolved from defaults, config file and flags; every key that a
/// command consults is recorded so the snapshot replays the run.
class RunConfig {
 public:
  void load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError(path + ": cannot open config file");
    json j;
    try {
      j = json::parse(f);
    } catch (const json::exception& e) {
      throw ConfigError(path + ": " + std::string(e.what()));
    }
    if (!j.is_object())
      throw ConfigError(path + ": config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
      values_[it.key()] = it.value();
  }

  void set(const std::string& key, json value) {
    values_[key] = std::move(value);
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    T out = fallback;
    auto it = values_.find(key);
    if (it != values_.end()) {
      try {
        out = it->second.get<T>();
      } catch (const json::exception&) {
        throw ConfigError("config key \"" + key + "\" has the wrong type");
      }
    }
    resolved_[key] = json(out);
    return out;
  }

  void note(const std::string& key, json value) {
    resolved_[key] = std::move(value);
  }

  void write_snapshot(const std::string& path,
                      const std::string& command) const {
    json j(resolved_);
    j["command"] = command;
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError(path + ": cannot write config snapshot");
    f << j.dump(2) << "\n";
  }

 private:
  std::map<std::string, json> values_;
  std::map<std::string, json> resolved_;
};

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::size_t threads = 0;
  bool seed_set = false;
  bool threads_set = false;
  bool out_set = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON config file");
  cmd->add_option("--out", f.out_dir, "output directory")
      ->each([&f](const std::string&) { f.out_set = true; });
  cmd->add_option("--seed", f.seed, "root seed")
      ->each([&f](const std::string&) { f.seed_set = true; });
  cmd->add_option("--threads", f.threads, "worker threads")
      ->each([&f](const std::string&) { f.threads_set = true; });
}

RunConfig make_config(const CommonFlags& f) {
  RunConfig cfg;
  if (!f.config_path.empty()) cfg.load_file(f.config_path);
  if (f.seed_set) cfg.set("seed", f.seed);
  if (f.threads_set) cfg.set("threads", f.threads);
  if (f.out_set) cfg.set("out", f.out_dir);
  return cfg;
}

fs::path require_out_dir(RunConfig& cfg, bool create) {
  const std::string out = cfg.get<std::string>("out", "");
  if (out.empty()) throw ConfigError("--out is required");
  if (!fs::exists(out)) {
    if (!create) throw IoError(out + ": output directory does not exist");
    fs::create_directories(out);
  }
  return out;
}

ScaleMode parse_scales(const std::string& s) {
  if (s == "both") return ScaleMode::both;
  if (s == "10x") return ScaleMode::only_10x;
  if (s == "20x") return ScaleMode::only_20x;
  throw ConfigError("model.scales must be both, 10x or 20x");
}

Baseline parse_baseline(const std::string& s) {
  if (s == "none") return Baseline::none;
  if (s == "mean_pool") return Baseline::mean_pool;
  if (s == "max_pool") return Baseline::max_pool;
  throw ConfigError("model.baseline must be none, mean_pool or max_pool");
}

ModelConfig model_config_from(RunConfig& cfg, std::size_t feature_dim) {
  ModelConfig mc;
  mc.feature_dim = feature_dim;
  mc.prototype_count = cfg.get<std::size_t>("model.prototype_count", 16);
  mc.concept_count = cfg.get<std::size_t>("model.concept_count", 8);
  mc.temperature = cfg.get<double>("model.temperature", 10.0);
  mc.scales = parse_scales(cfg.get<std::string>("model.scales", "both"));
  mc.no_condensation = cfg.get<bool>("model.no_condensation", false);
  mc.no_concept_alignment =
      cfg.get<bool>("model.no_concept_alignment", false);
  mc.no_class_prompts = cfg.get<bool>("model.no_class_prompts", false);
  mc.baseline = parse_baseline(cfg.get<std::string>("model.baseline", "none"));
  mc.normalize_compactness =
      cfg.get<bool>("model.normalize_compactness", true);
  return mc;
}

TrainConfig train_config_from(RunConfig& cfg, std::uint64_t seed) {
  TrainConfig tc;
  tc.learning_rate = cfg.get<double>("train.learning_rate", 1e-4);
  tc.lambda_compact = cfg.get<double>("train.lambda_compact", 1e-3);
  tc.max_epochs = cfg.get<std::size_t>("train.max_epochs", 100);
  tc.patience = cfg.get<std::size_t>("train.patience", 10);
  tc.fold_count = cfg.get<std::size_t>("train.fold_count", 5);
  tc.seed = seed;
  if (tc.patience > tc.max_epochs) tc.patience = tc.max_epochs;
  return tc;
}

std::size_t manifest_feature_dim(const Manifest& manifest,
                                 const std::string& manifest_path) {
  for (const SlideRecord& r : manifest) {
    const std::string p = r.path_10x.empty() ? r.path_20x : r.path_10x;
    if (p.empty()) continue;
    return read_bag(resolve_bag_path(manifest_path, p)).features.cols();
  }
  throw IoError(manifest_path + ": manifest references no bags");
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

struct FoldMetrics {
  double acc = 0.0;
  double macro_f1 = 0.0;
  double auc = std::numeric_limits<double>::quiet_NaN();
};

/// Held-out metrics for one module on its own label space; Module B is
/// scored oracle-gated on metastatic slides only.
FoldMetrics module_test_metrics(ModelParams& params, ModuleKind module,
                                const Manifest& test, const BagCache& cache,
                                std::size_t threads) {
  Manifest slides = module_slides(module, test);
  FoldMetrics out;
  if (slides.empty()) return out;
  const std::size_t classes = module_class_count(module);
  std::vector<std::vector<double>> probs(slides.size());
  detail::run_parallel(slides.size(), threads, [&](std::size_t i) {
    probs[i] = forward_slide(params, bags_for(cache, slides[i])).probs;
  });
  std::vector<int> labels, preds;
  for (std::size_t i = 0; i < slides.size(); ++i) {
    labels.push_back(module_label(module, slides[i].label));
    preds.push_back(int(argmax(probs[i])));
  }
  out.acc = accuracy(preds, labels);
  out.macro_f1 = macro_f1(preds, labels, classes);
  try {
    if (module == ModuleKind::A) {
      std::vector<double> s;
      for (const auto& p : probs) s.push_back(p[1]);
      out.auc = roc_auc(s, labels);
    } else {
      out.auc = ovr_macro_auc(probs, labels, classes);
    }
  } catch (const std::invalid_argument&) {
    // single-class test split: AUC undefined
  }
  return out;
}

json summarize_folds(const std::vector<FoldMetrics>& folds) {
  std::vector<double> acc, f1, auc;
  for (const FoldMetrics& m : folds) {
    acc.push_back(m.acc);
    f1.push_back(m.macro_f1);
    if (!std::isnan(m.auc)) auc.push_back(m.auc);
  }
  json j;
  j["folds"] = folds.size();
  j["acc_mean"] = mean_of(acc);
  j["acc_std"] = std_of(acc);
  j["macro_f1_mean"] = mean_of(f1);
  j["macro_f1_std"] = std_of(f1);
  if (!auc.empty()) {
    j["ovr_macro_auc_mean"] = mean_of(auc);
    j["ovr_macro_auc_std"] = std_of(auc);
  }
  return j;
}

// ---------------------------------------------------------------- generate

int cmd_generate(CommonFlags& common, bool create_out,
                 const std::string& counts_csv, bool full_scale) {
  RunConfig cfg = make_config(common);
  if (!counts_csv.empty()) cfg.set("generate.counts", counts_csv);
  if (full_scale) cfg.set("generate.full_scale", true);

  const std::uint64_t seed = cfg.get<std::uint64_t>("seed", 42);
  const std::size_t threads = cfg.get<std::size_t>("threads", 1);
  const fs::path out = require_out_dir(cfg, create_out);

  GeneratorConfig gen;
  gen.seed = derive_seed(seed, "generate");
  gen.feature_dim = cfg.get<std::size_t>("generate.feature_dim", 512);
  gen.bag_min = cfg.get<std::size_t>("generate.bag_min", 64);
  gen.bag_max = cfg.get<std::size_t>("generate.bag_max", 256);
  gen.signal_fraction = cfg.get<double>("generate.signal_fraction", 0.2);
  gen.noise_std = cfg.get<double>("generate.noise_std", 1.0);
  gen.anchor_separation = cfg.get<double>("generate.anchor_separation", 3.0);
  gen.cross_scale_correlation =
      cfg.get<double>("generate.cross_scale_correlation", 0.7);
  gen.multi_slide_patient_fraction =
      cfg.get<double>("generate.multi_slide_patient_fraction", 0.0);
  gen.fold_count = cfg.get<std::size_t>("generate.fold_count", 5);
  gen.single_scale = cfg.get<bool>("generate.single_scale", false);
  if (cfg.get<bool>("generate.full_scale", false))
    gen.class_counts = {3854, 266, 2121, 192, 425};
  const std::string counts = cfg.get<std::string>("generate.counts", "");
  if (!counts.empty()) {
    std::array<std::size_t, kClassCount> parsed{};
    std::stringstream ss(counts);
    std::string item;
    std::size_t i = 0;
    while (std::getline(ss, item, ',') && i < kClassCount)
      parsed[i++] = std::size_t(std::stoull(item));
    if (i != kClassCount)
      throw ConfigError(
          "generate.counts needs five values: "
          "primary,brain,lymph_node,liver,soft_tissue");
    gen.class_counts = parsed;
  }

  Manifest manifest = generate_cohort(gen, out.string(), threads);
  cfg.write_snapshot((out / "generate.config.json").string(), "generate");
  if (manifest.empty())
    std::cerr
        << "warning: all class counts are zero, wrote an empty manifest\n";
  std::cout << "generated " << manifest.size() << " slides under "
            << out.string() << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------- train

int cmd_train(CommonFlags& common, const std::string& module_flag,
              const std::string& manifest_flag) {
  RunConfig cfg = make_config(common);
  if (!manifest_flag.empty()) cfg.set("data.manifest", manifest_flag);

  const std::uint64_t seed = cfg.get<std::uint64_t>("seed", 42);
  const std::size_t threads = cfg.get<std::size_t>("threads", 1);
  const std::string manifest_path = cfg.get<std::string>("data.manifest", "");
  if (manifest_path.empty())
    throw ConfigError("train: --manifest (or data.manifest) is required");
  if (module_flag != "a" && module_flag != "b")
    throw ConfigError("train: --module must be a or b");
  cfg.note("train.module", module_flag);
  const ModuleKind module = module_flag == "a" ? ModuleKind::A : ModuleKind::B;
  const fs::path out = require_out_dir(cfg, true);

  Manifest manifest = read_manifest(manifest_path, /*check_paths=*/true);
  if (manifest.empty()) throw IoError(manifest_path + ": empty manifest");
  const std::size_t feature_dim =
      manifest_feature_dim(manifest, manifest_path);
  cfg.note("data.feature_dim", feature_dim);

  ModelConfig mc = model_config_from(cfg, feature_dim);
  TrainConfig tc = train_config_from(cfg, derive_seed(seed, "train"));

  BagCache cache;
  cache.load(manifest, manifest_path);

  std::vector<FoldMetrics> fold_metrics;
  for (std::size_t fold = 0; fold < tc.fold_count; ++fold) {
    FoldSplit split = fold_split(manifest, int(fold), tc.fold_count);
    TrainConfig fold_tc = tc;
    fold_tc.seed = derive_seed(tc.seed, "fold", fold);
    FitResult result = fit(split.train, split.val, cache, module, mc, fold_tc);
    for (const std::string& w : result.warnings)
      std::cerr << "warning: fold " << fold << ": " << w << "\n";

    const std::string stem =
        "module_" + module_flag + "_fold" + std::to_string(fold);
    Checkpoint ck{module, int(fold), fold_tc.seed, result.params};
    save_checkpoint(ck, (out / (stem + ".hmck")).string());

    std::ofstream log((out / (stem + ".log.jsonl")).string(), std::ios::trunc);
    for (const EpochLog& e : result.log) {
      json j{{"epoch", e.epoch},
             {"train_loss", e.train_loss},
             {"val_loss", e.val_loss}};
      if (!std::isnan(e.val_auc)) j["val_auc"] = e.val_auc;
      log << j.dump() << "\n";
    }

    FoldMetrics fm =
        module_test_metrics(result.params, module, split.test, cache, threads);
    fold_metrics.push_back(fm);
    std::cout << "fold " << fold << ": best epoch " << result.best_epoch
              << ", test acc " << fm.acc << ", macro-F1 " << fm.macro_f1;
    if (!std::isnan(fm.auc)) std::cout << ", auc " << fm.auc;
    std::cout << "\n";
  }

  json summary = summarize_folds(fold_metrics);
  summary["module"] = module_flag;
  std::ofstream sf(
      (out / ("train_" + module_flag + ".summary.json")).string(),
      std::ios::trunc);
  sf << summary.dump(2) << "\n";
  cfg.write_snapshot(
      (out / ("train_" + module_flag + ".config.json")).string(), "train");
  std::cout << "summary: acc " << summary["acc_mean"].get<double>() << " +/- "
            << summary["acc_std"].get<double>() << ", macro-F1 "
            << summary["macro_f1_mean"].get<double>() << " +/- "
            << summary["macro_f1_std"].get<double>() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- eval-e2e

int cmd_eval_e2e(CommonFlags& common, const std::string& manifest_flag,
                 const std::string& targets_flag,
                 const std::string& checkpoints_flag, bool interpret) {
  RunConfig cfg = make_config(common);
  if (!manifest_flag.empty()) cfg.set("data.manifest", manifest_flag);
  if (!targets_flag.empty()) cfg.set("eval.targets", targets_flag);
  if (!checkpoints_flag.empty()) cfg.set("eval.checkpoints", checkpoints_flag);

  const std::size_t threads = cfg.get<std::size_t>("threads", 1);
  const std::string manifest_path = cfg.get<std::string>("data.manifest", "");
  if (manifest_path.empty())
    throw ConfigError("eval-e2e: --manifest (or data.manifest) is required");
  const fs::path out = require_out_dir(cfg, true);
  const std::string ck_dir =
      cfg.get<std::string>("eval.checkpoints", out.string());
  const std::size_t fold_count = cfg.get<std::size_t>("train.fold_count", 5);
  const bool want_interpret = cfg.get<bool>("eval.interpret", interpret);

  std::vector<double> targets;
  {
    const std::string spec =
        cfg.get<std::string>("eval.targets", "0.95,0.90,0.80,0.70");
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) targets.push_back(std::stod(item));
    if (targets.empty()) throw ConfigError("eval-e2e: empty target list");
  }

  Manifest manifest = read_manifest(manifest_path, /*check_paths=*/true);
  if (manifest.empty()) throw IoError(manifest_path + ": empty manifest");
  BagCache cache;
  cache.load(manifest, manifest_path);

  json all_reports = json::array();
  for (std::size_t fold = 0; fold < fold_count; ++fold) {
    const std::string a_path =
        (fs::path(ck_dir) / ("module_a_fold" + std::to_string(fold) + ".hmck"))
            .string();
    const std::string b_path =
        (fs::path(ck_dir) / ("module_b_fold" + std::to_string(fold) + ".hmck"))
            .string();
    Checkpoint ck_a = load_checkpoint(a_path);
    Checkpoint ck_b = load_checkpoint(b_path);
    if (ck_a.module != ModuleKind::A || ck_b.module != ModuleKind::B)
      throw IoError("eval-e2e: checkpoint module mismatch for fold " +
                    std::to_string(fold));

    FoldSplit split = fold_split(manifest, int(fold), fold_count);
    if (split.test.empty() || split.val.empty()) continue;

    std::vector<double> val_scores =
        score_module_a(ck_a.params, split.val, cache, threads);
    std::vector<int> val_labels;
    for (const SlideRecord& r : split.val)
      val_labels.push_back(is_metastatic(r.label) ? 1 : 0);

    for (double target : targets) {
      OperatingPoint op = select_threshold(val_scores, val_labels, target);
      EndToEndReport rep =
          evaluate_e2e(split.test, cache, ck_a.params, ck_b.params, op,
                       threads);
      char tbuf[16];
      std::snprintf(tbuf, sizeof tbuf, "%.2f", target);
      const std::string stem =
          "e2e_fold" + std::to_string(fold) + "_target" + tbuf;
      json jrep = report_to_json(rep);
      jrep["fold"] = fold;
      std::ofstream rf((out / (stem + ".report.json")).string(),
                       std::ios::trunc);
      rf << jrep.dump(2) << "\n";
      write_decision_log(rep, (out / (stem + ".decisions.csv")).string());
      all_reports.push_back(jrep);
      std::cout << "fold " << fold << " target " << tbuf << ": acc "
                << rep.five_class_accuracy << ", macro-F1 "
                << rep.macro_f1_score << ", sens " << rep.module_a_sensitivity
                << ", spec " << rep.module_a_specificity << ", forwarded "
                << rep.workload_forwarded_fraction << "\n";
    }

    if (want_interpret) {
      const fs::path idir = out / "interpret";
      fs::create_directories(idir);
      for (const SlideRecord& r : split.test) {
        SlideForward f = forward_slide(ck_b.params, bags_for(cache, r));
        write_interpretation((idir / (r.slide_id + ".json")).string(),
                             r.slide_id, f);
      }
    }
  }
  if (all_reports.empty())
    throw ValidationError("eval-e2e: no fold produced a report");

  std::ofstream af((out / "e2e_all_reports.json").string(), std::ios::trunc);
  af << all_reports.dump(2) << "\n";
  cfg.write_snapshot((out / "eval_e2e.config.json").string(), "eval-e2e");
  return kExitOk;
}

// ------------------------------------------------------------------ ablate

struct AblationArm {
  std::string name;
  ModelConfig mc;
};

int cmd_ablate(CommonFlags& common, const std::string& study,
               const std::string& manifest_flag) {
  static const std::vector<std::string> known_studies = {
      "prototypes", "concept_alignment", "class_prompts", "multiscale",
      "baselines"};
  if (std::find(known_studies.begin(), known_studies.end(), study) ==
      known_studies.end())
    throw ConfigError("ablate: unknown study \"" + study +
                      "\" (prototypes, concept_alignment, class_prompts, "
                      "multiscale, baselines)");

  RunConfig cfg = make_config(common);
  if (!manifest_flag.empty()) cfg.set("data.manifest", manifest_flag);
  cfg.note("ablate.study", study);

  const std::uint64_t seed = cfg.get<std::uint64_t>("seed", 42);
  const std::size_t threads = cfg.get<std::size_t>("threads", 1);
  const std::string manifest_path = cfg.get<std::string>("data.manifest", "");
  if (manifest_path.empty())
    throw ConfigError("ablate: --manifest (or data.manifest) is required");
  const fs::path out = require_out_dir(cfg, true);

  Manifest manifest = read_manifest(manifest_path, /*check_paths=*/true);
  if (manifest.empty()) throw IoError(manifest_path + ": empty manifest");
  const std::size_t feature_dim =
      manifest_feature_dim(manifest, manifest_path);
  ModelConfig base = model_config_from(cfg, feature_dim);
  TrainConfig tc = train_config_from(cfg, derive_seed(seed, "train"));

  std::vector<AblationArm> arms;
  arms.reserve(8);  // returned pointers stay valid across arm() calls
  auto arm = [&arms, &base](const std::string& name) {
    arms.push_back({name, base});
    return &arms.back().mc;
  };
  if (study == "prototypes") {
    for (std::size_t p : {4, 8, 16, 32, 64})
      arm("P=" + std::to_string(p))->prototype_count = p;
    arm("no_condensation")->no_condensation = true;
  } else if (study == "concept_alignment") {
    arm("with_concepts");
    arm("without_concepts")->no_concept_alignment = true;
  } else if (study == "class_prompts") {
    arm("with_prompts");
    arm("without_prompts")->no_class_prompts = true;
  } else if (study == "multiscale") {
    arm("10x_only")->scales = ScaleMode::only_10x;
    arm("20x_only")->scales = ScaleMode::only_20x;
    arm("fused")->scales = ScaleMode::both;
  } else if (study == "baselines") {
    arm("full_model");
    arm("mean_pool")->baseline = Baseline::mean_pool;
    arm("max_pool")->baseline = Baseline::max_pool;
  }

  BagCache cache;
  cache.load(manifest, manifest_path);

  json table = json::array();
  std::cout << "study " << study << " (module b, " << tc.fold_count
            << " folds)\n";
  for (const AblationArm& a : arms) {
    std::vector<FoldMetrics> folds;
    for (std::size_t fold = 0; fold < tc.fold_count; ++fold) {
      FoldSplit split = fold_split(manifest, int(fold), tc.fold_count);
      TrainConfig fold_tc = tc;
      fold_tc.seed = derive_seed(tc.seed, "fold", fold);
      FitResult result =
          fit(split.train, split.val, cache, ModuleKind::B, a.mc, fold_tc);
      folds.push_back(module_test_metrics(result.params, ModuleKind::B,
                                          split.test, cache, threads));
    }
    json row = summarize_folds(folds);
    row["arm"] = a.name;
    table.push_back(row);
    std::printf("  %-18s acc %.4f +/- %.4f   macro-F1 %.4f +/- %.4f",
                a.name.c_str(), row["acc_mean"].get<double>(),
                row["acc_std"].get<double>(),
                row["macro_f1_mean"].get<double>(),
                row["macro_f1_std"].get<double>());
    if (row.contains("ovr_macro_auc_mean"))
      std::printf("   ovr-auc %.4f +/- %.4f",
                  row["ovr_macro_auc_mean"].get<double>(),
                  row["ovr_macro_auc_std"].get<double>());
    std::printf("\n");
  }

  std::ofstream tf((out / ("ablate_" + study + ".json")).string(),
                   std::ios::trunc);
  tf << table.dump(2) << "\n";
  cfg.write_snapshot((out / ("ablate_" + study + ".config.json")).string(),
                     "ablate");
  return kExitOk;
}

// --------------------------------------------------------------- gradcheck

int cmd_gradcheck(CommonFlags& common, bool break_gradient) {
  RunConfig cfg = make_config(common);
  const std::uint64_t seed = cfg.get<std::uint64_t>("seed", 42);
  const double lambda = cfg.get<double>("gradcheck.lambda_compact", 0.5);
  const double tol = cfg.get<double>("gradcheck.tolerance", 1e-4);
  cfg.note("gradcheck.break_gradient", break_gradient);

  ModelConfig mc;
  mc.feature_dim = 8;
  mc.prototype_count = 4;
  mc.concept_count = 3;
  mc.class_count = 4;
  ModelParams params = init_params(mc, derive_seed(seed, "gradcheck-init"));

  Rng rng(derive_seed(seed, "gradcheck-bags"));
  Matrix bag10(16, mc.feature_dim), bag20(12, mc.feature_dim);
  for (std::size_t k = 0; k < bag10.size(); ++k) bag10[k] = rng.gaussian();
  for (std::size_t k = 0; k < bag20.size(); ++k) bag20[k] = rng.gaussian();
  SlideBags bags;
  bags.set(ScaleId::x10, &bag10);
  bags.set(ScaleId::x20, &bag20);

  GradCheckReport report =
      grad_check(params, bags, 2, lambda, 1e-5, break_gradient);
  for (const GradCheckGroup& g : report.groups)
    std::printf("  %-14s %4zu entries   max rel err %.3e   %s\n",
                g.name.c_str(), g.entries, g.max_rel_error,
                g.max_rel_error <= tol ? "ok" : "FAIL");
  std::printf("worst %.3e (tolerance %.1e)\n", report.worst, tol);

  if (!common.out_dir.empty()) {
    const fs::path out = require_out_dir(cfg, true);
    json j;
    j["worst"] = report.worst;
    j["tolerance"] = tol;
    j["pass"] = report.pass(tol);
    json groups = json::array();
    for (const GradCheckGroup& g : report.groups)
      groups.push_back({{"name", g.name},
                        {"entries", g.entries},
                        {"max_rel_error", g.max_rel_error}});
    j["groups"] = groups;
    std::ofstream f((out / "gradcheck.report.json").string(), std::ios::trunc);
    f << j.dump(2) << "\n";
    cfg.write_snapshot((out / "gradcheck.config.json").string(), "gradcheck");
  }

  if (!report.pass(tol)) {
    std::cerr << "gradient check FAILED\n";
    return kExitValidation;
  }
  std::cout << "gradient check passed\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "histomet: decision-aware metastasis screening and site prediction "
      "over whole-slide feature bags"};
  app.require_subcommand(1);

  CommonFlags g_flags, t_flags, e_flags, a_flags, c_flags;
  bool create_out = false, full_scale = false;
  std::string counts_csv;
  CLI::App* generate =
      app.add_subcommand("generate", "write a synthetic two-scale cohort");
  add_common(generate, g_flags);
  generate->add_flag("--create", create_out, "create the output directory");
  generate->add_option(
      "--counts", counts_csv,
      "class counts: primary,brain,lymph_node,liver,soft_tissue");
  generate->add_flag("--full-scale", full_scale,
                     "use the full-scale cohort counts");

  std::string module_flag, train_manifest;
  CLI::App* train =
      app.add_subcommand("train", "patient-level k-fold training of one module");
  add_common(train, t_flags);
  train->add_option("--module", module_flag, "a or b")->required();
  train->add_option("--manifest", train_manifest, "cohort manifest");

  std::string eval_manifest, targets_flag, checkpoints_flag;
  bool interpret_flag = false;
  CLI::App* eval =
      app.add_subcommand("eval-e2e", "two-stage evaluation at sensitivity targets");
  add_common(eval, e_flags);
  eval->add_option("--manifest", eval_manifest, "cohort manifest");
  eval->add_option("--targets", targets_flag,
                   "comma-separated sensitivity targets");
  eval->add_option("--checkpoints", checkpoints_flag,
                   "directory holding module checkpoints");
  eval->add_flag("--interpret", interpret_flag,
                 "write per-slide interpretation JSON");

  std::string study_flag, ablate_manifest;
  CLI::App* ablate = app.add_subcommand(
      "ablate", "train ablation arms under identical seeds and splits");
  add_common(ablate, a_flags);
  ablate
      ->add_option("--study", study_flag,
                   "prototypes | concept_alignment | class_prompts | "
                   "multiscale | baselines")
      ->required();
  ablate->add_option("--manifest", ablate_manifest, "cohort manifest");

  bool break_gradient = false;
  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference check of every learnable group");
  add_common(gradcheck, c_flags);
  gradcheck->add_flag("--break-gradient", break_gradient,
                      "perturb one analytic gradient (harness self-test)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (generate->parsed())
      return cmd_generate(g_flags, create_out, counts_csv, full_scale);
    if (train->parsed()) return cmd_train(t_flags, module_flag, train_manifest);
    if (eval->parsed())
      return cmd_eval_e2e(e_flags, eval_manifest, targets_flag,
                          checkpoints_flag, interpret_flag);
    if (ablate->parsed()) return cmd_ablate(a_flags, study_flag, ablate_manifest);
    if (gradcheck->parsed()) return cmd_gradcheck(c_flags, break_gradient);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitConfig;
}
