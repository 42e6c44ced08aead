#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "histomet/generator.hpp"
#include "histomet/metrics.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace histomet;
namespace fs = std::filesystem;

namespace {

GeneratorConfig small_config(std::uint64_t seed = 7) {
  GeneratorConfig cfg;
  cfg.seed = seed;
  cfg.feature_dim = 16;
  cfg.bag_min = 8;
  cfg.bag_max = 24;
  cfg.class_counts = {20, 6, 12, 6, 6};
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

// minimal logistic regression on mean-pooled bags, gradient descent;
// test-only machinery
double linear_probe_auc(const Manifest& manifest,
                        const std::string& manifest_path) {
  std::vector<Vector> x;
  std::vector<int> y;
  for (const SlideRecord& r : manifest) {
    FeatureBag bag = read_bag(resolve_bag_path(manifest_path, r.path_10x));
    Vector mean(bag.features.cols(), 0.0);
    for (std::size_t i = 0; i < bag.features.rows(); ++i)
      for (std::size_t j = 0; j < bag.features.cols(); ++j)
        mean[j] += bag.features.at(i, j);
    for (auto& v : mean) v /= double(bag.features.rows());
    x.push_back(mean);
    y.push_back(is_metastatic(r.label) ? 1 : 0);
  }
  // even indices train, odd indices test
  const std::size_t dim = x[0].size();
  Vector w(dim, 0.0);
  double b = 0.0;
  for (int epoch = 0; epoch < 300; ++epoch) {
    for (std::size_t i = 0; i < x.size(); i += 2) {
      double z = b;
      for (std::size_t j = 0; j < dim; ++j) z += w[j] * x[i][j];
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double g = p - double(y[i]);
      for (std::size_t j = 0; j < dim; ++j) w[j] -= 0.05 * g * x[i][j];
      b -= 0.05 * g;
    }
  }
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t i = 1; i < x.size(); i += 2) {
    double z = b;
    for (std::size_t j = 0; j < dim; ++j) z += w[j] * x[i][j];
    scores.push_back(z);
    labels.push_back(y[i]);
  }
  return roc_auc(scores, labels);
}

}  // namespace

TEST_CASE("plan_cohort matches requested class counts and ids are unique") {
  GeneratorConfig cfg = small_config();
  Manifest m = plan_cohort(cfg);
  REQUIRE(m.size() == cfg.total_slides());
  std::map<SlideLabel, std::size_t> counts;
  std::set<std::string> slide_ids, patient_ids;
  for (const SlideRecord& r : m) {
    counts[r.label] += 1;
    slide_ids.insert(r.slide_id);
    patient_ids.insert(r.patient_id);
    CHECK(r.fold >= 0);
    CHECK(r.fold < int(cfg.fold_count));
  }
  CHECK(slide_ids.size() == m.size());
  CHECK(patient_ids.size() == m.size());  // unique patients by default
  CHECK(counts[SlideLabel::Primary] == 20);
  CHECK(counts[SlideLabel::Brain] == 6);
  CHECK(counts[SlideLabel::LymphNode] == 12);
}

TEST_CASE("default config is the 5 percent scale-down, 343 slides") {
  GeneratorConfig cfg;
  CHECK(cfg.class_counts[0] == 193);   // Primary
  CHECK(cfg.class_counts[1] == 13);    // Brain
  CHECK(cfg.class_counts[2] == 106);   // LymphNode
  CHECK(cfg.class_counts[3] == 10);    // Liver
  CHECK(cfg.class_counts[4] == 21);    // SoftTissue
  CHECK(cfg.total_slides() == 343);
  CHECK(cfg.feature_dim == 512);
}

TEST_CASE("multi-slide patients share a fold") {
  GeneratorConfig cfg = small_config();
  cfg.multi_slide_patient_fraction = 0.5;
  Manifest m = plan_cohort(cfg);
  std::map<std::string, std::set<int>> folds_of;
  std::map<std::string, int> slides_of;
  for (const SlideRecord& r : m) {
    folds_of[r.patient_id].insert(r.fold);
    slides_of[r.patient_id] += 1;
  }
  CHECK(folds_of.size() < m.size());  // some merging happened
  bool some_multi = false;
  for (const auto& [pid, folds] : folds_of) {
    CHECK(folds.size() == 1);
    if (slides_of[pid] == 2) some_multi = true;
  }
  CHECK(some_multi);
}

TEST_CASE("generate_cohort writes bags deterministically") {
  GeneratorConfig cfg = small_config(21);
  cfg.class_counts = {4, 2, 2, 2, 2};
  TempDir a, b;
  Manifest ma = generate_cohort(cfg, a.str());
  Manifest mb = generate_cohort(cfg, b.str());
  REQUIRE(ma.size() == mb.size());
  CHECK(slurp(a.file("manifest.jsonl")) == slurp(b.file("manifest.jsonl")));
  for (const SlideRecord& r : ma) {
    CHECK(slurp(a.file(r.path_10x)) == slurp(b.file(r.path_10x)));
    CHECK(slurp(a.file(r.path_20x)) == slurp(b.file(r.path_20x)));
  }

  // threaded generation produces the same bytes
  TempDir c;
  generate_cohort(cfg, c.str(), 2);
  for (const SlideRecord& r : ma)
    CHECK(slurp(a.file(r.path_10x)) == slurp(c.file(r.path_10x)));

  // different seed changes content
  GeneratorConfig other = cfg;
  other.seed = 22;
  TempDir d;
  Manifest md = generate_cohort(other, d.str());
  CHECK_FALSE(slurp(a.file(md[0].path_10x)) == slurp(d.file(md[0].path_10x)));
}

TEST_CASE("generated bags load and have the declared shape") {
  GeneratorConfig cfg = small_config(31);
  cfg.class_counts = {3, 1, 1, 1, 1};
  TempDir dir;
  Manifest m = generate_cohort(cfg, dir.str());
  const std::string mpath = dir.file("manifest.jsonl");
  CHECK_NOTHROW(read_manifest(mpath, /*check_paths=*/true));
  for (const SlideRecord& r : m) {
    FeatureBag b10 = read_bag(resolve_bag_path(mpath, r.path_10x));
    FeatureBag b20 = read_bag(resolve_bag_path(mpath, r.path_20x));
    CHECK(b10.magnification == ScaleId::x10);
    CHECK(b20.magnification == ScaleId::x20);
    CHECK(b10.features.cols() == cfg.feature_dim);
    CHECK(b10.features.rows() >= cfg.bag_min);
    CHECK(b10.features.rows() <= cfg.bag_max);
    // scales share the bag size and correlate per patch
    CHECK(b20.features.rows() == b10.features.rows());
    CHECK(all_finite(b10.features));
  }
}

TEST_CASE("cross-scale correlation is visible in the features") {
  GeneratorConfig cfg = small_config(41);
  cfg.class_counts = {6, 0, 0, 0, 0};
  cfg.cross_scale_correlation = 0.9;
  TempDir dir;
  Manifest m = generate_cohort(cfg, dir.str());
  const std::string mpath = dir.file("manifest.jsonl");
  double corr_sum = 0.0;
  std::size_t n = 0;
  for (const SlideRecord& r : m) {
    FeatureBag b10 = read_bag(resolve_bag_path(mpath, r.path_10x));
    FeatureBag b20 = read_bag(resolve_bag_path(mpath, r.path_20x));
    for (std::size_t i = 0; i < b10.features.rows(); ++i) {
      double dot = 0.0, n1 = 0.0, n2 = 0.0;
      for (std::size_t j = 0; j < b10.features.cols(); ++j) {
        dot += b10.features.at(i, j) * b20.features.at(i, j);
        n1 += b10.features.at(i, j) * b10.features.at(i, j);
        n2 += b20.features.at(i, j) * b20.features.at(i, j);
      }
      corr_sum += dot / std::sqrt(n1 * n2);
      ++n;
    }
  }
  CHECK(corr_sum / double(n) > 0.6);
}

TEST_CASE("empty cohort yields empty manifest and no bag files") {
  GeneratorConfig cfg = small_config();
  cfg.class_counts = {0, 0, 0, 0, 0};
  TempDir dir;
  Manifest m = generate_cohort(cfg, dir.str());
  CHECK(m.empty());
  CHECK(read_manifest(dir.file("manifest.jsonl")).empty());
  CHECK_FALSE(fs::exists(dir.path / "bags"));
}

TEST_CASE("generator config validation") {
  GeneratorConfig cfg = small_config();
  cfg.feature_dim = 0;
  CHECK_THROWS_AS(plan_cohort(cfg), ConfigError);
  cfg = small_config();
  cfg.signal_fraction = 0.0;
  CHECK_THROWS_AS(plan_cohort(cfg), ConfigError);
  cfg = small_config();
  cfg.bag_max = cfg.bag_min - 1;
  CHECK_THROWS_AS(plan_cohort(cfg), ConfigError);
  CHECK_THROWS_AS(generate_cohort(small_config(), "/nonexistent/dir/xyz"),
                  IoError);
}

TEST_CASE("planted signal separates primary from metastatic: probe AUC") {
  GeneratorConfig cfg = small_config(51);
  cfg.class_counts = {30, 8, 14, 8, 10};
  TempDir dir;
  Manifest m = generate_cohort(cfg, dir.str());
  const double auc = linear_probe_auc(m, dir.file("manifest.jsonl"));
  CHECK(auc >= 0.8);
}

TEST_CASE("single-scale config omits 20x bags") {
  GeneratorConfig cfg = small_config(61);
  cfg.class_counts = {3, 1, 1, 1, 1};
  cfg.single_scale = true;
  TempDir dir;
  Manifest m = generate_cohort(cfg, dir.str());
  for (const SlideRecord& r : m) {
    CHECK(r.path_20x.empty());
    CHECK(fs::exists(dir.path / r.path_10x));
  }
}
