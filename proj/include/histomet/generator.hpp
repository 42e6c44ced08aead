#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "histomet/bag_io.hpp"
#include "histomet/cohort.hpp"
#include "histomet/errors.hpp"
#include "histomet/folds.hpp"
#include "histomet/matrix.hpp"
#include "histomet/rng.hpp"

namespace histomet {

/// Synthetic cohort settings. Every class owns a seeded anchor direction;
/// metastatic classes share an extra metastasis-signature direction, which
/// lets the binary screener learn independently of the site anchors. Default
/// class counts are a 5% scale-down of a realistic imbalanced cohort.
struct GeneratorConfig {
  std::uint64_t seed = 42;
  std::size_t feature_dim = 512;
  std::size_t bag_min = 64;
  std::size_t bag_max = 256;
  // order: Primary, Brain, LymphNode, Liver, SoftTissue
  std::array<std::size_t, kClassCount> class_counts = {193, 13, 106, 10, 21};
  double signal_fraction = 0.2;
  double noise_std = 1.0;
  double anchor_separation = 3.0;
  double cross_scale_correlation = 0.7;
  double multi_slide_patient_fraction = 0.0;
  std::size_t fold_count = 5;
  bool single_scale = false;  // emit 10x bags only
  double clamp = 1e4;

  std::size_t total_slides() const {
    std::size_t n = 0;
    for (std::size_t c : class_counts) n += c;
    return n;
  }

  void validate() const {
    if (feature_dim == 0) throw ConfigError("generator: feature_dim is zero");
    if (bag_min == 0 || bag_max < bag_min)
      throw ConfigError("generator: bad bag size range");
    if (signal_fraction <= 0.0 || signal_fraction > 1.0)
      throw ConfigError("generator: signal_fraction must be in (0, 1]");
    if (cross_scale_correlation < 0.0 || cross_scale_correlation > 1.0)
      throw ConfigError("generator: cross_scale_correlation must be in [0, 1]");
    if (multi_slide_patient_fraction < 0.0 ||
        multi_slide_patient_fraction > 1.0)
      throw ConfigError("generator: multi_slide_patient_fraction in [0, 1]");
    if (fold_count < 2) throw ConfigError("generator: fold_count must be >= 2");
  }
};

namespace detail {

struct ClassAnchors {
  std::vector<Vector> anchor;  // per class
  Vector signature;            // shared metastasis direction
};

inline Vector unit_direction(Rng& rng, std::size_t dim, double length) {
  Vector v(dim);
  double sq = 0.0;
  for (auto& x : v) {
    x = rng.gaussian();
    sq += x * x;
  }
  const double inv = length / std::max(std::sqrt(sq), 1e-12);
  for (auto& x : v) x *= inv;
  return v;
}

inline ClassAnchors make_anchors(const GeneratorConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, "anchors"));
  ClassAnchors a;
  for (std::size_t c = 0; c < kClassCount; ++c)
    a.anchor.push_back(
        unit_direction(rng, cfg.feature_dim, cfg.anchor_separation));
  a.signature = unit_direction(rng, cfg.feature_dim, cfg.anchor_separation);
  return a;
}

struct SlideBagsData {
  FeatureBag bag10, bag20;
};

/// Both-scale bags for one slide; a pure function of (config, slide index).
inline SlideBagsData synth_slide(const GeneratorConfig& cfg,
                                 const ClassAnchors& anchors,
                                 SlideLabel label, std::size_t slide_index) {
  Rng rng(derive_seed(cfg.seed, "slide", slide_index));
  const std::size_t dim = cfg.feature_dim;
  const std::size_t n =
      cfg.bag_min + rng.below(cfg.bag_max - cfg.bag_min + 1);
  const std::size_t n_signal = std::max<std::size_t>(
      1, std::size_t(std::llround(cfg.signal_fraction * double(n))));

  Vector mean(dim, 0.0);
  for (std::size_t j = 0; j < dim; ++j) mean[j] = anchors.anchor[int(label)][j];
  if (is_metastatic(label))
    for (std::size_t j = 0; j < dim; ++j) mean[j] += anchors.signature[j];

  const double rho = cfg.cross_scale_correlation;
  const double fresh = std::sqrt(std::max(0.0, 1.0 - rho * rho));

  SlideBagsData out;
  out.bag10.magnification = ScaleId::x10;
  out.bag10.features = Matrix(n, dim);
  out.bag20.magnification = ScaleId::x20;
  out.bag20.features = Matrix(n, dim);
  const std::size_t grid_w = std::max<std::size_t>(
      1, std::size_t(std::ceil(std::sqrt(double(n)))));
  for (std::size_t i = 0; i < n; ++i) {
    const bool has_signal = i < n_signal;
    for (std::size_t j = 0; j < dim; ++j) {
      const double eps10 = rng.gaussian();
      const double eps20 = rho * eps10 + fresh * rng.gaussian();
      const double base = has_signal ? mean[j] : 0.0;
      out.bag10.features.at(i, j) = std::clamp(
          base + cfg.noise_std * eps10, -cfg.clamp, cfg.clamp);
      out.bag20.features.at(i, j) = std::clamp(
          base + cfg.noise_std * eps20, -cfg.clamp, cfg.clamp);
    }
    const std::int32_t px = std::int32_t(i % grid_w) * 256;
    const std::int32_t py = std::int32_t(i / grid_w) * 256;
    out.bag10.coords.push_back({px, py});
    out.bag20.coords.push_back({px * 2, py * 2});
  }
  return out;
}

}  // namespace detail

/// Plan of the cohort before any file is written: one record per slide with
/// labels, patients and fold assignments resolved.
inline Manifest plan_cohort(const GeneratorConfig& cfg) {
  cfg.validate();
  Manifest manifest;
  std::size_t index = 0;
  for (std::size_t c = 0; c < kClassCount; ++c) {
    for (std::size_t i = 0; i < cfg.class_counts[c]; ++i) {
      SlideRecord r;
      char buf[32];
      std::snprintf(buf, sizeof buf, "slide_%04zu", index);
      r.slide_id = buf;
      std::snprintf(buf, sizeof buf, "patient_%04zu", index);
      r.patient_id = buf;
      r.label = SlideLabel(int(c));
      r.path_10x = "bags/" + r.slide_id + "_10x.hmfb";
      r.path_20x = cfg.single_scale ? std::string()
                                    : "bags/" + r.slide_id + "_20x.hmfb";
      manifest.push_back(std::move(r));
      ++index;
    }
  }

  // optionally merge consecutive same-class slides into two-slide patients
  if (cfg.multi_slide_patient_fraction > 0.0) {
    std::size_t start = 0;
    for (std::size_t c = 0; c < kClassCount; ++c) {
      const std::size_t count = cfg.class_counts[c];
      const std::size_t pairs = std::size_t(
          cfg.multi_slide_patient_fraction * double(count) / 2.0);
      for (std::size_t p = 0; p < pairs; ++p)
        manifest[start + 2 * p + 1].patient_id =
            manifest[start + 2 * p].patient_id;
      start += count;
    }
  }

  // patient-level folds; tiny cohorts fall back to round-robin by slide
  std::vector<PatientLabel> patients;
  for (const SlideRecord& r : manifest)
    patients.push_back({r.patient_id, int(r.label)});
  std::map<std::string, int> unique;
  for (const auto& p : patients) unique.emplace(p.patient_id, p.label);
  if (unique.size() >= cfg.fold_count) {
    FoldAssignment folds = make_folds(patients, cfg.fold_count, cfg.seed);
    for (SlideRecord& r : manifest) r.fold = folds.at(r.patient_id);
  } else {
    for (std::size_t i = 0; i < manifest.size(); ++i)
      manifest[i].fold = int(i % cfg.fold_count);
  }
  return manifest;
}

/// Generate bags plus manifest under out_dir. Per-slide content depends only
/// on (seed, slide index), so any thread count yields identical bytes.
inline Manifest generate_cohort(const GeneratorConfig& cfg,
                                const std::string& out_dir,
                                std::size_t threads = 1) {
  Manifest manifest = plan_cohort(cfg);
  namespace fs = std::filesystem;
  const fs::path root(out_dir);
  if (!fs::exists(root))
    throw IoError(out_dir + ": output directory does not exist");
  if (!manifest.empty()) fs::create_directories(root / "bags");

  const detail::ClassAnchors anchors = detail::make_anchors(cfg);
  auto emit_range = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const SlideRecord& r = manifest[i];
      detail::SlideBagsData bags =
          detail::synth_slide(cfg, anchors, r.label, i);
      write_bag(bags.bag10, (root / r.path_10x).string());
      if (!r.path_20x.empty())
        write_bag(bags.bag20, (root / r.path_20x).string());
    }
  };

  threads = std::max<std::size_t>(1, threads);
  if (threads == 1 || manifest.size() < 2 * threads) {
    emit_range(0, manifest.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (manifest.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t lo = t * chunk;
      const std::size_t hi = std::min(manifest.size(), lo + chunk);
      if (lo < hi) pool.emplace_back(emit_range, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  write_manifest(manifest, (root / "manifest.jsonl").string());
  return manifest;
}

}  // namespace histomet
