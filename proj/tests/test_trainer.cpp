#include "doctest.h"

#include <cmath>

#include "histomet/eval.hpp"
#include "histomet/trainer.hpp"
#include "oracles.hpp"

using namespace histomet;

namespace {

struct ToyCohort {
  Manifest manifest;
  BagCache cache;
};

// in-memory cohort with well-separated class anchors
ToyCohort make_toy(const std::vector<SlideLabel>& labels, std::uint64_t seed,
                   std::size_t dim = 8, double separation = 4.0) {
  ToyCohort toy;
  Rng anchor_rng(derive_seed(seed, "toy-anchors"));
  std::vector<Vector> anchors;
  for (std::size_t c = 0; c < kClassCount; ++c) {
    Vector a(dim);
    double sq = 0.0;
    for (auto& v : a) {
      v = anchor_rng.gaussian();
      sq += v * v;
    }
    for (auto& v : a) v *= separation / std::sqrt(sq);
    anchors.push_back(a);
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    SlideRecord r;
    r.slide_id = "toy" + std::to_string(i);
    r.patient_id = "pt" + std::to_string(i);
    r.label = labels[i];
    r.fold = int(i % 5);
    toy.manifest.push_back(r);

    Rng rng(derive_seed(seed, "toy-slide", i));
    const std::size_t n = 6 + rng.below(5);
    Matrix b10(n, dim), b20(n, dim);
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t j = 0; j < dim; ++j) {
        const double base = p < n / 2 ? anchors[int(labels[i])][j] : 0.0;
        b10.at(p, j) = base + rng.gaussian();
        b20.at(p, j) = base + rng.gaussian();
      }
    toy.cache.insert(r.slide_id, std::move(b10), std::move(b20));
  }
  return toy;
}

ModelConfig toy_model() {
  ModelConfig c;
  c.feature_dim = 8;
  c.prototype_count = 4;
  c.concept_count = 3;
  return c;
}

std::vector<SlideLabel> mixed_labels(std::size_t n) {
  // alternating primary / lymph node plus a sprinkle of other sites
  std::vector<SlideLabel> out;
  for (std::size_t i = 0; i < n; ++i) {
    switch (i % 4) {
      case 0: out.push_back(SlideLabel::Primary); break;
      case 1: out.push_back(SlideLabel::LymphNode); break;
      case 2: out.push_back(SlideLabel::Primary); break;
      default:
        out.push_back(i % 8 == 3 ? SlideLabel::Brain
                                 : SlideLabel::SoftTissue);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("total_loss composition") {
  // zero weight keeps the task loss only
  const Vector logits = {0.2, 0.2};
  CHECK(total_loss(logits, 0, 5.0, 0.0) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // two-class uniform logits cost ln 2 plus the weighted compactness
  CHECK(total_loss(logits, 1, 2.0, 0.001) ==
        doctest::Approx(std::log(2.0) + 0.002).epsilon(1e-12));

  // near-certain correct class drives loss to the compactness floor
  const Vector confident = {30.0, -30.0};
  CHECK(total_loss(confident, 0, 1.5, 0.001) ==
        doctest::Approx(0.0015).epsilon(1e-6));

  CHECK_THROWS_AS(total_loss(logits, 5, 0.0, 0.0), std::invalid_argument);
}

TEST_CASE("loss graph value equals the plain total_loss") {
  ToyCohort toy = make_toy(mixed_labels(4), 801);
  ModelParams params = init_params(toy_model(), 5);
  for (const SlideRecord& rec : toy.manifest) {
    const std::size_t label = std::size_t(module_label(ModuleKind::A, rec.label));
    LossGraph lg =
        build_loss(params, bags_for(toy.cache, rec), label, 0.001);
    SlideForward f = extract_forward(lg.graph);
    CHECK(lg.graph.tape.value(lg.loss).at(0, 0) ==
          total_loss(f.fused_logits, label, f.compactness_total, 0.001));
    // lambda zero: exactly the cross-entropy
    LossGraph lg0 =
        build_loss(params, bags_for(toy.cache, rec), label, 0.0);
    CHECK(lg0.graph.tape.value(lg0.loss).at(0, 0) ==
          total_loss(f.fused_logits, label, 0.0, 0.0));
  }
}

TEST_CASE("fit with zero epochs returns the initialization") {
  ToyCohort toy = make_toy(mixed_labels(8), 802);
  TrainConfig tc;
  tc.max_epochs = 0;
  tc.patience = 0;
  tc.seed = 11;
  FitResult r = fit(toy.manifest, {}, toy.cache, ModuleKind::A, toy_model(),
                    tc);
  CHECK(r.log.empty());
  CHECK(r.best_epoch == 0);
  ModelConfig mc = toy_model();
  mc.class_count = 2;
  ModelParams fresh = init_params(mc, derive_seed(tc.seed, "init"));
  CHECK(r.params.queries == fresh.queries);
  CHECK(r.params.at(ScaleId::x10).prompts == fresh.at(ScaleId::x10).prompts);
}

TEST_CASE("training loss strictly decreases on a separable toy cohort") {
  ToyCohort toy = make_toy(mixed_labels(24), 803);
  TrainConfig tc;
  tc.learning_rate = 5e-3;
  tc.max_epochs = 5;
  tc.patience = 5;
  tc.seed = 21;
  FitResult r = fit(toy.manifest, {}, toy.cache, ModuleKind::A, toy_model(),
                    tc);
  REQUIRE(r.log.size() == 5);
  for (std::size_t i = 1; i < r.log.size(); ++i)
    CHECK(r.log[i].train_loss < r.log[i - 1].train_loss);
}

TEST_CASE("fit is bit-reproducible under a fixed seed") {
  ToyCohort toy = make_toy(mixed_labels(12), 804);
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.max_epochs = 3;
  tc.patience = 3;
  tc.seed = 31;
  Manifest val = {toy.manifest[0], toy.manifest[1]};
  Manifest train(toy.manifest.begin() + 2, toy.manifest.end());
  FitResult a = fit(train, val, toy.cache, ModuleKind::A, toy_model(), tc);
  FitResult b = fit(train, val, toy.cache, ModuleKind::A, toy_model(), tc);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].train_loss == b.log[i].train_loss);
    CHECK(a.log[i].val_loss == b.log[i].val_loss);
  }
  CHECK(a.params.queries == b.params.queries);
  CHECK(a.params.at(ScaleId::x20).concepts == b.params.at(ScaleId::x20).concepts);
}

TEST_CASE("early stopping returns the best-validation parameters") {
  ToyCohort toy = make_toy(mixed_labels(20), 805);
  Manifest val = {toy.manifest[0], toy.manifest[1], toy.manifest[2],
                  toy.manifest[3]};
  Manifest train(toy.manifest.begin() + 4, toy.manifest.end());
  TrainConfig tc;
  tc.learning_rate = 5e-3;
  tc.max_epochs = 12;
  tc.patience = 3;
  tc.seed = 41;
  FitResult r = fit(train, val, toy.cache, ModuleKind::A, toy_model(), tc);
  REQUIRE_FALSE(r.log.empty());
  REQUIRE(r.best_epoch >= 1);
  double best = std::numeric_limits<double>::infinity();
  for (const EpochLog& e : r.log) best = std::min(best, e.val_loss);
  CHECK(r.best_val_loss == best);
  CHECK(r.log[r.best_epoch - 1].val_loss == best);
}

TEST_CASE("module B trains on metastatic slides only") {
  std::vector<SlideLabel> labels;
  for (int i = 0; i < 16; ++i)
    labels.push_back(i % 2 == 0 ? SlideLabel::Primary
                                : SlideLabel(1 + (i / 2) % 4));
  ToyCohort toy = make_toy(labels, 806);
  Manifest met = module_slides(ModuleKind::B, toy.manifest);
  CHECK(met.size() == 8);
  for (const SlideRecord& r : met) CHECK(is_metastatic(r.label));

  TrainConfig tc;
  tc.max_epochs = 1;
  tc.patience = 1;
  tc.seed = 51;
  FitResult r = fit(toy.manifest, {}, toy.cache, ModuleKind::B, toy_model(),
                    tc);
  CHECK(r.params.config.class_count == kSiteCount);
}

TEST_CASE("fit errors and warnings") {
  ToyCohort toy = make_toy({SlideLabel::Primary, SlideLabel::Primary}, 807);
  TrainConfig tc;
  tc.max_epochs = 1;
  tc.patience = 1;

  // module B with no metastatic slides: empty training split
  CHECK_THROWS_AS(
      fit(toy.manifest, {}, toy.cache, ModuleKind::B, toy_model(), tc),
      ConfigError);

  // class 1 absent: warning, training proceeds
  FitResult r = fit(toy.manifest, {}, toy.cache, ModuleKind::A, toy_model(),
                    tc);
  REQUIRE(r.warnings.size() == 1);
  CHECK(r.warnings[0].find("class 1") != std::string::npos);
  CHECK(r.log.size() == 1);

  TrainConfig bad;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  TrainConfig bad2;
  bad2.patience = 200;
  bad2.max_epochs = 100;
  CHECK_THROWS_AS(bad2.validate(), ConfigError);
}

TEST_CASE("grad_check passes on the full model and flags broken gradients") {
  ToyCohort toy = make_toy(mixed_labels(2), 808);
  ModelConfig mc = toy_model();
  mc.class_count = 4;
  ModelParams params = init_params(mc, 61);
  SlideBags bags = bags_for(toy.cache, toy.manifest[0]);

  GradCheckReport report = grad_check(params, bags, 2, 0.5);
  CHECK(report.groups.size() == learnable_params(params).size());
  CHECK(report.pass(1e-4));
  for (const GradCheckGroup& g : report.groups) {
    CAPTURE(g.name);
    CHECK(g.max_rel_error <= 1e-4);
    CHECK(g.entries > 0);
  }

  // deterministic
  GradCheckReport again = grad_check(params, bags, 2, 0.5);
  CHECK(report.worst == again.worst);

  // the harness detects an injected gradient error
  GradCheckReport broken = grad_check(params, bags, 2, 0.5, 1e-5, true);
  CHECK_FALSE(broken.pass(1e-4));
}

TEST_CASE("grad_check covers ablation variants") {
  ToyCohort toy = make_toy(mixed_labels(2), 809);
  SlideBags bags = bags_for(toy.cache, toy.manifest[0]);

  for (int variant = 0; variant < 4; ++variant) {
    ModelConfig mc = toy_model();
    mc.class_count = 2;
    if (variant == 1) mc.no_condensation = true;
    if (variant == 2) mc.no_concept_alignment = true;
    if (variant == 3) mc.no_class_prompts = true;
    ModelParams params = init_params(mc, 71 + variant);
    GradCheckReport report = grad_check(params, bags, 1, 0.5);
    CAPTURE(variant);
    CHECK(report.pass(1e-4));
  }
}

TEST_CASE("fold_split partitions the manifest by the protocol") {
  ToyCohort toy = make_toy(mixed_labels(20), 810);
  FoldSplit s = fold_split(toy.manifest, 2, 5);
  CHECK(s.train.size() + s.val.size() + s.test.size() == 20);
  for (const SlideRecord& r : s.test) CHECK(r.fold == 2);
  for (const SlideRecord& r : s.val) CHECK(r.fold == 3);
  for (const SlideRecord& r : s.train) {
    CHECK(r.fold != 2);
    CHECK(r.fold != 3);
  }
  CHECK_THROWS_AS(fold_split(toy.manifest, 7, 5), ConfigError);
}
