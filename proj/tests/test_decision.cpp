#include "doctest.h"

#include <cmath>
#include <limits>

#include "histomet/decision.hpp"
#include "histomet/rng.hpp"

using namespace histomet;

namespace {

// sweep every candidate and keep the best qualifying specificity
struct SweepResult {
  bool found = false;
  double best_spec = -1.0;
  double best_threshold = 0.0;
};

SweepResult sweep_oracle(const std::vector<double>& scores,
                         const std::vector<int>& labels, double target) {
  std::vector<double> cands = scores;
  cands.push_back(std::numeric_limits<double>::infinity());
  std::size_t pos = 0, neg = 0;
  for (int l : labels) (l == 1 ? pos : neg) += 1;
  SweepResult r;
  for (double t : cands) {
    std::size_t tp = 0, tn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (labels[i] == 1 && scores[i] >= t) ++tp;
      if (labels[i] == 0 && scores[i] < t) ++tn;
    }
    const double sens = double(tp) / double(pos);
    const double spec = neg == 0 ? 1.0 : double(tn) / double(neg);
    if (sens >= target) {
      r.found = true;
      if (spec > r.best_spec ||
          (spec == r.best_spec && t > r.best_threshold)) {
        r.best_spec = spec;
        r.best_threshold = t;
      }
    }
  }
  return r;
}

}  // namespace

TEST_CASE("select_threshold spec example") {
  std::vector<double> scores = {0.9, 0.8, 0.4, 0.7, 0.3, 0.2};
  std::vector<int> labels = {1, 1, 1, 0, 0, 0};
  OperatingPoint op = select_threshold(scores, labels, 0.95);
  CHECK(op.threshold == 0.4);
  CHECK(op.achieved_validation_sensitivity == 1.0);
  CHECK(op.achieved_validation_specificity == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("select_threshold degenerate targets") {
  std::vector<double> scores = {0.9, 0.1};
  std::vector<int> labels = {1, 0};

  OperatingPoint zero = select_threshold(scores, labels, 0.0);
  CHECK(std::isinf(zero.threshold));
  CHECK(zero.achieved_validation_sensitivity == 0.0);
  CHECK(zero.achieved_validation_specificity == 1.0);

  // perfectly separated scores, target one: threshold at the minimum positive
  std::vector<double> sep = {0.9, 0.8, 0.3, 0.2};
  std::vector<int> sep_l = {1, 1, 0, 0};
  OperatingPoint one = select_threshold(sep, sep_l, 1.0);
  CHECK(one.threshold == 0.8);
  CHECK(one.achieved_validation_specificity == 1.0);

  CHECK_THROWS_AS(select_threshold({0.5}, {0}, 0.9), std::invalid_argument);
}

TEST_CASE("select_threshold is optimal and monotone on random score sets") {
  Rng rng(501);
  const double targets[] = {0.95, 0.90, 0.80, 0.70};
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 6 + rng.below(40);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool pos = false, neg = false;
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = std::round(rng.uniform() * 20.0) / 20.0;  // force ties
      labels[i] = int(rng.below(2));
      (labels[i] == 1 ? pos : neg) = true;
    }
    if (!pos) labels[0] = 1;

    double prev_threshold = -std::numeric_limits<double>::infinity();
    for (double target : {0.70, 0.80, 0.90, 0.95}) {
      (void)targets;
      OperatingPoint op = select_threshold(scores, labels, target);
      SweepResult best = sweep_oracle(scores, labels, target);
      REQUIRE(best.found);
      CHECK(op.achieved_validation_sensitivity >= target);
      CHECK(op.achieved_validation_specificity == best.best_spec);
      CHECK(op.threshold == best.best_threshold);
      // raising the target can only lower the threshold
      if (prev_threshold != -std::numeric_limits<double>::infinity())
        CHECK(op.threshold <= prev_threshold);
      prev_threshold = op.threshold;
    }
  }
}

TEST_CASE("gate comparisons") {
  OperatingPoint op;
  op.threshold = 0.5;
  CHECK(gate(0.5, op));   // boundary inclusive
  CHECK(gate(0.7, op));
  CHECK_FALSE(gate(0.49, op));

  op.threshold = std::numeric_limits<double>::infinity();
  CHECK_FALSE(gate(1.0, op));  // closed gate

  op.threshold = 0.0;
  CHECK(gate(0.0, op));  // open gate
}

TEST_CASE("conditional_site_accuracy") {
  // all metastatic blocked
  CHECK(conditional_site_accuracy({false, false}, {true, true}) == 0.0);
  // none blocked, all correct
  CHECK(conditional_site_accuracy({true, true}, {true, true}) == 1.0);
  // one blocked, two correct, one wrong
  CHECK(conditional_site_accuracy({false, true, true, true},
                                  {true, true, true, false}) == 0.5);
  CHECK_THROWS_AS(conditional_site_accuracy({}, {}), std::invalid_argument);
}
