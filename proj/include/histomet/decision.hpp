#pragma once

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <vector>

#include "histomet/metrics.hpp"

namespace histomet {

/// A frozen screening gate: the threshold chosen on validation data for a
/// target sensitivity, applied unchanged to test data.
struct OperatingPoint {
  double target_sensitivity = 0.95;
  double threshold = std::numeric_limits<double>::infinity();
  double achieved_validation_sensitivity = 0.0;
  double achieved_validation_specificity = 0.0;
};

/// Pick the largest candidate threshold (observed scores plus +inf, gate
/// forwards when score >= threshold) whose validation sensitivity meets the
/// target; that choice maximizes specificity.
inline OperatingPoint select_threshold(const std::vector<double>& val_scores,
                                       const std::vector<int>& val_labels,
                                       double target) {
  if (val_scores.size() != val_labels.size())
    throw std::invalid_argument("select_threshold: size mismatch");
  std::size_t pos = 0, neg = 0;
  for (int l : val_labels) (l == 1 ? pos : neg) += 1;
  if (pos == 0)
    throw std::invalid_argument("select_threshold: no positives in validation");

  std::vector<double> candidates = val_scores;
  candidates.push_back(std::numeric_limits<double>::infinity());
  std::sort(candidates.begin(), candidates.end(),
            [](double a, double b) { return a > b; });
  candidates.erase(std::unique(candidates.begin(), candidates.end()),
                   candidates.end());

  auto rates_at = [&](double t) {
    std::size_t tp = 0, tn = 0;
    for (std::size_t i = 0; i < val_scores.size(); ++i) {
      const bool fwd = val_scores[i] >= t;
      if (val_labels[i] == 1 && fwd) ++tp;
      if (val_labels[i] == 0 && !fwd) ++tn;
    }
    const double sens = double(tp) / double(pos);
    const double spec = neg == 0 ? 1.0 : double(tn) / double(neg);
    return std::pair<double, double>(sens, spec);
  };

  for (double t : candidates) {  // descending, so the first hit is largest
    auto [sens, spec] = rates_at(t);
    if (sens >= target) {
      OperatingPoint op;
      op.target_sensitivity = target;
      op.threshold = t;
      op.achieved_validation_sensitivity = sens;
      op.achieved_validation_specificity = spec;
      return op;
    }
  }
  // target above 1: fall back to the most permissive candidate
  OperatingPoint op;
  op.target_sensitivity = target;
  op.threshold = candidates.back();
  auto [sens, spec] = rates_at(op.threshold);
  op.achieved_validation_sensitivity = sens;
  op.achieved_validation_specificity = spec;
  return op;
}

inline bool gate(double prob_metastatic, const OperatingPoint& op) {
  return prob_metastatic >= op.threshold;
}

/// Fraction of truly metastatic slides both forwarded and site-correct;
/// blocked metastatic slides count as wrong.
inline double conditional_site_accuracy(const std::vector<bool>& forwarded,
                                        const std::vector<bool>& site_correct) {
  if (forwarded.size() != site_correct.size())
    throw std::invalid_argument("conditional_site_accuracy: size mismatch");
  if (forwarded.empty())
    throw std::invalid_argument(
        "conditional_site_accuracy: no metastatic slides");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < forwarded.size(); ++i)
    if (forwarded[i] && site_correct[i]) ++hits;
  return double(hits) / double(forwarded.size());
}

}  // namespace histomet
