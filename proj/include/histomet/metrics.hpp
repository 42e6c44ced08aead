#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace histomet {

/// Module A gating counts over a test cohort. "Positive" means metastatic,
/// "forwarded" means passed to Module B.
struct ConfusionFlow {
  std::int64_t true_negative = 0;   // primary, blocked
  std::int64_t false_negative = 0;  // metastatic, blocked
  std::int64_t true_positive = 0;   // metastatic, forwarded
  std::int64_t false_positive = 0;  // primary, forwarded

  std::int64_t total() const {
    return true_negative + false_negative + true_positive + false_positive;
  }
};

inline double flow_sensitivity(const ConfusionFlow& f) {
  const std::int64_t pos = f.true_positive + f.false_negative;
  return pos == 0 ? 0.0 : double(f.true_positive) / double(pos);
}

inline double flow_specificity(const ConfusionFlow& f) {
  const std::int64_t neg = f.true_negative + f.false_positive;
  return neg == 0 ? 0.0 : double(f.true_negative) / double(neg);
}

inline double forwarded_fraction(const ConfusionFlow& f) {
  return f.total() == 0
             ? 0.0
             : double(f.true_positive + f.false_positive) / double(f.total());
}

inline double filtered_fraction(const ConfusionFlow& f) {
  return f.total() == 0
             ? 0.0
             : double(f.true_negative + f.false_negative) / double(f.total());
}

/// ROC AUC as the Mann-Whitney statistic, computed from midranks; ties
/// contribute one half per pair.
inline double roc_auc(const std::vector<double>& scores,
                      const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("roc_auc: size mismatch");
  std::size_t pos = 0, neg = 0;
  for (int l : labels) (l == 1 ? pos : neg) += 1;
  if (pos == 0 || neg == 0)
    throw std::invalid_argument("roc_auc: both classes must be present");

  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&scores](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  // rank sum of positives with midranks for ties
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double midrank = 0.5 * (double(i + 1) + double(j + 1));
    for (std::size_t t = i; t <= j; ++t)
      if (labels[idx[t]] == 1) pos_rank_sum += midrank;
    i = j + 1;
  }
  const double u = pos_rank_sum - double(pos) * double(pos + 1) / 2.0;
  return u / (double(pos) * double(neg));
}

struct ClassStats {
  std::int64_t support = 0;    // true members
  std::int64_t predicted = 0;  // predicted members
  std::int64_t tp = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline std::vector<ClassStats> per_class_stats(
    const std::vector<int>& predictions, const std::vector<int>& labels,
    std::size_t class_count) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("per_class_stats: size mismatch");
  std::vector<ClassStats> stats(class_count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || std::size_t(labels[i]) >= class_count ||
        predictions[i] < 0 || std::size_t(predictions[i]) >= class_count)
      throw std::invalid_argument("per_class_stats: label out of range");
    stats[labels[i]].support += 1;
    stats[predictions[i]].predicted += 1;
    if (labels[i] == predictions[i]) stats[labels[i]].tp += 1;
  }
  for (ClassStats& s : stats) {
    s.precision = s.predicted == 0 ? 0.0 : double(s.tp) / double(s.predicted);
    s.recall = s.support == 0 ? 0.0 : double(s.tp) / double(s.support);
    s.f1 = (s.precision + s.recall) == 0.0
               ? 0.0
               : 2.0 * s.precision * s.recall / (s.precision + s.recall);
  }
  return stats;
}

/// Macro F1. A class with zero true positives but nonzero support or
/// predictions contributes 0; classes absent from both truth and prediction
/// are excluded from the mean.
inline double macro_f1(const std::vector<int>& predictions,
                       const std::vector<int>& labels,
                       std::size_t class_count) {
  if (labels.empty()) throw std::invalid_argument("macro_f1: empty input");
  std::vector<ClassStats> stats = per_class_stats(predictions, labels,
                                                  class_count);
  double sum = 0.0;
  std::size_t included = 0;
  for (const ClassStats& s : stats) {
    if (s.support == 0 && s.predicted == 0) continue;
    sum += s.f1;
    ++included;
  }
  return included == 0 ? 0.0 : sum / double(included);
}

inline double accuracy(const std::vector<int>& predictions,
                       const std::vector<int>& labels) {
  if (labels.empty()) throw std::invalid_argument("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (predictions[i] == labels[i]) ++hits;
  return double(hits) / double(labels.size());
}

/// Mean one-vs-rest AUC over classes present in the labels.
inline double ovr_macro_auc(const std::vector<std::vector<double>>& probs,
                            const std::vector<int>& labels,
                            std::size_t class_count) {
  if (probs.size() != labels.size())
    throw std::invalid_argument("ovr_macro_auc: size mismatch");
  std::vector<std::int64_t> counts(class_count, 0);
  for (int l : labels) counts[l] += 1;
  std::size_t present = 0;
  for (auto c : counts) present += c > 0;
  if (present < 2)
    throw std::invalid_argument("ovr_macro_auc: need at least two classes");

  double sum = 0.0;
  std::size_t included = 0;
  for (std::size_t c = 0; c < class_count; ++c) {
    if (counts[c] == 0) continue;
    std::vector<double> scores(labels.size());
    std::vector<int> binary(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores[i] = probs[i][c];
      binary[i] = labels[i] == int(c) ? 1 : 0;
    }
    sum += roc_auc(scores, binary);
    ++included;
  }
  return sum / double(included);
}

/// Per-class one-vs-rest AUC; classes absent from the labels get -1.
inline std::vector<double> ovr_class_auc(
    const std::vector<std::vector<double>>& probs,
    const std::vector<int>& labels, std::size_t class_count) {
  std::vector<std::int64_t> counts(class_count, 0);
  for (int l : labels) counts[l] += 1;
  std::vector<double> out(class_count, -1.0);
  for (std::size_t c = 0; c < class_count; ++c) {
    if (counts[c] == 0 || std::size_t(counts[c]) == labels.size()) continue;
    std::vector<double> scores(labels.size());
    std::vector<int> binary(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores[i] = probs[i][c];
      binary[i] = labels[i] == int(c) ? 1 : 0;
    }
    out[c] = roc_auc(scores, binary);
  }
  return out;
}

struct CalibrationBin {
  double lower = 0.0;
  double upper = 0.0;
  std::int64_t count = 0;
  double mean_confidence = 0.0;
  double empirical_frequency = 0.0;
};

/// Equal-width reliability bins for binary probabilities; the last bin is
/// closed at 1.
inline std::vector<CalibrationBin> calibration_bins(
    const std::vector<double>& probs, const std::vector<int>& labels,
    std::size_t bin_count = 10) {
  std::vector<CalibrationBin> bins(bin_count);
  for (std::size_t b = 0; b < bin_count; ++b) {
    bins[b].lower = double(b) / double(bin_count);
    bins[b].upper = double(b + 1) / double(bin_count);
  }
  for (std::size_t i = 0; i < probs.size(); ++i) {
    std::size_t b = std::min(std::size_t(probs[i] * double(bin_count)),
                             bin_count - 1);
    bins[b].count += 1;
    bins[b].mean_confidence += probs[i];
    bins[b].empirical_frequency += labels[i] == 1 ? 1.0 : 0.0;
  }
  for (CalibrationBin& b : bins) {
    if (b.count > 0) {
      b.mean_confidence /= double(b.count);
      b.empirical_frequency /= double(b.count);
    }
  }
  return bins;
}

}  // namespace histomet
