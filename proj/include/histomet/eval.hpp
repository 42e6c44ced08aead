#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "histomet/cohort.hpp"
#include "histomet/decision.hpp"
#include "histomet/errors.hpp"
#include "histomet/metrics.hpp"
#include "histomet/model.hpp"
#include "histomet/trainer.hpp"

namespace histomet {

/// Cross-validation protocol: fold k is the held-out test split, the next
/// fold cyclically is the validation split (threshold selection and early
/// stopping), the rest train.
struct FoldSplit {
  Manifest train, val, test;
};

inline FoldSplit fold_split(const Manifest& manifest, int fold,
                            std::size_t fold_count) {
  if (fold < 0 || std::size_t(fold) >= fold_count)
    throw ConfigError("fold_split: fold index out of range");
  const int val_fold = int((std::size_t(fold) + 1) % fold_count);
  FoldSplit s;
  for (const SlideRecord& r : manifest) {
    if (r.fold == fold)
      s.test.push_back(r);
    else if (r.fold == val_fold)
      s.val.push_back(r);
    else
      s.train.push_back(r);
  }
  return s;
}

/// One row of the per-slide decision log.
struct SlideDecision {
  std::string slide_id;
  SlideLabel true_label = SlideLabel::Primary;
  double module_a_prob = 0.0;  // probability of metastatic progression
  bool forwarded = false;
  int site_prediction = -1;  // argmax site from Module B; -1 when blocked
  SlideLabel final_prediction = SlideLabel::Primary;
  std::vector<double> composed_probs;  // 5-class product probabilities
};

struct EndToEndReport {
  OperatingPoint op;
  ConfusionFlow flow;
  double five_class_accuracy = 0.0;
  double macro_f1_score = 0.0;
  double module_a_sensitivity = 0.0;
  double module_a_specificity = 0.0;
  double workload_forwarded_fraction = 0.0;
  double workload_filtered_fraction = 0.0;
  double conditional_site_accuracy_value =
      std::numeric_limits<double>::quiet_NaN();
  std::vector<ClassStats> per_class;   // indexed by SlideLabel
  std::vector<double> per_class_auc;   // -1 for absent classes
  double ovr_macro_auc_value = std::numeric_limits<double>::quiet_NaN();
  std::vector<CalibrationBin> calibration;
  std::vector<SlideDecision> decisions;
};

namespace detail {

inline void run_parallel(std::size_t n, std::size_t threads,
                         const std::function<void(std::size_t)>& work) {
  threads = std::max<std::size_t>(1, threads);
  if (threads == 1 || n < 2 * threads) {
    for (std::size_t i = 0; i < n; ++i) work(i);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t lo = t * chunk, hi = std::min(n, lo + chunk);
    if (lo < hi)
      pool.emplace_back([lo, hi, &work] {
        for (std::size_t i = lo; i < hi; ++i) work(i);
      });
  }
  for (auto& th : pool) th.join();
}

}  // namespace detail

/// Module A probabilities over a slide list; used for threshold selection.
inline std::vector<double> score_module_a(ModelParams& module_a,
                                          const Manifest& slides,
                                          const BagCache& cache,
                                          std::size_t threads = 1) {
  std::vector<double> scores(slides.size());
  detail::run_parallel(slides.size(), threads, [&](std::size_t i) {
    SlideForward f = forward_slide(module_a, bags_for(cache, slides[i]));
    scores[i] = f.probs[1];
  });
  return scores;
}

/// Assemble a report from per-slide decisions. Also used to replay a parsed
/// decision log, so every scalar is reproducible from the log alone (the
/// OVR AUCs additionally need the composed probabilities).
inline EndToEndReport aggregate_decisions(std::vector<SlideDecision> decisions,
                                          const OperatingPoint& op) {
  EndToEndReport rep;
  rep.op = op;
  rep.decisions = std::move(decisions);

  std::vector<int> final_pred, truth;
  std::vector<double> a_probs;
  std::vector<int> a_labels;
  std::vector<bool> met_forwarded, met_site_correct;
  std::vector<std::vector<double>> composed;
  bool have_composed = !rep.decisions.empty();
  for (const SlideDecision& d : rep.decisions) {
    const bool metastatic = is_metastatic(d.true_label);
    if (d.forwarded)
      (metastatic ? rep.flow.true_positive : rep.flow.false_positive) += 1;
    else
      (metastatic ? rep.flow.false_negative : rep.flow.true_negative) += 1;
    final_pred.push_back(int(d.final_prediction));
    truth.push_back(int(d.true_label));
    a_probs.push_back(d.module_a_prob);
    a_labels.push_back(metastatic ? 1 : 0);
    if (metastatic) {
      met_forwarded.push_back(d.forwarded);
      met_site_correct.push_back(d.forwarded &&
                                 d.final_prediction == d.true_label);
    }
    if (d.composed_probs.size() != kClassCount) have_composed = false;
    composed.push_back(d.composed_probs);
  }
  if (rep.decisions.empty()) throw ConfigError("aggregate: no decisions");

  rep.five_class_accuracy = accuracy(final_pred, truth);
  rep.macro_f1_score = macro_f1(final_pred, truth, kClassCount);
  rep.module_a_sensitivity = flow_sensitivity(rep.flow);
  rep.module_a_specificity = flow_specificity(rep.flow);
  rep.workload_forwarded_fraction = forwarded_fraction(rep.flow);
  rep.workload_filtered_fraction = filtered_fraction(rep.flow);
  if (!met_forwarded.empty())
    rep.conditional_site_accuracy_value =
        conditional_site_accuracy(met_forwarded, met_site_correct);
  rep.per_class = per_class_stats(final_pred, truth, kClassCount);
  if (have_composed) {
    rep.per_class_auc = ovr_class_auc(composed, truth, kClassCount);
    try {
      rep.ovr_macro_auc_value = ovr_macro_auc(composed, truth, kClassCount);
    } catch (const std::invalid_argument&) {
      // single-class test split
    }
  }
  rep.calibration = calibration_bins(a_probs, a_labels, 10);
  return rep;
}

/// Run both modules over the test split, gate with the operating point, and
/// account for every error path: blocked slides become Primary, forwarded
/// slides take Module B's site.
inline EndToEndReport evaluate_e2e(const Manifest& test, const BagCache& cache,
                                   ModelParams& module_a,
                                   ModelParams& module_b,
                                   const OperatingPoint& op,
                                   std::size_t threads = 1) {
  if (test.empty()) throw ConfigError("evaluate_e2e: empty test split");
  std::vector<SlideDecision> decisions(test.size());
  detail::run_parallel(test.size(), threads, [&](std::size_t i) {
    const SlideRecord& rec = test[i];
    SlideBags bags = bags_for(cache, rec);
    SlideForward fa = forward_slide(module_a, bags);
    SlideForward fb = forward_slide(module_b, bags);
    SlideDecision d;
    d.slide_id = rec.slide_id;
    d.true_label = rec.label;
    d.module_a_prob = fa.probs[1];
    d.forwarded = gate(d.module_a_prob, op);
    const int site = int(argmax(fb.probs));
    d.site_prediction = d.forwarded ? site : -1;
    d.final_prediction =
        d.forwarded ? label_from_site(site) : SlideLabel::Primary;
    d.composed_probs.assign(kClassCount, 0.0);
    d.composed_probs[0] = fa.probs[0];
    for (std::size_t s = 0; s < kSiteCount; ++s)
      d.composed_probs[s + 1] = fa.probs[1] * fb.probs[s];
    decisions[i] = std::move(d);
  });
  return aggregate_decisions(std::move(decisions), op);
}

inline nlohmann::json report_to_json(const EndToEndReport& rep) {
  nlohmann::json j;
  j["operating_point"] = {
      {"target_sensitivity", rep.op.target_sensitivity},
      {"threshold", std::isinf(rep.op.threshold) ? 1e308 : rep.op.threshold},
      {"validation_sensitivity", rep.op.achieved_validation_sensitivity},
      {"validation_specificity", rep.op.achieved_validation_specificity}};
  j["flow"] = {{"true_negative", rep.flow.true_negative},
               {"false_negative", rep.flow.false_negative},
               {"true_positive", rep.flow.true_positive},
               {"false_positive", rep.flow.false_positive}};
  j["five_class_accuracy"] = rep.five_class_accuracy;
  j["macro_f1"] = rep.macro_f1_score;
  j["module_a_sensitivity"] = rep.module_a_sensitivity;
  j["module_a_specificity"] = rep.module_a_specificity;
  j["workload_forwarded_fraction"] = rep.workload_forwarded_fraction;
  j["workload_filtered_fraction"] = rep.workload_filtered_fraction;
  if (!std::isnan(rep.conditional_site_accuracy_value))
    j["conditional_site_accuracy"] = rep.conditional_site_accuracy_value;
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < rep.per_class.size(); ++c) {
    const ClassStats& s = rep.per_class[c];
    nlohmann::json e{{"label", label_name(SlideLabel(int(c)))},
                     {"support", s.support},
                     {"predicted", s.predicted},
                     {"precision", s.precision},
                     {"recall", s.recall},
                     {"f1", s.f1}};
    if (c < rep.per_class_auc.size() && rep.per_class_auc[c] >= 0.0)
      e["ovr_auc"] = rep.per_class_auc[c];
    classes.push_back(e);
  }
  j["per_class"] = classes;
  if (!std::isnan(rep.ovr_macro_auc_value))
    j["ovr_macro_auc"] = rep.ovr_macro_auc_value;
  nlohmann::json bins = nlohmann::json::array();
  for (const CalibrationBin& b : rep.calibration)
    bins.push_back({{"lower", b.lower},
                    {"upper", b.upper},
                    {"count", b.count},
                    {"mean_confidence", b.mean_confidence},
                    {"empirical_frequency", b.empirical_frequency}});
  j["calibration"] = bins;
  return j;
}

inline std::string format_prob(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline void write_decision_log(const EndToEndReport& rep,
                               const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError(path + ": cannot open for writing");
  f << "slide_id,true_label,module_a_prob,forwarded,site_prediction,"
       "final_5class_prediction\n";
  for (const SlideDecision& d : rep.decisions) {
    f << d.slide_id << ',' << label_name(d.true_label) << ','
      << format_prob(d.module_a_prob) << ',' << (d.forwarded ? 1 : 0) << ',';
    if (d.site_prediction >= 0)
      f << label_name(label_from_site(d.site_prediction));
    f << ',' << label_name(d.final_prediction) << "\n";
  }
  if (!f) throw IoError(path + ": write failed");
}

/// Parse a decision log back into decisions (composed probabilities are not
/// in the log, so replayed reports omit the OVR AUCs).
inline std::vector<SlideDecision> read_decision_log(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError(path + ": cannot open decision log");
  std::vector<SlideDecision> out;
  std::string line;
  if (!std::getline(f, line)) throw IoError(path + ": empty decision log");
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    while (fields.size() < 6) fields.push_back("");
    SlideDecision d;
    d.slide_id = fields[0];
    d.true_label = parse_label(fields[1]);
    d.module_a_prob = std::stod(fields[2]);
    d.forwarded = fields[3] == "1";
    d.site_prediction =
        fields[4].empty() ? -1 : site_index(parse_label(fields[4]));
    d.final_prediction = parse_label(fields[5]);
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace histomet
