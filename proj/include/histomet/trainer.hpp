#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "histomet/adam.hpp"
#include "histomet/checkpoint.hpp"
#include "histomet/cohort.hpp"
#include "histomet/errors.hpp"
#include "histomet/metrics.hpp"
#include "histomet/model.hpp"
#include "histomet/rng.hpp"

namespace histomet {

struct TrainConfig {
  double learning_rate = 1e-4;
  double lambda_compact = 1e-3;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 42;
  std::size_t fold_count = 5;

  void validate() const {
    if (learning_rate <= 0.0) throw ConfigError("train: learning_rate <= 0");
    if (patience > max_epochs)
      throw ConfigError("train: patience exceeds max_epochs");
    if (fold_count < 2) throw ConfigError("train: fold_count must be >= 2");
  }
};

/// Cross-entropy against the label plus the weighted compactness term.
inline double total_loss(const Vector& logits, std::size_t label,
                         double compactness, double lambda_compact) {
  if (label >= logits.size())
    throw std::invalid_argument("total_loss: label out of range");
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double ce = std::log(sum) + mx - logits[label];
  return ce + lambda_compact * compactness;
}

/// Class index a slide carries for a module: binary screening for A,
/// metastatic site for B.
inline int module_label(ModuleKind module, SlideLabel label) {
  if (module == ModuleKind::A) return is_metastatic(label) ? 1 : 0;
  return site_index(label);
}

inline std::size_t module_class_count(ModuleKind module) {
  return module == ModuleKind::A ? 2 : kSiteCount;
}

/// Slides a module trains and validates on; Module B sees metastatic only.
inline Manifest module_slides(ModuleKind module, const Manifest& slides) {
  if (module == ModuleKind::A) return slides;
  Manifest out;
  for (const SlideRecord& r : slides)
    if (is_metastatic(r.label)) out.push_back(r);
  return out;
}

inline SlideBags bags_for(const BagCache& cache, const SlideRecord& rec) {
  SlideBags bags;
  bags.set(ScaleId::x10, cache.bag(rec.slide_id, ScaleId::x10));
  bags.set(ScaleId::x20, cache.bag(rec.slide_id, ScaleId::x20));
  return bags;
}

/// Forward pass plus attached training loss for one slide.
struct LossGraph {
  ModelGraph graph;
  ad::Var loss;
};

inline LossGraph build_loss(ModelParams& params, const SlideBags& bags,
                            std::size_t label, double lambda_compact,
                            bool with_grad = true) {
  LossGraph lg{build_forward(params, bags, with_grad), ad::Var{}};
  ad::Tape& t = lg.graph.tape;
  ad::Var ce = t.cross_entropy(lg.graph.fused_logits, label);
  if (lambda_compact != 0.0 && params.config.uses_condenser()) {
    lg.loss = t.add(ce, t.scale_by(lg.graph.compactness, lambda_compact));
  } else {
    lg.loss = ce;
  }
  return lg;
}

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_auc = std::numeric_limits<double>::quiet_NaN();
};

struct FitResult {
  ModelParams params;  // parameters from the best-validation epoch
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;  // 1-based; 0 means initialization was returned
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<std::string> warnings;
};

namespace detail {

struct ValMetrics {
  double loss = 0.0;
  double auc = std::numeric_limits<double>::quiet_NaN();
};

inline ValMetrics validate_pass(ModelParams& params, const Manifest& val,
                                const BagCache& cache, ModuleKind module,
                                double lambda_compact) {
  ValMetrics out;
  std::vector<double> pos_scores;
  std::vector<int> bin_labels;
  std::vector<std::vector<double>> probs;
  std::vector<int> labels;
  double loss_sum = 0.0;
  for (const SlideRecord& rec : val) {
    const int label = module_label(module, rec.label);
    LossGraph lg = build_loss(params, bags_for(cache, rec), std::size_t(label),
                              lambda_compact, /*with_grad=*/false);
    loss_sum += lg.graph.tape.value(lg.loss).at(0, 0);
    SlideForward f = extract_forward(lg.graph);
    if (module == ModuleKind::A) {
      pos_scores.push_back(f.probs[1]);
      bin_labels.push_back(label);
    } else {
      probs.push_back(f.probs);
      labels.push_back(label);
    }
  }
  out.loss = loss_sum / double(val.size());
  try {
    out.auc = module == ModuleKind::A
                  ? roc_auc(pos_scores, bin_labels)
                  : ovr_macro_auc(probs, labels, module_class_count(module));
  } catch (const std::invalid_argument&) {
    // single-class validation split: AUC undefined, loss still drives stopping
  }
  return out;
}

}  // namespace detail

/// One training run: Adam over shuffled slides, one bag pair per step, early
/// stopping on validation loss. Returns the best-validation parameters.
inline FitResult fit(const Manifest& train_slides, const Manifest& val_slides,
                     const BagCache& cache, ModuleKind module,
                     const ModelConfig& model_config,
                     const TrainConfig& config) {
  config.validate();
  Manifest train = module_slides(module, train_slides);
  Manifest val = module_slides(module, val_slides);
  if (train.empty()) throw ConfigError("fit: empty training split");

  ModelConfig mc = model_config;
  mc.class_count = module_class_count(module);

  FitResult result;
  result.params = init_params(mc, derive_seed(config.seed, "init"));

  // warn once per class missing from the training split
  std::vector<std::size_t> class_seen(mc.class_count, 0);
  for (const SlideRecord& r : train)
    class_seen[module_label(module, r.label)] += 1;
  for (std::size_t c = 0; c < mc.class_count; ++c)
    if (class_seen[c] == 0)
      result.warnings.push_back("module " +
                                std::string(module_name(module)) +
                                ": class " + std::to_string(c) +
                                " absent from training split");

  if (config.max_epochs == 0) return result;

  ModelParams params = result.params;
  std::vector<ParamRef> refs = learnable_params(params);
  std::vector<Matrix*> mats;
  for (const ParamRef& r : refs) mats.push_back(r.mat);
  AdamState adam = AdamState::for_shapes(mats);

  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(config.seed, "train-epoch", epoch));
    shuffle_rng.shuffle(order);

    double train_loss_sum = 0.0;
    for (std::size_t idx : order) {
      const SlideRecord& rec = train[idx];
      const int label = module_label(module, rec.label);
      LossGraph lg = build_loss(params, bags_for(cache, rec),
                                std::size_t(label), config.lambda_compact);
      lg.graph.tape.backward(lg.loss);
      train_loss_sum += lg.graph.tape.value(lg.loss).at(0, 0);
      std::vector<Matrix> grads;
      grads.reserve(lg.graph.params.size());
      for (ad::Var v : lg.graph.params)
        grads.push_back(lg.graph.tape.grad(v));
      adam_step(mats, grads, adam, config.learning_rate);
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = train_loss_sum / double(train.size());
    if (!val.empty()) {
      detail::ValMetrics vm = detail::validate_pass(
          params, val, cache, module, config.lambda_compact);
      entry.val_loss = vm.loss;
      entry.val_auc = vm.auc;
    } else {
      entry.val_loss = entry.train_loss;
    }
    result.log.push_back(entry);

    if (entry.val_loss < result.best_val_loss) {
      result.best_val_loss = entry.val_loss;
      result.best_epoch = epoch;
      result.params = params;
      since_best = 0;
    } else {
      ++since_best;
      if (since_best >= config.patience) break;
    }
  }
  return result;
}

struct GradCheckGroup {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t entries = 0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double worst = 0.0;

  bool pass(double tol = 1e-4) const { return worst <= tol; }
};

/// Central finite differences against the analytic gradients for every
/// learnable group on one slide sample. `break_gradient` perturbs one
/// analytic entry so the harness can prove it detects failures.
inline GradCheckReport grad_check(ModelParams& params, const SlideBags& bags,
                                  std::size_t label, double lambda_compact,
                                  double fd_step = 1e-5,
                                  bool break_gradient = false) {
  GradCheckReport report;
  std::vector<ParamRef> refs = learnable_params(params);

  LossGraph lg = build_loss(params, bags, label, lambda_compact);
  lg.graph.tape.backward(lg.loss);
  std::vector<Matrix> analytic;
  for (ad::Var v : lg.graph.params) analytic.push_back(lg.graph.tape.grad(v));
  if (break_gradient && !analytic.empty() && analytic[0].size() > 0)
    analytic[0][0] += 1e-2;

  auto loss_value = [&]() {
    LossGraph probe = build_loss(params, bags, label, lambda_compact,
                                 /*with_grad=*/false);
    return probe.graph.tape.value(probe.loss).at(0, 0);
  };

  for (std::size_t gi = 0; gi < refs.size(); ++gi) {
    GradCheckGroup group;
    group.name = refs[gi].name;
    Matrix& mat = *refs[gi].mat;
    group.entries = mat.size();
    for (std::size_t k = 0; k < mat.size(); ++k) {
      const double saved = mat[k];
      mat[k] = saved + fd_step;
      const double hi = loss_value();
      mat[k] = saved - fd_step;
      const double lo = loss_value();
      mat[k] = saved;
      const double fd = (hi - lo) / (2.0 * fd_step);
      const double a = analytic[gi][k];
      const double denom = std::max({std::fabs(a), std::fabs(fd), 1e-6});
      group.max_rel_error =
          std::max(group.max_rel_error, std::fabs(a - fd) / denom);
    }
    report.worst = std::max(report.worst, group.max_rel_error);
    report.groups.push_back(group);
  }
  return report;
}

}  // namespace histomet
