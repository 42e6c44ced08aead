#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "histomet/concept_head.hpp"
#include "histomet/condenser.hpp"
#include "histomet/matrix.hpp"
#include "histomet/rng.hpp"
#include "histomet/scale.hpp"

namespace histomet {

enum class ScaleMode : int { both = 0, only_10x = 1, only_20x = 2 };

enum class Baseline : int { none = 0, mean_pool = 1, max_pool = 2 };

struct ModelConfig {
  std::size_t feature_dim = 512;
  std::size_t prototype_count = 16;
  std::size_t concept_count = 8;
  std::size_t class_count = 2;
  double temperature = 10.0;
  ScaleMode scales = ScaleMode::both;
  bool no_condensation = false;
  bool no_concept_alignment = false;
  bool no_class_prompts = false;
  bool freeze_text_embeddings = false;  // when concepts/prompts come from outside
  Baseline baseline = Baseline::none;
  bool normalize_compactness = true;
  double ln_eps = kLayerNormEps;

  bool uses_condenser() const {
    return baseline == Baseline::none && !no_condensation;
  }
  bool uses_concepts() const {
    return baseline == Baseline::none && !no_concept_alignment;
  }
  bool uses_prompts() const { return !no_class_prompts; }

  std::vector<ScaleId> active_scales() const {
    switch (scales) {
      case ScaleMode::only_10x: return {ScaleId::x10};
      case ScaleMode::only_20x: return {ScaleId::x20};
      default: return {ScaleId::x10, ScaleId::x20};
    }
  }
};

struct ScaleParams {
  CondenserParams cond;
  Matrix concepts;      // M x L
  Matrix prompts;       // C x L
  Matrix cls_w, cls_b;  // L x C and 1 x C, linear head variant
};

/// All learnable state of one module. Query tokens are shared across scales;
/// projections, concepts and class prompts are per scale.
struct ModelParams {
  ModelConfig config;
  Matrix queries;  // P x L
  std::array<ScaleParams, 2> per_scale;

  ScaleParams& at(ScaleId s) { return per_scale[static_cast<int>(s)]; }
  const ScaleParams& at(ScaleId s) const {
    return per_scale[static_cast<int>(s)];
  }
};

/// Externally supplied embedding matrices, standing in for a frozen text
/// encoder. Any entry left empty falls back to the seeded initialization.
struct ExternalEmbeddings {
  std::optional<Matrix> concepts[2];
  std::optional<Matrix> prompts[2];
};

inline Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols,
                              double stddev) {
  Matrix m(rows, cols);
  for (std::size_t k = 0; k < m.size(); ++k) m[k] = rng.gaussian() * stddev;
  return m;
}

inline Matrix uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols,
                             double bound) {
  Matrix m(rows, cols);
  for (std::size_t k = 0; k < m.size(); ++k) m[k] = rng.uniform(-bound, bound);
  return m;
}

inline ModelParams init_params(const ModelConfig& config, std::uint64_t seed,
                               const ExternalEmbeddings* external = nullptr) {
  if (config.feature_dim == 0)
    throw std::invalid_argument("init_params: feature_dim must be positive");
  if (config.class_count < 2)
    throw std::invalid_argument("init_params: need at least two classes");
  const std::size_t l = config.feature_dim;
  const double fan_in = 1.0 / std::sqrt(static_cast<double>(l));
  ModelParams p;
  p.config = config;
  Rng qr(derive_seed(seed, "init/queries"));
  p.queries = gaussian_matrix(qr, config.prototype_count, l, fan_in);
  for (ScaleId s : {ScaleId::x10, ScaleId::x20}) {
    const std::string tag = scale_name(s);
    Rng r(derive_seed(seed, "init/" + tag));
    ScaleParams& sp = p.at(s);
    sp.cond.wq = uniform_matrix(r, l, l, fan_in);
    sp.cond.wk = uniform_matrix(r, l, l, fan_in);
    sp.cond.wv = uniform_matrix(r, l, l, fan_in);
    sp.cond.ln_gain = Matrix(1, l);
    sp.cond.ln_bias = Matrix(1, l);
    for (std::size_t j = 0; j < l; ++j) sp.cond.ln_gain.at(0, j) = 1.0;
    const int si = static_cast<int>(s);
    if (external && external->concepts[si]) {
      sp.concepts = *external->concepts[si];
      if (sp.concepts.rows() != config.concept_count ||
          sp.concepts.cols() != l)
        throw std::invalid_argument("init_params: external concepts shape");
    } else {
      sp.concepts = l2_normalize_rows(
          gaussian_matrix(r, config.concept_count, l, 1.0), kNormEps);
    }
    if (external && external->prompts[si]) {
      sp.prompts = *external->prompts[si];
      if (sp.prompts.rows() != config.class_count || sp.prompts.cols() != l)
        throw std::invalid_argument("init_params: external prompts shape");
    } else {
      sp.prompts = l2_normalize_rows(
          gaussian_matrix(r, config.class_count, l, 1.0), kNormEps);
    }
    sp.cls_w = uniform_matrix(r, l, config.class_count, fan_in);
    sp.cls_b = Matrix(1, config.class_count);
  }
  return p;
}

struct ParamRef {
  std::string name;
  Matrix* mat;
};

/// Learnable parameter groups in a fixed deterministic order; the optimizer,
/// gradient checker and checkpoint writer all iterate this list.
inline std::vector<ParamRef> learnable_params(ModelParams& p) {
  std::vector<ParamRef> out;
  const ModelConfig& c = p.config;
  if (c.uses_condenser()) out.push_back({"queries", &p.queries});
  for (ScaleId s : c.active_scales()) {
    const std::string tag = scale_name(s);
    ScaleParams& sp = p.at(s);
    if (c.uses_condenser()) {
      out.push_back({tag + "/wq", &sp.cond.wq});
      out.push_back({tag + "/wk", &sp.cond.wk});
      out.push_back({tag + "/wv", &sp.cond.wv});
      out.push_back({tag + "/ln_gain", &sp.cond.ln_gain});
      out.push_back({tag + "/ln_bias", &sp.cond.ln_bias});
    }
    if (c.uses_concepts() && !c.freeze_text_embeddings)
      out.push_back({tag + "/concepts", &sp.concepts});
    if (c.uses_prompts()) {
      if (!c.freeze_text_embeddings)
        out.push_back({tag + "/prompts", &sp.prompts});
    } else {
      out.push_back({tag + "/cls_w", &sp.cls_w});
      out.push_back({tag + "/cls_b", &sp.cls_b});
    }
  }
  return out;
}

/// Bags for one slide, keyed by scale; a null entry means the scale is absent.
struct SlideBags {
  const Matrix* bags[2] = {nullptr, nullptr};

  const Matrix* at(ScaleId s) const { return bags[static_cast<int>(s)]; }
  void set(ScaleId s, const Matrix* m) { bags[static_cast<int>(s)] = m; }
};

struct ScaleForward {
  bool present = false;
  Matrix attention;       // P x N (empty when condenser bypassed)
  Matrix tokens;          // P x L prototype tokens (bag itself when bypassed)
  Matrix alpha;           // P x M (empty when concept alignment off)
  Matrix concept_tokens;  // M x L
  Vector embedding;       // z
  Vector logits;
  double compactness = 0.0;
  bool degenerate_embedding = false;
};

struct SlideForward {
  std::array<ScaleForward, 2> per_scale;
  Vector fused_logits;
  Vector probs;
  double compactness_total = 0.0;

  const ScaleForward& at(ScaleId s) const {
    return per_scale[static_cast<int>(s)];
  }
};

/// The per-slide computation graph: parameter leaves, per-scale traces and
/// the fused logits. Loss terms are attached on top by the trainer.
struct ModelGraph {
  ad::Tape tape;
  std::vector<ad::Var> params;  // aligned with learnable_params order
  struct ScaleTrace {
    bool present = false;
    ad::Var attention, tokens, alpha, concept_tokens, embedding, logits;
    ad::Var compactness;
  };
  std::array<ScaleTrace, 2> traces;
  ad::Var fused_logits;
  ad::Var compactness;  // multiscale sum; valid even when identically zero
};

inline ModelGraph build_forward(ModelParams& params, const SlideBags& bags,
                                bool with_grad = true) {
  const ModelConfig& c = params.config;
  ModelGraph g;
  ad::Tape& t = g.tape;

  std::vector<ParamRef> refs = learnable_params(params);
  std::vector<ad::Var> ref_vars;
  ref_vars.reserve(refs.size());
  for (const ParamRef& r : refs)
    ref_vars.push_back(t.leaf(*r.mat, with_grad));
  g.params = ref_vars;
  auto var_of = [&](const std::string& name) -> ad::Var {
    for (std::size_t i = 0; i < refs.size(); ++i)
      if (refs[i].name == name) return ref_vars[i];
    return ad::Var{};
  };

  std::vector<ad::Var> scale_logits;
  std::vector<ad::Var> scale_compact;
  ad::Var queries_var = var_of("queries");

  for (ScaleId s : c.active_scales()) {
    const Matrix* bag = bags.at(s);
    if (!bag) continue;
    if (bag->rows() == 0)
      throw std::invalid_argument("build_forward: empty bag");
    if (bag->cols() != c.feature_dim)
      throw std::invalid_argument(
          "build_forward: bag feature dim " + std::to_string(bag->cols()) +
          " != model feature dim " + std::to_string(c.feature_dim));
    const std::string tag = scale_name(s);
    ScaleParams& sp = params.at(s);
    ModelGraph::ScaleTrace& trace = g.traces[static_cast<int>(s)];
    trace.present = true;
    ad::Var bag_var = t.leaf(*bag, false);

    ad::Var tokens;
    if (c.baseline != Baseline::none) {
      // pooling baselines score the raw bag; no condensation, no concepts
      ad::Var z = c.baseline == Baseline::mean_pool ? t.col_mean(bag_var)
                                                    : t.col_max(bag_var);
      trace.embedding = z;
    } else if (c.no_condensation) {
      tokens = bag_var;
      trace.tokens = tokens;
    } else {
      CondenserVars cv{var_of(tag + "/wq"), var_of(tag + "/wk"),
                       var_of(tag + "/wv"), var_of(tag + "/ln_gain"),
                       var_of(tag + "/ln_bias")};
      CondenseVarsOut out = condense_graph(t, queries_var, cv, bag_var,
                                           c.ln_eps);
      tokens = out.tokens;
      trace.tokens = tokens;
      trace.attention = out.attention;
      trace.compactness = compactness_graph(t, out.attention, out.tokens,
                                            bag_var, c.normalize_compactness);
      scale_compact.push_back(trace.compactness);
    }

    if (c.baseline == Baseline::none) {
      if (c.uses_concepts()) {
        ad::Var concepts = c.freeze_text_embeddings
                               ? t.leaf(sp.concepts, false)
                               : var_of(tag + "/concepts");
        AlignVarsOut al = align_concepts_graph(t, tokens, concepts);
        trace.alpha = al.alpha;
        trace.concept_tokens = al.concept_tokens;
        trace.embedding = pool_concepts_graph(t, al.concept_tokens);
      } else {
        trace.embedding = t.col_mean(tokens);
      }
    }

    if (c.uses_prompts()) {
      ad::Var prompts = c.freeze_text_embeddings ? t.leaf(sp.prompts, false)
                                                 : var_of(tag + "/prompts");
      trace.logits =
          class_logits_graph(t, trace.embedding, prompts, c.temperature);
    } else {
      trace.logits = t.add(t.matmul(trace.embedding, var_of(tag + "/cls_w")),
                           var_of(tag + "/cls_b"));
    }
    scale_logits.push_back(trace.logits);
  }

  if (scale_logits.empty())
    throw std::invalid_argument("build_forward: no scales present");
  g.fused_logits = scale_logits.size() == 1
                       ? scale_logits[0]
                       : t.add(scale_logits[0], scale_logits[1]);
  if (scale_compact.empty()) {
    g.compactness = t.leaf(Matrix(1, 1), false);
  } else if (scale_compact.size() == 1) {
    g.compactness = scale_compact[0];
  } else {
    g.compactness = t.add(scale_compact[0], scale_compact[1]);
  }
  return g;
}

inline SlideForward extract_forward(const ModelGraph& g) {
  SlideForward f;
  for (int si = 0; si < 2; ++si) {
    const ModelGraph::ScaleTrace& trace = g.traces[si];
    ScaleForward& sf = f.per_scale[si];
    if (!trace.present) continue;
    sf.present = true;
    if (trace.attention.valid()) sf.attention = g.tape.value(trace.attention);
    if (trace.tokens.valid()) sf.tokens = g.tape.value(trace.tokens);
    if (trace.alpha.valid()) sf.alpha = g.tape.value(trace.alpha);
    if (trace.concept_tokens.valid())
      sf.concept_tokens = g.tape.value(trace.concept_tokens);
    sf.embedding = g.tape.value(trace.embedding).row_vector(0);
    sf.logits = g.tape.value(trace.logits).row_vector(0);
    if (trace.compactness.valid())
      sf.compactness = g.tape.value(trace.compactness).at(0, 0);
    double sq = 0.0;
    for (double v : sf.embedding) sq += v * v;
    sf.degenerate_embedding = std::sqrt(sq) <= kNormEps;
  }
  f.fused_logits = g.tape.value(g.fused_logits).row_vector(0);
  f.probs = softmax(f.fused_logits);
  f.compactness_total = g.tape.value(g.compactness).at(0, 0);
  return f;
}

/// Run the model on one slide and collect logits, probabilities and all
/// intermediates used for interpretation output.
inline SlideForward forward_slide(ModelParams& params, const SlideBags& bags) {
  ModelGraph g = build_forward(params, bags, /*with_grad=*/false);
  return extract_forward(g);
}

}  // namespace histomet
