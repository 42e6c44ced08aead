#pragma once

#include <optional>
#include <stdexcept>

#include "histomet/autodiff.hpp"
#include "histomet/condenser.hpp"
#include "histomet/matrix.hpp"

namespace histomet {

struct ConceptBank {
  Matrix concepts;  // M x L, learnable
};

struct ClassPromptBank {
  Matrix prompts;  // C x L, learnable, one row per class
  double temperature = 10.0;
};

struct AlignOutput {
  Matrix concept_tokens;  // M x L
  Matrix alpha;           // P x M, each column sums to 1 over prototypes
};

/// Soft-assign prototype tokens to concepts: cosine similarities, softmax
/// over the prototype axis per concept, then concept-weighted aggregation.
inline AlignOutput align_concepts(const Matrix& tokens,
                                  const Matrix& concepts) {
  if (tokens.rows() == 0 || concepts.rows() == 0)
    throw std::invalid_argument("align_concepts: empty tokens or concepts");
  if (tokens.cols() != concepts.cols())
    throw std::invalid_argument("align_concepts: feature dim mismatch");
  Matrix sim = matmul(l2_normalize_rows(tokens, kNormEps),
                      transpose(l2_normalize_rows(concepts, kNormEps)));
  Matrix alpha = transpose(row_softmax(transpose(sim)));
  Matrix concept_tokens = matmul(transpose(alpha), tokens);
  return AlignOutput{std::move(concept_tokens), std::move(alpha)};
}

/// Mean pool concept tokens into the slide embedding.
inline Vector pool_concepts(const Matrix& concept_tokens) {
  if (concept_tokens.rows() == 0)
    throw std::invalid_argument("pool_concepts: no concept tokens");
  Vector z(concept_tokens.cols(), 0.0);
  for (std::size_t m = 0; m < concept_tokens.rows(); ++m)
    for (std::size_t j = 0; j < concept_tokens.cols(); ++j)
      z[j] += concept_tokens.at(m, j);
  const double inv = 1.0 / static_cast<double>(concept_tokens.rows());
  for (double& v : z) v *= inv;
  return z;
}

/// Temperature-scaled cosine similarity against per-class prompts. A
/// zero-norm embedding yields all-zero logits.
inline Vector class_logits(const Vector& z, const Matrix& prompts,
                           double temperature) {
  if (z.size() != prompts.cols())
    throw std::invalid_argument("class_logits: embedding dim mismatch");
  Matrix zn = l2_normalize_rows(Matrix::from_row(z), kNormEps);
  Matrix tn = l2_normalize_rows(prompts, kNormEps);
  Matrix l = scale(matmul(zn, transpose(tn)), temperature);
  return l.row_vector(0);
}

inline Vector class_logits(const Vector& z, const ClassPromptBank& bank) {
  return class_logits(z, bank.prompts, bank.temperature);
}

/// Decision-level fusion: elementwise sum, or the single present scale.
inline Vector fuse_logits(const Vector& low, const std::optional<Vector>& high) {
  if (!high.has_value()) return low;
  if (low.size() != high->size())
    throw std::invalid_argument("fuse_logits: length mismatch");
  Vector out = low;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*high)[i];
  return out;
}

struct AlignVarsOut {
  ad::Var concept_tokens;  // M x L
  ad::Var alpha;           // P x M
};

inline AlignVarsOut align_concepts_graph(ad::Tape& t, ad::Var tokens,
                                         ad::Var concepts) {
  if (t.value(tokens).cols() != t.value(concepts).cols())
    throw std::invalid_argument("align_concepts: feature dim mismatch");
  ad::Var sim = t.matmul(t.l2_normalize_rows(tokens, kNormEps),
                         t.transpose_of(t.l2_normalize_rows(concepts, kNormEps)));
  ad::Var alpha = t.col_softmax(sim);
  ad::Var concept_tokens = t.matmul(t.transpose_of(alpha), tokens);
  return AlignVarsOut{concept_tokens, alpha};
}

inline ad::Var pool_concepts_graph(ad::Tape& t, ad::Var concept_tokens) {
  return t.col_mean(concept_tokens);
}

inline ad::Var class_logits_graph(ad::Tape& t, ad::Var z, ad::Var prompts,
                                  double temperature) {
  ad::Var zn = t.l2_normalize_rows(z, kNormEps);
  ad::Var tn = t.l2_normalize_rows(prompts, kNormEps);
  return t.scale_by(t.matmul(zn, t.transpose_of(tn)), temperature);
}

}  // namespace histomet
