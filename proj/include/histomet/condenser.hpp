#pragma once

#include <stdexcept>
#include <vector>

#include "histomet/autodiff.hpp"
#include "histomet/matrix.hpp"

namespace histomet {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kNormEps = 1e-12;

/// Per-scale cross-attention parameters: query/key/value projections and the
/// layer norm applied after the residual update.
struct CondenserParams {
  Matrix wq, wk, wv;        // L x L
  Matrix ln_gain, ln_bias;  // 1 x L
};

/// A full single-scale prototype bank. Inside the model the query tokens are
/// shared across scales while projections stay per scale.
struct PrototypeBank {
  Matrix queries;  // P x L
  CondenserParams params;
};

struct CondenseOutput {
  Matrix tokens;     // P x L, post residual + layer norm
  Matrix attention;  // P x N, rows sum to 1
};

/// Condense a bag of N instance features into P prototype tokens via
/// single-head cross-attention with a residual update of the query tokens.
inline CondenseOutput condense(const Matrix& queries, const CondenserParams& p,
                               const Matrix& bag,
                               double ln_eps = kLayerNormEps) {
  if (bag.rows() == 0) throw std::invalid_argument("condense: empty bag");
  if (bag.cols() != queries.cols())
    throw std::invalid_argument("condense: bag feature dim " +
                                std::to_string(bag.cols()) +
                                " != prototype dim " +
                                std::to_string(queries.cols()));
  const double inv_sqrt_l = 1.0 / std::sqrt(static_cast<double>(bag.cols()));
  Matrix q = matmul(queries, p.wq);
  Matrix k = matmul(bag, p.wk);
  Matrix v = matmul(bag, p.wv);
  Matrix attention = row_softmax(scale(matmul(q, transpose(k)), inv_sqrt_l));
  Matrix pre = matmul(attention, v);
  Matrix tokens = layer_norm(add(pre, queries), p.ln_gain.row_vector(0),
                             p.ln_bias.row_vector(0), ln_eps);
  return CondenseOutput{std::move(tokens), std::move(attention)};
}

inline CondenseOutput condense(const PrototypeBank& bank, const Matrix& bag,
                               double ln_eps = kLayerNormEps) {
  return condense(bank.queries, bank.params, bag, ln_eps);
}

/// Attention-weighted dispersion of instances around their prototype token,
/// averaged over prototypes. With `normalize` on, instance rows and tokens
/// are l2-normalized before measuring distances.
inline double compactness_loss(const Matrix& attention, const Matrix& tokens,
                               const Matrix& bag, bool normalize) {
  if (attention.rows() != tokens.rows() || attention.cols() != bag.rows() ||
      tokens.cols() != bag.cols())
    throw std::invalid_argument("compactness_loss: shape mismatch");
  const Matrix m = normalize ? l2_normalize_rows(bag, kNormEps) : bag;
  const Matrix h = normalize ? l2_normalize_rows(tokens, kNormEps) : tokens;
  double total = 0.0;
  for (std::size_t p = 0; p < attention.rows(); ++p) {
    double vp = 0.0;
    for (std::size_t i = 0; i < attention.cols(); ++i) {
      double sq = 0.0;
      for (std::size_t j = 0; j < m.cols(); ++j) {
        const double d = m.at(i, j) - h.at(p, j);
        sq += d * d;
      }
      vp += attention.at(p, i) * sq;
    }
    total += vp;
  }
  return total / static_cast<double>(attention.rows());
}

/// Sum of independently computed per-scale compactness losses.
inline double multiscale_compactness(const std::vector<double>& losses) {
  if (losses.empty())
    throw std::invalid_argument("multiscale_compactness: no scales");
  double s = 0.0;
  for (double v : losses) s += v;
  return s;
}

struct CondenserVars {
  ad::Var wq, wk, wv, ln_gain, ln_bias;
};

struct CondenseVarsOut {
  ad::Var tokens;
  ad::Var attention;
};

/// Tape version of condense(); forwards through the same kernels so values
/// are bit-identical to the plain path.
inline CondenseVarsOut condense_graph(ad::Tape& t, ad::Var queries,
                                      const CondenserVars& p, ad::Var bag,
                                      double ln_eps = kLayerNormEps) {
  const Matrix& bag_v = t.value(bag);
  if (bag_v.rows() == 0) throw std::invalid_argument("condense: empty bag");
  if (bag_v.cols() != t.value(queries).cols())
    throw std::invalid_argument("condense: bag feature dim mismatch");
  const double inv_sqrt_l =
      1.0 / std::sqrt(static_cast<double>(bag_v.cols()));
  ad::Var q = t.matmul(queries, p.wq);
  ad::Var k = t.matmul(bag, p.wk);
  ad::Var v = t.matmul(bag, p.wv);
  ad::Var attention =
      t.row_softmax(t.scale_by(t.matmul(q, t.transpose_of(k)), inv_sqrt_l));
  ad::Var pre = t.matmul(attention, v);
  ad::Var tokens = t.layer_norm(t.add(pre, queries), p.ln_gain, p.ln_bias,
                                ln_eps);
  return CondenseVarsOut{tokens, attention};
}

/// Tape version of compactness_loss(). Expands the squared distance so the
/// whole term is expressed with differentiable primitives:
///   v_p = sum_i A_pi (|m_i|^2 - 2 m_i.h_p + |h_p|^2).
inline ad::Var compactness_graph(ad::Tape& t, ad::Var attention,
                                 ad::Var tokens, ad::Var bag, bool normalize,
                                 double norm_eps = kNormEps) {
  ad::Var m = normalize ? t.l2_normalize_rows(bag, norm_eps) : bag;
  ad::Var h = normalize ? t.l2_normalize_rows(tokens, norm_eps) : tokens;
  ad::Var r = t.row_sums(t.hadamard(m, m));          // N x 1
  ad::Var v1 = t.matmul(attention, r);               // P x 1
  ad::Var w = t.matmul(attention, m);                // P x L
  ad::Var v2 = t.row_sums(t.hadamard(w, h));         // P x 1
  ad::Var s = t.row_sums(t.hadamard(h, h));          // P x 1
  ad::Var v3 = t.hadamard(s, t.row_sums(attention));  // P x 1
  ad::Var v = t.add(t.sub(v1, t.scale_by(v2, 2.0)), v3);
  return t.mean_all(v);
}

}  // namespace histomet
