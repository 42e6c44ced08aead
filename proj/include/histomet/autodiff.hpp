#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "histomet/matrix.hpp"

namespace histomet::ad {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over dense matrices. Each operation records its value
/// and a closure that scatters the upstream gradient to its parents; the
/// graph is rebuilt per forward pass, so ablation variants that change the
/// model topology need no special casing.
class Tape {
 public:
  Var leaf(Matrix value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, nullptr);
  }

  const Matrix& value(Var v) const { return nodes_[check(v)].value; }

  /// Gradient of the last backward() output w.r.t. this node.
  const Matrix& grad(Var v) const {
    const Node& n = nodes_[check(v)];
    if (!n.requires_grad || n.grad.empty())
      throw std::logic_error("Tape::grad: node has no gradient");
    return n.grad;
  }

  Var matmul(Var a, Var b) {
    Matrix v = histomet::matmul(value(a), value(b));
    return push(std::move(v), needs(a) || needs(b), [a, b](Tape& t, int self) {
      const Matrix& g = t.nodes_[self].grad;
      if (t.needs(a))
        t.accumulate(a, histomet::matmul(g, transpose(t.value(b))));
      if (t.needs(b))
        t.accumulate(b, histomet::matmul(transpose(t.value(a)), g));
    });
  }

  Var transpose_of(Var a) {
    return push(transpose(value(a)), needs(a), [a](Tape& t, int self) {
      t.accumulate(a, transpose(t.nodes_[self].grad));
    });
  }

  Var add(Var a, Var b) {
    return push(histomet::add(value(a), value(b)), needs(a) || needs(b),
                [a, b](Tape& t, int self) {
                  const Matrix& g = t.nodes_[self].grad;
                  if (t.needs(a)) t.accumulate(a, g);
                  if (t.needs(b)) t.accumulate(b, g);
                });
  }

  Var sub(Var a, Var b) {
    return push(histomet::sub(value(a), value(b)), needs(a) || needs(b),
                [a, b](Tape& t, int self) {
                  const Matrix& g = t.nodes_[self].grad;
                  if (t.needs(a)) t.accumulate(a, g);
                  if (t.needs(b)) t.accumulate(b, scale(g, -1.0));
                });
  }

  Var scale_by(Var a, double s) {
    return push(scale(value(a), s), needs(a), [a, s](Tape& t, int self) {
      t.accumulate(a, scale(t.nodes_[self].grad, s));
    });
  }

  Var hadamard(Var a, Var b) {
    return push(histomet::hadamard(value(a), value(b)), needs(a) || needs(b),
                [a, b](Tape& t, int self) {
                  const Matrix& g = t.nodes_[self].grad;
                  if (t.needs(a))
                    t.accumulate(a, histomet::hadamard(g, t.value(b)));
                  if (t.needs(b))
                    t.accumulate(b, histomet::hadamard(g, t.value(a)));
                });
  }

  // n x m -> n x 1
  Var row_sums(Var a) {
    const Matrix& x = value(a);
    Matrix v(x.rows(), 1);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < x.cols(); ++j) s += x.at(i, j);
      v.at(i, 0) = s;
    }
    return push(std::move(v), needs(a), [a](Tape& t, int self) {
      const Matrix& g = t.nodes_[self].grad;
      const Matrix& x = t.value(a);
      Matrix ga(x.rows(), x.cols());
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) ga.at(i, j) = g.at(i, 0);
      t.accumulate(a, std::move(ga));
    });
  }

  // n x m -> 1 x m, mean over rows
  Var col_mean(Var a) {
    const Matrix& x = value(a);
    if (x.rows() == 0) throw std::invalid_argument("col_mean: empty input");
    Matrix v(1, x.cols());
    const double inv = 1.0 / static_cast<double>(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) v.at(0, j) += x.at(i, j);
    for (std::size_t j = 0; j < x.cols(); ++j) v.at(0, j) *= inv;
    return push(std::move(v), needs(a), [a, inv](Tape& t, int self) {
      const Matrix& g = t.nodes_[self].grad;
      const Matrix& x = t.value(a);
      Matrix ga(x.rows(), x.cols());
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j)
          ga.at(i, j) = g.at(0, j) * inv;
      t.accumulate(a, std::move(ga));
    });
  }

  // n x m -> 1 x m, max over rows; gradient routes to the first argmax
  Var col_max(Var a) {
    const Matrix& x = value(a);
    if (x.rows() == 0) throw std::invalid_argument("col_max: empty input");
    Matrix v(1, x.cols());
    std::vector<std::size_t> arg(x.cols(), 0);
    for (std::size_t j = 0; j < x.cols(); ++j) {
      double best = x.at(0, j);
      for (std::size_t i = 1; i < x.rows(); ++i)
        if (x.at(i, j) > best) {
          best = x.at(i, j);
          arg[j] = i;
        }
      v.at(0, j) = best;
    }
    return push(std::move(v), needs(a),
                [a, arg = std::move(arg)](Tape& t, int self) {
                  const Matrix& g = t.nodes_[self].grad;
                  const Matrix& x = t.value(a);
                  Matrix ga(x.rows(), x.cols());
                  for (std::size_t j = 0; j < x.cols(); ++j)
                    ga.at(arg[j], j) = g.at(0, j);
                  t.accumulate(a, std::move(ga));
                });
  }

  Var mean_all(Var a) {
    const Matrix& x = value(a);
    if (x.size() == 0) throw std::invalid_argument("mean_all: empty input");
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) s += x[k];
    const double inv = 1.0 / static_cast<double>(x.size());
    Matrix v(1, 1);
    v.at(0, 0) = s * inv;
    return push(std::move(v), needs(a), [a, inv](Tape& t, int self) {
      const double g = t.nodes_[self].grad.at(0, 0) * inv;
      const Matrix& x = t.value(a);
      Matrix ga(x.rows(), x.cols());
      for (std::size_t k = 0; k < ga.size(); ++k) ga[k] = g;
      t.accumulate(a, std::move(ga));
    });
  }

  Var row_softmax(Var a) {
    Matrix y = histomet::row_softmax(value(a));
    return push(std::move(y), needs(a), [a](Tape& t, int self) {
      const Matrix& g = t.nodes_[self].grad;
      const Matrix& y = t.nodes_[self].value;
      Matrix ga(y.rows(), y.cols());
      for (std::size_t i = 0; i < y.rows(); ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j)
          dot += g.at(i, j) * y.at(i, j);
        for (std::size_t j = 0; j < y.cols(); ++j)
          ga.at(i, j) = y.at(i, j) * (g.at(i, j) - dot);
      }
      t.accumulate(a, std::move(ga));
    });
  }

  Var col_softmax(Var a) {
    return transpose_of(row_softmax(transpose_of(a)));
  }

  Var layer_norm(Var x, Var gain, Var bias, double eps) {
    const Matrix& xv = value(x);
    const Matrix& gv = value(gain);
    const Matrix& bv = value(bias);
    if (gv.rows() != 1 || bv.rows() != 1 || gv.cols() != xv.cols() ||
        bv.cols() != xv.cols())
      throw std::invalid_argument("layer_norm: gain/bias must be 1 x cols");
    const std::size_t n = xv.rows(), m = xv.cols();
    const double inv_m = 1.0 / static_cast<double>(m);
    Matrix xhat(n, m);
    std::vector<double> inv_std(n);
    Matrix y(n, m);
    for (std::size_t i = 0; i < n; ++i) {
      double mean = 0.0;
      for (std::size_t j = 0; j < m; ++j) mean += xv.at(i, j);
      mean *= inv_m;
      double var = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        const double d = xv.at(i, j) - mean;
        var += d * d;
      }
      var *= inv_m;
      inv_std[i] = 1.0 / std::sqrt(var + eps);
      for (std::size_t j = 0; j < m; ++j) {
        xhat.at(i, j) = (xv.at(i, j) - mean) * inv_std[i];
        y.at(i, j) = xhat.at(i, j) * gv.at(0, j) + bv.at(0, j);
      }
    }
    return push(std::move(y), needs(x) || needs(gain) || needs(bias),
                [x, gain, bias, xhat = std::move(xhat),
                 inv_std = std::move(inv_std), inv_m](Tape& t, int self) {
                  const Matrix& g = t.nodes_[self].grad;
                  const Matrix& gv = t.value(gain);
                  const std::size_t n = g.rows(), m = g.cols();
                  if (t.needs(gain)) {
                    Matrix gg(1, m);
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t j = 0; j < m; ++j)
                        gg.at(0, j) += g.at(i, j) * xhat.at(i, j);
                    t.accumulate(gain, std::move(gg));
                  }
                  if (t.needs(bias)) {
                    Matrix gb(1, m);
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t j = 0; j < m; ++j)
                        gb.at(0, j) += g.at(i, j);
                    t.accumulate(bias, std::move(gb));
                  }
                  if (t.needs(x)) {
                    Matrix gx(n, m);
                    for (std::size_t i = 0; i < n; ++i) {
                      double mean_g = 0.0, mean_gx = 0.0;
                      for (std::size_t j = 0; j < m; ++j) {
                        const double dxh = g.at(i, j) * gv.at(0, j);
                        mean_g += dxh;
                        mean_gx += dxh * xhat.at(i, j);
                      }
                      mean_g *= inv_m;
                      mean_gx *= inv_m;
                      for (std::size_t j = 0; j < m; ++j) {
                        const double dxh = g.at(i, j) * gv.at(0, j);
                        gx.at(i, j) = inv_std[i] *
                                      (dxh - mean_g - xhat.at(i, j) * mean_gx);
                      }
                    }
                    t.accumulate(x, std::move(gx));
                  }
                });
  }

  Var l2_normalize_rows(Var a, double eps = 1e-12) {
    const Matrix& x = value(a);
    std::vector<double> norms(x.rows());
    Matrix y(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double sq = 0.0;
      for (std::size_t j = 0; j < x.cols(); ++j) sq += x.at(i, j) * x.at(i, j);
      norms[i] = std::sqrt(sq);
      const double inv = 1.0 / std::max(norms[i], eps);
      for (std::size_t j = 0; j < x.cols(); ++j) y.at(i, j) = x.at(i, j) * inv;
    }
    return push(std::move(y), needs(a),
                [a, eps, norms = std::move(norms)](Tape& t, int self) {
                  const Matrix& g = t.nodes_[self].grad;
                  const Matrix& x = t.value(a);
                  Matrix ga(x.rows(), x.cols());
                  for (std::size_t i = 0; i < x.rows(); ++i) {
                    if (norms[i] > eps) {
                      double xg = 0.0;
                      for (std::size_t j = 0; j < x.cols(); ++j)
                        xg += x.at(i, j) * g.at(i, j);
                      const double inv = 1.0 / norms[i];
                      const double inv3 = inv * inv * inv;
                      for (std::size_t j = 0; j < x.cols(); ++j)
                        ga.at(i, j) =
                            g.at(i, j) * inv - x.at(i, j) * xg * inv3;
                    } else {
                      for (std::size_t j = 0; j < x.cols(); ++j)
                        ga.at(i, j) = g.at(i, j) / eps;
                    }
                  }
                  t.accumulate(a, std::move(ga));
                });
  }

  /// Cross-entropy of softmax(logits) against an integer label; logits 1 x C.
  Var cross_entropy(Var logits, std::size_t label) {
    const Matrix& lv = value(logits);
    if (lv.rows() != 1)
      throw std::invalid_argument("cross_entropy: logits must be a row");
    if (label >= lv.cols())
      throw std::invalid_argument("cross_entropy: label out of range");
    Matrix probs = histomet::row_softmax(lv);
    double mx = lv.at(0, 0);
    for (std::size_t j = 1; j < lv.cols(); ++j) mx = std::max(mx, lv.at(0, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < lv.cols(); ++j)
      sum += std::exp(lv.at(0, j) - mx);
    Matrix v(1, 1);
    v.at(0, 0) = std::log(sum) + mx - lv.at(0, label);
    return push(std::move(v), needs(logits),
                [logits, label, probs = std::move(probs)](Tape& t, int self) {
                  const double g = t.nodes_[self].grad.at(0, 0);
                  Matrix gl = probs;
                  gl.at(0, label) -= 1.0;
                  for (std::size_t k = 0; k < gl.size(); ++k) gl[k] *= g;
                  t.accumulate(logits, std::move(gl));
                });
  }

  /// Seeds the scalar output with gradient 1 and sweeps the tape in reverse.
  void backward(Var out) {
    const Matrix& v = value(out);
    if (v.rows() != 1 || v.cols() != 1)
      throw std::invalid_argument("backward: output must be scalar (1x1)");
    for (Node& n : nodes_)
      if (n.requires_grad) n.grad = Matrix(n.value.rows(), n.value.cols());
    if (!nodes_[out.id].requires_grad)
      return;  // nothing upstream is learnable
    nodes_[out.id].grad.at(0, 0) = 1.0;
    for (int i = out.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.back) n.back(*this, i);
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  using BackFn = std::function<void(Tape&, int)>;

  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackFn back;
  };

  int check(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
      throw std::logic_error("Tape: invalid Var");
    return v.id;
  }

  bool needs(Var v) const { return nodes_[check(v)].requires_grad; }

  void accumulate(Var v, Matrix g) {
    Matrix& dst = nodes_[check(v)].grad;
    check_same_shape(dst, g, "Tape::accumulate");
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g[k];
  }

  Var push(Matrix value, bool requires_grad, BackFn back) {
    nodes_.push_back(Node{std::move(value), Matrix(), requires_grad,
                          requires_grad ? std::move(back) : nullptr});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace histomet::ad
