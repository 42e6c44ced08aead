#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace histomet {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles. All model state and intermediate
/// activations use this one type; shapes are checked at operation boundaries.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw std::invalid_argument("Matrix: data length does not match shape");
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_)
        throw std::invalid_argument("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  double& operator[](std::size_t k) { return data_[k]; }
  double operator[](std::size_t k) const { return data_[k]; }

  double* row(std::size_t i) { return data_.data() + i * cols_; }
  const double* row(std::size_t i) const { return data_.data() + i * cols_; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  Vector row_vector(std::size_t i) const {
    return Vector(row(i), row(i) + cols_);
  }

  bool operator==(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

  static Matrix from_row(const Vector& v) {
    return Matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
  }
  static Matrix from_col(const Vector& v) {
    return Matrix(v.size(), 1, std::vector<double>(v.begin(), v.end()));
  }
  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline void check_same_shape(const Matrix& a, const Matrix& b,
                             const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
}

/// Standard product. Accumulation over k is ascending for every output
/// element, so the result is bit-identical to the naive i-j-k triple loop.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions " +
                                std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()));
  Matrix c(a.rows(), b.cols());
  const std::size_t n = a.rows(), k_dim = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c.row(i);
    const double* ai = a.row(i);
    for (std::size_t k = 0; k < k_dim; ++k) {
      const double aik = ai[k];
      const double* bk = b.row(k);
      for (std::size_t j = 0; j < m; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "add");
  Matrix c = a;
  for (std::size_t k = 0; k < c.size(); ++k) c[k] += b[k];
  return c;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "sub");
  Matrix c = a;
  for (std::size_t k = 0; k < c.size(); ++k) c[k] -= b[k];
  return c;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "hadamard");
  Matrix c = a;
  for (std::size_t k = 0; k < c.size(); ++k) c[k] *= b[k];
  return c;
}

inline Matrix scale(const Matrix& a, double s) {
  Matrix c = a;
  for (std::size_t k = 0; k < c.size(); ++k) c[k] *= s;
  return c;
}

/// Softmax per row with max subtraction, so arbitrarily shifted rows are safe.
inline Matrix row_softmax(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* xi = x.row(i);
    double* yi = y.row(i);
    double mx = xi[0];
    for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, xi[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      yi[j] = std::exp(xi[j] - mx);
      sum += yi[j];
    }
    for (std::size_t j = 0; j < x.cols(); ++j) yi[j] /= sum;
  }
  return y;
}

/// Per-row standardization (population variance) with learned gain and bias.
inline Matrix layer_norm(const Matrix& x, const Vector& gain,
                         const Vector& bias, double eps) {
  if (gain.size() != x.cols() || bias.size() != x.cols())
    throw std::invalid_argument("layer_norm: gain/bias length must equal cols");
  Matrix y(x.rows(), x.cols());
  const double inv_n = 1.0 / static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* xi = x.row(i);
    double* yi = y.row(i);
    double mean = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) mean += xi[j];
    mean *= inv_n;
    double var = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double d = xi[j] - mean;
      var += d * d;
    }
    var *= inv_n;
    const double inv_std = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < x.cols(); ++j)
      yi[j] = (xi[j] - mean) * inv_std * gain[j] + bias[j];
  }
  return y;
}

/// Each row divided by max(norm, eps); zero rows stay zero.
inline Matrix l2_normalize_rows(const Matrix& x, double eps = 1e-12) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* xi = x.row(i);
    double* yi = y.row(i);
    double sq = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) sq += xi[j] * xi[j];
    const double inv = 1.0 / std::max(std::sqrt(sq), eps);
    for (std::size_t j = 0; j < x.cols(); ++j) yi[j] = xi[j] * inv;
  }
  return y;
}

/// out[i][j] = cos(a_i, b_j), clamped to [-1, 1]; zero rows give 0.
inline Matrix cosine_rows(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("cosine_rows: column counts differ");
  std::vector<double> na(a.rows()), nb(b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) sq += a.at(i, j) * a.at(i, j);
    na[i] = std::sqrt(sq);
  }
  for (std::size_t i = 0; i < b.rows(); ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < b.cols(); ++j) sq += b.at(i, j) * b.at(i, j);
    nb[i] = std::sqrt(sq);
  }
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < b.rows(); ++k) {
      const double denom = na[i] * nb[k];
      if (denom == 0.0) {
        c.at(i, k) = 0.0;
        continue;
      }
      double dot = 0.0;
      for (std::size_t j = 0; j < a.cols(); ++j) dot += a.at(i, j) * b.at(k, j);
      c.at(i, k) = std::clamp(dot / denom, -1.0, 1.0);
    }
  }
  return c;
}

inline bool all_finite(const Matrix& m) {
  for (std::size_t k = 0; k < m.size(); ++k)
    if (!std::isfinite(m[k])) return false;
  return true;
}

inline Vector softmax(const Vector& x) {
  Matrix y = row_softmax(Matrix::from_row(x));
  return y.row_vector(0);
}

inline std::size_t argmax(const Vector& x) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < x.size(); ++i)
    if (x[i] > x[best]) best = i;
  return best;
}

}  // namespace histomet
