#include "doctest.h"

#include <cmath>

#include "histomet/matrix.hpp"
#include "histomet/rng.hpp"
#include "oracles.hpp"

using namespace histomet;

TEST_CASE("matmul identity and hand arithmetic") {
  Matrix x = {{1.0, 2.0}, {3.0, 4.0}};
  CHECK(matmul(Matrix::identity(2), x) == x);

  Matrix b = {{0.0}, {1.0}};
  Matrix c = matmul(x, b);
  CHECK(c.at(0, 0) == 2.0);
  CHECK(c.at(1, 0) == 4.0);
}

TEST_CASE("matmul matches naive triple loop exactly on seeded shapes") {
  Rng rng(91);
  const std::size_t shapes[][3] = {
      {5, 7, 3}, {1, 1, 1}, {2, 9, 4}, {8, 3, 8}, {13, 2, 5}};
  for (const auto& s : shapes) {
    Matrix a = oracle::random_matrix(rng, s[0], s[1]);
    Matrix b = oracle::random_matrix(rng, s[1], s[2]);
    CHECK(matmul(a, b) == oracle::matmul_naive(a, b));
  }
}

TEST_CASE("matmul rejects dimension mismatch") {
  Matrix a(2, 3), b(2, 3);
  CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
}

TEST_CASE("row_softmax basics") {
  Matrix y = row_softmax(Matrix{{0.0, 0.0, 0.0}});
  for (int j = 0; j < 3; ++j) CHECK(y.at(0, j) == doctest::Approx(1.0 / 3));

  Matrix z = row_softmax(Matrix{{1.0, 2.0}});
  CHECK(z.at(0, 0) == doctest::Approx(0.268941).epsilon(1e-5));
  CHECK(z.at(0, 1) == doctest::Approx(0.731059).epsilon(1e-5));
}

TEST_CASE("row_softmax shift invariance and row-sum property") {
  Rng rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    Matrix x = oracle::random_matrix(rng, 4, 6, 3.0);
    Matrix shifted = x;
    const double c = rng.uniform(-50.0, 50.0);
    for (std::size_t j = 0; j < 6; ++j) shifted.at(2, j) += c;
    Matrix a = row_softmax(x);
    Matrix b = row_softmax(shifted);
    for (std::size_t j = 0; j < 6; ++j)
      CHECK(a.at(2, j) == doctest::Approx(b.at(2, j)).epsilon(1e-12));
    for (std::size_t i = 0; i < a.rows(); ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < a.cols(); ++j) {
        CHECK(a.at(i, j) > 0.0);
        CHECK(a.at(i, j) <= 1.0);
        sum += a.at(i, j);
      }
      CHECK(std::fabs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("row_softmax survives extreme magnitudes") {
  Matrix y = row_softmax(Matrix{{1000.0, 999.0}, {-1000.0, -1000.0}});
  CHECK(all_finite(y));
  CHECK(y.at(1, 0) == doctest::Approx(0.5));
}

TEST_CASE("layer_norm hand cases") {
  Vector gain1 = {1.0, 1.0}, bias0 = {0.0, 0.0};

  // constant row: zero variance, eps guard keeps output at bias
  Matrix c = layer_norm(Matrix{{5.0, 5.0}}, gain1, bias0, 1e-5);
  CHECK(c.at(0, 0) == doctest::Approx(0.0));
  CHECK(c.at(0, 1) == doctest::Approx(0.0));

  // already normalized row passes through as eps -> 0
  Matrix n = layer_norm(Matrix{{1.0, -1.0}}, gain1, bias0, 1e-12);
  CHECK(n.at(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(n.at(0, 1) == doctest::Approx(-1.0).epsilon(1e-9));

  Vector gain2 = {2.0, 2.0}, bias1 = {1.0, 1.0};
  Matrix h = layer_norm(Matrix{{0.0, 2.0}}, gain2, bias1, 1e-12);
  CHECK(h.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(h.at(0, 1) == doctest::Approx(3.0).epsilon(1e-9));
}

TEST_CASE("layer_norm rejects bad gain length") {
  CHECK_THROWS_AS(layer_norm(Matrix(2, 3), Vector{1.0}, Vector{0.0}, 1e-5),
                  std::invalid_argument);
}

TEST_CASE("l2_normalize_rows") {
  Matrix y = l2_normalize_rows(Matrix{{3.0, 4.0}});
  CHECK(y.at(0, 0) == doctest::Approx(0.6));
  CHECK(y.at(0, 1) == doctest::Approx(0.8));

  // idempotent on nonzero rows
  Matrix z = l2_normalize_rows(y);
  CHECK(z.at(0, 0) == doctest::Approx(y.at(0, 0)).epsilon(1e-15));

  // zero row stays zero
  Matrix w = l2_normalize_rows(Matrix{{0.0, 0.0}});
  CHECK(w.at(0, 0) == 0.0);
  CHECK(w.at(0, 1) == 0.0);
}

TEST_CASE("cosine_rows hand cases and bounds") {
  Matrix a = {{1.0, 0.0}, {3.0, 4.0}};
  Matrix b = {{1.0, 0.0}, {0.0, 1.0}, {4.0, 3.0}};
  Matrix c = cosine_rows(a, b);
  CHECK(c.at(0, 0) == doctest::Approx(1.0));
  CHECK(c.at(0, 1) == doctest::Approx(0.0));
  CHECK(c.at(1, 2) == doctest::Approx(0.96));

  Matrix z = cosine_rows(Matrix{{0.0, 0.0}}, b);
  CHECK(z.at(0, 0) == 0.0);

  Rng rng(3);
  Matrix p = oracle::random_matrix(rng, 6, 5);
  Matrix q = oracle::random_matrix(rng, 4, 5);
  Matrix s = cosine_rows(p, q);
  Matrix st = cosine_rows(q, p);
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t j = 0; j < s.cols(); ++j) {
      CHECK(s.at(i, j) >= -1.0);
      CHECK(s.at(i, j) <= 1.0);
      CHECK(s.at(i, j) == doctest::Approx(st.at(j, i)).epsilon(1e-15));
    }

  CHECK_THROWS_AS(cosine_rows(Matrix(2, 3), Matrix(2, 4)),
                  std::invalid_argument);
}

TEST_CASE("rng determinism and basic stats") {
  Rng a(1234), b(1234);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng g(55);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = g.gaussian();
    sum += x;
    sq += x * x;
  }
  CHECK(std::fabs(sum / n) < 0.05);
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.05));

  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(derive_seed(1, "a", 0) != derive_seed(1, "a", 1));
  CHECK(derive_seed(1, "a", 7) == derive_seed(1, "a", 7));
}
