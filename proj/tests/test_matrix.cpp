#include "dynattn/matrix.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dynattn/random.hpp"

using dynattn::Matrix;

namespace {

// Reference matmul: nested vectors, plain i/j/k accumulation. Kept free of
// any library code so it can arbitrate.
std::vector<std::vector<double>> oracle_matmul(const std::vector<std::vector<double>>& a,
                                               const std::vector<std::vector<double>>& b) {
  const std::size_t n = a.size(), k = b.size(), m = b[0].size();
  std::vector<std::vector<double>> out(n, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += a[i][t] * b[t][j];
      out[i][j] = acc;
    }
  return out;
}

// Reference row softmax with explicit max subtraction.
std::vector<double> oracle_softmax_row(const std::vector<double>& row, double scale) {
  double mx = scale * row[0];
  for (double v : row) mx = std::max(mx, scale * v);
  std::vector<double> e(row.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    e[j] = std::exp(scale * row[j] - mx);
    sum += e[j];
  }
  for (double& v : e) v /= sum;
  return e;
}

// Reference layer norm straight from the definition.
std::vector<double> oracle_layer_norm(const std::vector<double>& v,
                                      const std::vector<double>& g,
                                      const std::vector<double>& b, double eps) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= v.size();
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= v.size();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    out[i] = g[i] * (v[i] - mean) / std::sqrt(var + eps) + b[i];
  return out;
}

Matrix random_matrix(dynattn::RandomSource& rng, std::size_t r, std::size_t c,
                     double lo = -2.0, double hi = 2.0) {
  Matrix m(r, c);
  for (double& v : m.data) v = lo + (hi - lo) * rng.uniform01();
  return m;
}

TEST(Matrix, MatmulMatchesOracle) {
  dynattn::RandomSource rng(101);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 1 + rep % 7, k = 1 + (rep * 3) % 9, m = 1 + (rep * 5) % 6;
    Matrix a = random_matrix(rng, n, k);
    Matrix b = random_matrix(rng, k, m);
    std::vector<std::vector<double>> av(n, std::vector<double>(k)), bv(k, std::vector<double>(m));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) av[i][j] = a(i, j);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < m; ++j) bv[i][j] = b(i, j);
    const auto expect = oracle_matmul(av, bv);
    const Matrix got = dynattn::matmul(a, b);
    ASSERT_EQ(got.rows, n);
    ASSERT_EQ(got.cols, m);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) EXPECT_NEAR(got(i, j), expect[i][j], 1e-12);
  }
}

TEST(Matrix, MatmulShapeMismatchThrows) {
  Matrix a(2, 3), b(4, 2);
  EXPECT_THROW(dynattn::matmul(a, b), dynattn::ShapeError);
}

TEST(Matrix, TransposeRoundTrip) {
  dynattn::RandomSource rng(7);
  Matrix a = random_matrix(rng, 5, 3);
  Matrix t = dynattn::transpose(a);
  ASSERT_EQ(t.rows, 3u);
  ASSERT_EQ(t.cols, 5u);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) EXPECT_EQ(t(j, i), a(i, j));
  Matrix tt = dynattn::transpose(t);
  EXPECT_EQ(tt.data, a.data);
}

TEST(Matrix, AddAndHadamardShapeChecks) {
  Matrix a(2, 2), b(2, 3);
  EXPECT_THROW(dynattn::add(a, b), dynattn::ShapeError);
  EXPECT_THROW(dynattn::hadamard(a, b), dynattn::ShapeError);
}

TEST(Matrix, ColSliceExtractsAndWritesBack) {
  dynattn::RandomSource rng(11);
  Matrix a = random_matrix(rng, 4, 6);
  Matrix s = dynattn::col_slice(a, 2, 5);
  ASSERT_EQ(s.cols, 3u);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(s(i, j), a(i, j + 2));
  Matrix b(4, 6);
  dynattn::set_col_slice(b, 2, s);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(b(i, j + 2), s(i, j));
  EXPECT_THROW(dynattn::col_slice(a, 4, 7), dynattn::ShapeError);
}

TEST(Matrix, SoftmaxMatchesOracleRowwise) {
  dynattn::RandomSource rng(13);
  Matrix m = random_matrix(rng, 6, 9, -4.0, 4.0);
  const Matrix got = dynattn::softmax_rows(m, 0.37);
  for (std::size_t i = 0; i < m.rows; ++i) {
    std::vector<double> row(m.cols);
    for (std::size_t j = 0; j < m.cols; ++j) row[j] = m(i, j);
    const auto expect = oracle_softmax_row(row, 0.37);
    for (std::size_t j = 0; j < m.cols; ++j) EXPECT_NEAR(got(i, j), expect[j], 1e-14);
  }
}

TEST(Matrix, SoftmaxRowsSumToOne) {
  dynattn::RandomSource rng(17);
  Matrix m = random_matrix(rng, 8, 12, -100.0, 100.0);
  const Matrix got = dynattn::softmax_rows(m, 1.0);
  for (std::size_t i = 0; i < got.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < got.cols; ++j) {
      EXPECT_GE(got(i, j), 0.0);
      s += got(i, j);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Matrix, SoftmaxStableForExtremeMagnitudes) {
  Matrix m(1, 3, {1000.0, -1000.0, 999.0});
  const Matrix got = dynattn::softmax_rows(m, 1.0);
  EXPECT_TRUE(dynattn::all_finite(got));
  EXPECT_NEAR(got(0, 0) + got(0, 1) + got(0, 2), 1.0, 1e-12);
  EXPECT_GT(got(0, 0), got(0, 2));
  EXPECT_NEAR(got(0, 1), 0.0, 1e-300);
}

TEST(Matrix, SoftmaxEqualEntriesExactlyUniform) {
  Matrix m(2, 4, {3.0, 3.0, 3.0, 3.0, -7.0, -7.0, -7.0, -7.0});
  const Matrix got = dynattn::softmax_rows(m, 2.5);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(got(i, j), 0.25);
}

TEST(Matrix, SoftmaxScaleEquivariance) {
  dynattn::RandomSource rng(19);
  Matrix m = random_matrix(rng, 5, 7);
  const Matrix a = dynattn::softmax_rows(m, 1.7);
  const Matrix b = dynattn::softmax_rows(dynattn::scaled(m, 1.7), 1.0);
  for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 1e-12);
}

TEST(Matrix, SoftmaxKnownTwoPointValue) {
  Matrix m(1, 2, {0.0, std::log(2.0)});
  const Matrix got = dynattn::softmax_rows(m, 1.0);
  EXPECT_NEAR(got(0, 0), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(got(0, 1), 2.0 / 3.0, 1e-15);
}

TEST(Matrix, SoftmaxMaskedEntriesGetZero) {
  const double ninf = -std::numeric_limits<double>::infinity();
  Matrix m(1, 3, {1.0, ninf, 2.0});
  const Matrix got = dynattn::softmax_rows(m, 1.0);
  EXPECT_EQ(got(0, 1), 0.0);
  EXPECT_NEAR(got(0, 0) + got(0, 2), 1.0, 1e-12);
  Matrix all_masked(1, 2, {ninf, ninf});
  EXPECT_THROW(dynattn::softmax_rows(all_masked, 1.0), dynattn::RangeError);
}

TEST(Matrix, LayerNormMatchesOracle) {
  dynattn::RandomSource rng(23);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t n = 2 + rep;
    std::vector<double> v(n), g(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = -3.0 + 6.0 * rng.uniform01();
      g[i] = 0.5 + rng.uniform01();
      b[i] = -1.0 + 2.0 * rng.uniform01();
    }
    const auto expect = oracle_layer_norm(v, g, b, 1e-5);
    const auto got = dynattn::layer_norm(v, g, b, 1e-5);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(got[i], expect[i], 1e-13);
  }
}

TEST(Matrix, LayerNormNormalizesMoments) {
  dynattn::RandomSource rng(29);
  const std::size_t n = 64;
  std::vector<double> v(n), ones(n, 1.0), zeros(n, 0.0);
  for (double& x : v) x = 10.0 + 5.0 * rng.uniform01();
  const auto got = dynattn::layer_norm(v, ones, zeros, 1e-5);
  double mean = 0.0;
  for (double x : got) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : got) var += (x - mean) * (x - mean);
  var /= n;
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_NEAR(var, 1.0, 1e-4);
}

TEST(Matrix, LayerNormConstantVectorIsBias) {
  std::vector<double> v(8, 4.2), g(8, 1.3), b(8, 0.7);
  const auto got = dynattn::layer_norm(v, g, b, 1e-5);
  for (double x : got) EXPECT_EQ(x, 0.7);
}

TEST(Matrix, LayerNormSizeMismatchThrows) {
  std::vector<double> v(4, 1.0), g(3, 1.0), b(4, 0.0);
  EXPECT_THROW(dynattn::layer_norm(v, g, b, 1e-5), dynattn::ShapeError);
}

TEST(Matrix, ExportedOpsStayFinite) {
  dynattn::RandomSource rng(31);
  for (int rep = 0; rep < 25; ++rep) {
    Matrix a = random_matrix(rng, 6, 6, -50.0, 50.0);
    Matrix b = random_matrix(rng, 6, 6, -50.0, 50.0);
    EXPECT_TRUE(dynattn::all_finite(dynattn::matmul(a, b)));
    EXPECT_TRUE(dynattn::all_finite(dynattn::softmax_rows(a, 3.0)));
    EXPECT_TRUE(dynattn::all_finite(dynattn::add(a, b)));
    EXPECT_TRUE(dynattn::all_finite(dynattn::relu(a)));
    std::vector<double> row(a.data.begin(), a.data.begin() + 6);
    std::vector<double> ones(6, 1.0), zeros(6, 0.0);
    for (double x : dynattn::layer_norm(row, ones, zeros, 1e-5)) EXPECT_TRUE(std::isfinite(x));
  }
}

}  // namespace
