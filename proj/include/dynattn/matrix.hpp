#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <string>
#include <vector>

#include "dynattn/errors.hpp"

namespace dynattn {

// Dense row-major matrix of 64-bit reals. Small enough at toy scale that
// copies are cheap; no view machinery.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Matrix(std::size_t r, std::size_t c, std::initializer_list<double> v)
      : rows(r), cols(c), data(v) {
    if (data.size() != r * c) throw ShapeError("matrix literal size mismatch");
  }

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  bool empty() const { return rows == 0 || cols == 0; }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  double* row_ptr(std::size_t i) { return data.data() + i * cols; }
  const double* row_ptr(std::size_t i) const { return data.data() + i * cols; }
};

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

inline bool all_finite(const Matrix& m) {
  for (double v : m.data)
    if (!std::isfinite(v)) return false;
  return true;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw ShapeError("matmul shape mismatch: " + shape_str(a) + " * " + shape_str(b));
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.row_ptr(i);
    double* orow = out.row_ptr(i);
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.row_ptr(k);
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& m) {
  Matrix out(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) out(j, i) = m(i, j);
  return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b))
    throw ShapeError("add shape mismatch: " + shape_str(a) + " + " + shape_str(b));
  Matrix out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b))
    throw ShapeError("hadamard shape mismatch: " + shape_str(a) + " . " + shape_str(b));
  Matrix out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
  return out;
}

inline Matrix scaled(const Matrix& m, double s) {
  Matrix out = m;
  for (double& v : out.data) v *= s;
  return out;
}

inline Matrix relu(const Matrix& m) {
  Matrix out = m;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return out;
}

// Columns [c0, c1) as a copy. Used to split per-head slices out of packed
// projections.
inline Matrix col_slice(const Matrix& m, std::size_t c0, std::size_t c1) {
  if (c0 > c1 || c1 > m.cols) throw ShapeError("col_slice out of range on " + shape_str(m));
  Matrix out(m.rows, c1 - c0);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = c0; j < c1; ++j) out(i, j - c0) = m(i, j);
  return out;
}

inline void set_col_slice(Matrix& m, std::size_t c0, const Matrix& block) {
  if (c0 + block.cols > m.cols || block.rows != m.rows)
    throw ShapeError("set_col_slice out of range on " + shape_str(m));
  for (std::size_t i = 0; i < block.rows; ++i)
    for (std::size_t j = 0; j < block.cols; ++j) m(i, c0 + j) = block(i, j);
}

// Row-wise softmax of scale*m. The row max is subtracted before
// exponentiation; rows of equal entries come out exactly uniform.
// Entries of -inf (additive masks) get probability 0; a row that is
// entirely masked is a caller bug and throws.
inline Matrix softmax_rows(const Matrix& m, double scale) {
  Matrix out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m.cols; ++j) mx = std::max(mx, scale * m(i, j));
    if (!std::isfinite(mx)) throw RangeError("softmax_rows: fully masked or non-finite row");
    double sum = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) {
      double s = scale * m(i, j);
      double e = std::isinf(s) ? 0.0 : std::exp(s - mx);
      out(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < m.cols; ++j) out(i, j) /= sum;
  }
  return out;
}

// Normalize v to zero mean and unit variance (biased variance, eps inside the
// sqrt), then apply elementwise gain and bias.
inline std::vector<double> layer_norm(const std::vector<double>& v,
                                      const std::vector<double>& gain,
                                      const std::vector<double>& bias, double eps) {
  const std::size_t n = v.size();
  if (gain.size() != n || bias.size() != n)
    throw ShapeError("layer_norm gain/bias size mismatch");
  if (n == 0) throw RangeError("layer_norm on empty vector");
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(n);
  const double inv = 1.0 / std::sqrt(var + eps);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = (v[i] - mean) * inv * gain[i] + bias[i];
  return out;
}

}  // namespace dynattn
