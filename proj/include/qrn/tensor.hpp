// Row-major dense double matrix and the handful of kernels the model needs.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <span>
#include <vector>

#include "qrn/util.hpp"

namespace qrn {

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  std::span<double> row(int r) {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }
  std::span<const double> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }

  void zero() { std::fill(data.begin(), data.end(), 0.0); }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

using Vec = std::vector<double>;

// out = A * B. ikj order so the inner loop streams both B and out rows.
inline void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  out.rows = a.rows;
  out.cols = b.cols;
  out.data.assign(static_cast<std::size_t>(a.rows) * b.cols, 0.0);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + static_cast<std::size_t>(i) * a.cols;
    double* orow = out.data.data() + static_cast<std::size_t>(i) * b.cols;
    for (int k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.data.data() + static_cast<std::size_t>(k) * b.cols;
      for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
}

// out = A^T * B, with A (m x r), B (m x c) -> out (r x c). Used by backward.
inline void matmul_at_b(const Matrix& a, const Matrix& b, Matrix& out) {
  out.rows = a.cols;
  out.cols = b.cols;
  out.data.assign(static_cast<std::size_t>(a.cols) * b.cols, 0.0);
  for (int m = 0; m < a.rows; ++m) {
    const double* arow = a.data.data() + static_cast<std::size_t>(m) * a.cols;
    const double* brow = b.data.data() + static_cast<std::size_t>(m) * b.cols;
    for (int i = 0; i < a.cols; ++i) {
      const double ami = arow[i];
      if (ami == 0.0) continue;
      double* orow = out.data.data() + static_cast<std::size_t>(i) * b.cols;
      for (int j = 0; j < b.cols; ++j) orow[j] += ami * brow[j];
    }
  }
}

// out = A * B^T, with A (m x c), B (n x c) -> out (m x n).
inline void matmul_a_bt(const Matrix& a, const Matrix& b, Matrix& out) {
  out.rows = a.rows;
  out.cols = b.rows;
  out.data.assign(static_cast<std::size_t>(a.rows) * b.rows, 0.0);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + static_cast<std::size_t>(i) * a.cols;
    double* orow = out.data.data() + static_cast<std::size_t>(i) * b.rows;
    for (int j = 0; j < b.rows; ++j) {
      const double* brow = b.data.data() + static_cast<std::size_t>(j) * b.cols;
      double acc = 0.0;
      for (int k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
      orow[j] = acc;
    }
  }
}

// y = x * M for a row vector x (len M.rows), y has len M.cols.
inline void vec_mat(std::span<const double> x, const Matrix& m, std::span<double> y) {
  std::fill(y.begin(), y.end(), 0.0);
  for (int k = 0; k < m.rows; ++k) {
    const double xk = x[static_cast<std::size_t>(k)];
    if (xk == 0.0) continue;
    const double* mrow = m.data.data() + static_cast<std::size_t>(k) * m.cols;
    for (int j = 0; j < m.cols; ++j) y[static_cast<std::size_t>(j)] += xk * mrow[j];
  }
}

// y = x * M^T for a row vector x (len M.cols), y has len M.rows.
inline void vec_mat_t(std::span<const double> x, const Matrix& m, std::span<double> y) {
  for (int i = 0; i < m.rows; ++i) {
    const double* mrow = m.data.data() + static_cast<std::size_t>(i) * m.cols;
    double acc = 0.0;
    for (int j = 0; j < m.cols; ++j) acc += x[static_cast<std::size_t>(j)] * mrow[j];
    y[static_cast<std::size_t>(i)] = acc;
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double silu(double x) { return x * sigmoid(x); }

// d/dx silu(x) = sigmoid(x) * (1 + x * (1 - sigmoid(x)))
inline double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

// in-place softmax over a span, numerically shifted by the max
inline void softmax_inplace(std::span<double> v) {
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

inline double rms(std::span<const double> x, double eps) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc / static_cast<double>(x.size()) + eps);
}

// y = x / rms(x) * gain
inline void rmsnorm(std::span<const double> x, std::span<const double> gain,
                    double eps, std::span<double> y) {
  const double inv = 1.0 / rms(x, eps);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * inv * gain[i];
}

// Backward of y = x/rms(x)*gain:  dx = (gain . dy)/r - x * <gain.dy, x> / (n r^3)
// where r includes eps inside the square root, so r^2 = mean(x^2) + eps.
inline void rmsnorm_backward(std::span<const double> x, std::span<const double> gain,
                             double eps, std::span<const double> dy,
                             std::span<double> dx_accum) {
  const std::size_t n = x.size();
  const double r = rms(x, eps);
  const double inv = 1.0 / r;
  double inner = 0.0;
  for (std::size_t i = 0; i < n; ++i) inner += gain[i] * dy[i] * x[i];
  const double scale = inner / (static_cast<double>(n) * r * r * r);
  for (std::size_t i = 0; i < n; ++i)
    dx_accum[i] += gain[i] * dy[i] * inv - x[i] * scale;
}

inline void rmsnorm_backward_gain(std::span<const double> x, double eps,
                                  std::span<const double> dy,
                                  std::span<double> dgain_accum) {
  const double inv = 1.0 / rms(x, eps);
  for (std::size_t i = 0; i < x.size(); ++i) dgain_accum[i] += dy[i] * x[i] * inv;
}

}  // namespace qrn
