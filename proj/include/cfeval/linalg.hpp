#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cfeval/error.hpp"
#include "cfeval/numeric.hpp"

namespace cfeval {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {
    require(r >= 1 && c >= 1, Errc::empty_input, "matrix dimensions must be >= 1");
  }

  double& at(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
  std::span<const double> row(std::size_t i) const { return {a.data() + i * cols, cols}; }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
  }

  double trace() const {
    KahanSum s;
    for (std::size_t i = 0; i < std::min(rows, cols); ++i) s.add(at(i, i));
    return s.value();
  }

  double frobenius() const {
    KahanSum s;
    for (double v : a) s.add(v * v);
    return std::sqrt(s.value());
  }

  Matrix transposed() const {
    Matrix t(cols, rows);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) t.at(j, i) = at(i, j);
    return t;
  }
};

inline Matrix matmul(const Matrix& x, const Matrix& y) {
  require(x.cols == y.rows, Errc::dimension_mismatch, "matmul: inner dimensions differ");
  Matrix r(x.rows, y.cols);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < y.cols; ++j) {
      KahanSum s;
      for (std::size_t k = 0; k < x.cols; ++k) s.add(x.at(i, k) * y.at(k, j));
      r.at(i, j) = s.value();
    }
  return r;
}

struct EigenDecomposition {
  Vector values;   // descending
  Matrix vectors;  // eigenvector k in column k
};

// Cyclic Jacobi eigensolver for symmetric matrices. Sweeps the strict upper
// triangle in row order until the off-diagonal Frobenius norm drops below
// tol * ||a||_F; hard cap of 100 sweeps.
inline EigenDecomposition sym_eigen(const Matrix& m, double tol = 1e-12) {
  require(m.rows == m.cols, Errc::not_square, "sym_eigen: matrix is not square");
  const std::size_t n = m.rows;
  double max_abs = 0.0;
  for (double v : m.a) max_abs = std::max(max_abs, std::abs(v));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      require(std::abs(m.at(i, j) - m.at(j, i)) <= tol * std::max(1.0, max_abs),
              Errc::not_symmetric, "sym_eigen: matrix is not symmetric");

  Matrix a = m;
  Matrix v = Matrix::identity(n);
  const double target = tol * std::max(m.frobenius(), 1e-300);

  auto offdiag = [&]() {
    KahanSum s;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s.add(2.0 * a.at(i, j) * a.at(i, j));
    return std::sqrt(s.value());
  };

  int sweep = 0;
  while (offdiag() > target) {
    require(++sweep <= 100, Errc::no_convergence, "sym_eigen: no convergence in 100 sweeps");
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        double apq = a.at(p, q);
        if (apq == 0.0) continue;
        double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
        double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double vkp = v.at(k, p), vkq = v.at(k, q);
          v.at(k, p) = c * vkp - s * vkq;
          v.at(k, q) = s * vkp + c * vkq;
        }
      }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a.at(i, i) > a.at(j, j); });

  EigenDecomposition out;
  out.values.resize(n);
  out.vectors = Matrix(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a.at(order[k], order[k]);
    for (std::size_t i = 0; i < n; ++i) out.vectors.at(i, k) = v.at(i, order[k]);
  }
  return out;
}

// Symmetric PSD square root via eigendecomposition. Eigenvalues in
// [-threshold, 0) are clamped to 0 where threshold = clamp * max(1, lambda_max);
// anything more negative is a genuine negative eigenvalue and raises.
inline Matrix sqrtm_psd(const Matrix& m, double clamp = 1e-10) {
  EigenDecomposition eig = sym_eigen(m);
  const std::size_t n = m.rows;
  double lampax = 0.0;
  for (double l : eig.values) lampax = std::max(lampax, std::abs(l));
  const double threshold = clamp * std::max(1.0, lampax);
  Vector roots(n);
  for (std::size_t k = 0; k < n; ++k) {
    double l = eig.values[k];
    require(l >= -threshold, Errc::negative_eigenvalue,
            "sqrtm_psd: negative eigenvalue " + std::to_string(l));
    roots[k] = std::sqrt(std::max(l, 0.0));
  }
  Matrix s(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      KahanSum acc;
      for (std::size_t k = 0; k < n; ++k)
        acc.add(eig.vectors.at(i, k) * roots[k] * eig.vectors.at(j, k));
      s.at(i, j) = acc.value();
      s.at(j, i) = s.at(i, j);
    }
  return s;
}

struct MeanCov {
  Vector mean;
  Matrix cov;
};

// Two-pass column mean and unbiased (n-1) covariance; cov[i][j] is computed
// once for i <= j and mirrored bit-exactly.
inline MeanCov mean_and_cov(const Matrix& samples) {
  require(samples.rows >= 2, Errc::too_few_samples, "mean_and_cov: need at least 2 samples");
  const std::size_t n = samples.rows, d = samples.cols;
  MeanCov out;
  out.mean.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    KahanSum s;
    for (std::size_t i = 0; i < n; ++i) s.add(samples.at(i, j));
    out.mean[j] = s.value() / static_cast<double>(n);
  }
  out.cov = Matrix(d, d);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t k = j; k < d; ++k) {
      KahanSum s;
      for (std::size_t i = 0; i < n; ++i)
        s.add((samples.at(i, j) - out.mean[j]) * (samples.at(i, k) - out.mean[k]));
      double c = s.value() / static_cast<double>(n - 1);
      out.cov.at(j, k) = c;
      out.cov.at(k, j) = c;
    }
  return out;
}

}  // namespace cfeval
