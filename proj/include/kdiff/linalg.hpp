#pragma once

// Small dense linear algebra for the regression stages.
//
// Designs here have at most a handful of regressors, so everything is plain
// normal-equations with a Cholesky solve; no external matrix library.

#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "kdiff/common.hpp"

namespace kdiff {

// Row-major dense matrix, sized at construction.
template <typename Scalar = double>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, Scalar fill = Scalar{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Scalar& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  const Scalar& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::span<Scalar> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const Scalar> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<Scalar> data_;
};

// Cholesky factorization A = L L' of a symmetric positive-definite matrix.
// Throws numeric_error if A is (numerically) singular.
inline Matrix<double> cholesky(const Matrix<double>& a) {
  const std::size_t n = a.rows();
  Matrix<double> l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0) || !std::isfinite(d))
      throw numeric_error("cholesky: matrix not positive definite (singular design?)");
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

// Solve A x = b given the Cholesky factor L of A.
inline std::vector<double> cholesky_solve(const Matrix<double>& l,
                                          std::span<const double> b) {
  const std::size_t n = l.rows();
  std::vector<double> y(n), x(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
    y[i] = s / l(i, i);
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
    x[ii] = s / l(ii, ii);
  }
  return x;
}

// Inverse of a symmetric positive-definite matrix via its Cholesky factor.
inline Matrix<double> spd_inverse(const Matrix<double>& a) {
  const auto l = cholesky(a);
  const std::size_t n = a.rows();
  Matrix<double> inv(n, n);
  std::vector<double> e(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    const auto col = cholesky_solve(l, e);
    e[j] = 0.0;
    for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
  }
  return inv;
}

// Ordinary least squares y = X b + u.
struct OlsFit {
  std::vector<double> beta;
  std::vector<double> residuals;
  Matrix<double> xtx_inv;
  double ssr = 0.0;  // sum of squared residuals
  double r2 = 0.0;
  std::size_t n = 0;
  std::size_t k = 0;
};

inline OlsFit ols(const Matrix<double>& x, std::span<const double> y) {
  const std::size_t n = x.rows(), k = x.cols();
  if (y.size() != n) throw validation_error("ols: row-count mismatch");
  if (n < k) throw numeric_error("ols: fewer observations than regressors");
  Matrix<double> xtx(k, k);
  std::vector<double> xty(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto xi = x.row(i);
    for (std::size_t a = 0; a < k; ++a) {
      xty[a] += xi[a] * y[i];
      for (std::size_t b = a; b < k; ++b) xtx(a, b) += xi[a] * xi[b];
    }
  }
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < a; ++b) xtx(a, b) = xtx(b, a);

  OlsFit fit;
  fit.n = n;
  fit.k = k;
  fit.xtx_inv = spd_inverse(xtx);
  fit.beta.assign(k, 0.0);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) fit.beta[a] += fit.xtx_inv(a, b) * xty[b];

  fit.residuals.resize(n);
  double ybar = 0.0;
  for (std::size_t i = 0; i < n; ++i) ybar += y[i];
  ybar /= static_cast<double>(n);
  double tss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double fitted = 0.0;
    const auto xi = x.row(i);
    for (std::size_t a = 0; a < k; ++a) fitted += xi[a] * fit.beta[a];
    fit.residuals[i] = y[i] - fitted;
    fit.ssr += fit.residuals[i] * fit.residuals[i];
    tss += (y[i] - ybar) * (y[i] - ybar);
  }
  fit.r2 = tss > 0.0 ? 1.0 - fit.ssr / tss : 0.0;
  return fit;
}

// Cluster-robust (sandwich) covariance of OLS coefficients:
// (X'X)^{-1} (sum_g X_g' u_g u_g' X_g) (X'X)^{-1} * G/(G-1).
// Clusters may appear in any order. Throws if fewer than 2 clusters.
struct ClusteredCovariance {
  Matrix<double> vcov;
  std::vector<double> se;
  std::size_t n_clusters = 0;
  double small_sample_factor = 1.0;  // G/(G-1)
};

inline ClusteredCovariance clustered_covariance(const Matrix<double>& x,
                                                std::span<const double> residuals,
                                                std::span<const int> clusters,
                                                const Matrix<double>& xtx_inv) {
  const std::size_t n = x.rows(), k = x.cols();
  if (residuals.size() != n || clusters.size() != n)
    throw validation_error("clustered_covariance: size mismatch");
  // Accumulate per-cluster score sums X_g' u_g.
  std::map<int, std::vector<double>> scores;
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = scores.try_emplace(clusters[i], std::vector<double>(k, 0.0)).first->second;
    const auto xi = x.row(i);
    for (std::size_t a = 0; a < k; ++a) s[a] += xi[a] * residuals[i];
  }
  const std::size_t g = scores.size();
  if (g < 2) throw numeric_error("clustered_covariance: need >= 2 clusters");
  Matrix<double> meat(k, k);
  for (const auto& [id, s] : scores)
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) meat(a, b) += s[a] * s[b];
  const double factor = static_cast<double>(g) / static_cast<double>(g - 1);
  ClusteredCovariance out;
  out.n_clusters = g;
  out.small_sample_factor = factor;
  out.vcov = Matrix<double>(k, k);
  // bread * meat * bread
  Matrix<double> tmp(k, k);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b)
      for (std::size_t c = 0; c < k; ++c) tmp(a, b) += xtx_inv(a, c) * meat(c, b);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) {
      double v = 0.0;
      for (std::size_t c = 0; c < k; ++c) v += tmp(a, c) * xtx_inv(c, b);
      out.vcov(a, b) = v * factor;
    }
  out.se.resize(k);
  for (std::size_t a = 0; a < k; ++a) out.se[a] = std::sqrt(std::max(0.0, out.vcov(a, a)));
  return out;
}

}  // namespace kdiff
