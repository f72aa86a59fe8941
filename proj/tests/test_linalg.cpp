#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <vector>

#include "kdiff/linalg.hpp"
#include "kdiff/rng.hpp"

using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;
using kdiff::Matrix;

TEST_CASE("cholesky factors a hand-computed SPD matrix") {
  // A = L L' with L = [[2,0],[1,3]] -> A = [[4,2],[2,10]].
  Matrix<double> a(2, 2);
  a(0, 0) = 4;
  a(0, 1) = a(1, 0) = 2;
  a(1, 1) = 10;
  const auto l = kdiff::cholesky(a);
  CHECK_THAT(l(0, 0), WithinAbs(2.0, 1e-14));
  CHECK_THAT(l(1, 0), WithinAbs(1.0, 1e-14));
  CHECK_THAT(l(1, 1), WithinAbs(3.0, 1e-14));
}

TEST_CASE("cholesky rejects a non-positive-definite matrix") {
  Matrix<double> a(2, 2);
  a(0, 0) = 1;
  a(0, 1) = a(1, 0) = 2;
  a(1, 1) = 1;  // eigenvalues 3, -1
  REQUIRE_THROWS_AS(kdiff::cholesky(a), kdiff::numeric_error);
}

TEST_CASE("spd_inverse inverts against the identity") {
  kdiff::Rng r(11, 0);
  Matrix<double> b(4, 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) b(i, j) = r.normal();
  // A = B'B + I is SPD.
  Matrix<double> a(4, 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double s = i == j ? 1.0 : 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += b(k, i) * b(k, j);
      a(i, j) = s;
    }
  const auto inv = kdiff::spd_inverse(a);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += a(i, k) * inv(k, j);
      CHECK_THAT(s, WithinAbs(i == j ? 1.0 : 0.0, 1e-10));
    }
}

TEST_CASE("ols recovers exact coefficients on noiseless data") {
  const std::size_t n = 30;
  Matrix<double> x(n, 3);
  std::vector<double> y(n);
  kdiff::Rng r(3, 0);
  for (std::size_t i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = r.normal();
    x(i, 2) = r.normal();
    y[i] = 2.0 - 1.5 * x(i, 1) + 0.25 * x(i, 2);
  }
  const auto f = kdiff::ols(x, y);
  REQUIRE(f.beta.size() == 3);
  CHECK_THAT(f.beta[0], WithinRel(2.0, 1e-10));
  CHECK_THAT(f.beta[1], WithinRel(-1.5, 1e-10));
  CHECK_THAT(f.beta[2], WithinRel(0.25, 1e-10));
  CHECK(f.ssr < 1e-18);
  CHECK_THAT(f.r2, WithinAbs(1.0, 1e-12));
}

TEST_CASE("ols matches a brute-force normal-equation solve with noise") {
  const std::size_t n = 50;
  Matrix<double> x(n, 2);
  std::vector<double> y(n);
  kdiff::Rng r(4, 0);
  for (std::size_t i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = r.normal();
    y[i] = 1.0 + 0.5 * x(i, 1) + 0.3 * r.normal();
  }
  // Closed-form simple regression.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sx += x(i, 1);
    sy += y[i];
    sxx += x(i, 1) * x(i, 1);
    sxy += x(i, 1) * y[i];
  }
  const double b1 = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double b0 = (sy - b1 * sx) / n;
  const auto f = kdiff::ols(x, y);
  CHECK_THAT(f.beta[0], WithinRel(b0, 1e-10));
  CHECK_THAT(f.beta[1], WithinRel(b1, 1e-10));
}

TEST_CASE("clustered covariance reduces to HC0 * G/(G-1) with singleton clusters") {
  const std::size_t n = 40;
  Matrix<double> x(n, 2);
  std::vector<double> y(n);
  std::vector<int> cl(n);
  kdiff::Rng r(5, 0);
  for (std::size_t i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = r.normal();
    y[i] = 0.5 * x(i, 1) + r.normal();
    cl[i] = static_cast<int>(i);
  }
  const auto f = kdiff::ols(x, y);
  const auto cc = kdiff::clustered_covariance(x, f.residuals, cl, f.xtx_inv);
  REQUIRE(cc.n_clusters == n);
  CHECK_THAT(cc.small_sample_factor, WithinRel(static_cast<double>(n) / (n - 1), 1e-14));
  // Independent HC0 computation: (X'X)^-1 X' diag(u^2) X (X'X)^-1.
  Matrix<double> meat(2, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double u2 = f.residuals[i] * f.residuals[i];
    for (std::size_t a = 0; a < 2; ++a)
      for (std::size_t b = 0; b < 2; ++b) meat(a, b) += u2 * x(i, a) * x(i, b);
  }
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 2; ++b) {
      double v = 0;
      for (std::size_t p = 0; p < 2; ++p)
        for (std::size_t q = 0; q < 2; ++q)
          v += f.xtx_inv(a, p) * meat(p, q) * f.xtx_inv(q, b);
      v *= static_cast<double>(n) / (n - 1);
      CHECK_THAT(cc.vcov(a, b), WithinRel(v, 1e-10));
    }
}

TEST_CASE("clustered covariance matches a direct score-sum computation") {
  const std::size_t n = 60;
  const int G = 6;
  Matrix<double> x(n, 2);
  std::vector<double> y(n);
  std::vector<int> cl(n);
  kdiff::Rng r(6, 0);
  std::vector<double> shock(G);
  for (auto& s : shock) s = r.normal();
  for (std::size_t i = 0; i < n; ++i) {
    const int g = static_cast<int>(i) % G;
    x(i, 0) = 1.0;
    x(i, 1) = r.normal();
    y[i] = 0.5 * x(i, 1) + shock[g] + 0.2 * r.normal();
    cl[i] = g;
  }
  const auto f = kdiff::ols(x, y);
  const auto cc = kdiff::clustered_covariance(x, f.residuals, cl, f.xtx_inv);
  REQUIRE(cc.n_clusters == static_cast<std::size_t>(G));
  // Oracle: sum over clusters of (X_g'u_g)(X_g'u_g)'.
  std::map<int, std::vector<double>> score;
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = score[cl[i]];
    s.resize(2, 0.0);
    s[0] += x(i, 0) * f.residuals[i];
    s[1] += x(i, 1) * f.residuals[i];
  }
  Matrix<double> meat(2, 2);
  for (const auto& [g, s] : score)
    for (std::size_t a = 0; a < 2; ++a)
      for (std::size_t b = 0; b < 2; ++b) meat(a, b) += s[a] * s[b];
  const double factor = static_cast<double>(G) / (G - 1);
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 2; ++b) {
      double v = 0;
      for (std::size_t p = 0; p < 2; ++p)
        for (std::size_t q = 0; q < 2; ++q)
          v += f.xtx_inv(a, p) * meat(p, q) * f.xtx_inv(q, b);
      CHECK_THAT(cc.vcov(a, b), WithinRel(factor * v, 1e-10));
    }
  CHECK_THAT(cc.se[1], WithinRel(std::sqrt(cc.vcov(1, 1)), 1e-14));
}
