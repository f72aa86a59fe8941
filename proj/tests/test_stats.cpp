#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "kdiff/stats.hpp"

using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("normal_cdf matches tabulated reference values") {
  // Reference values to 15+ digits (standard normal distribution).
  CHECK_THAT(kdiff::normal_cdf(0.0), WithinAbs(0.5, 1e-15));
  CHECK_THAT(kdiff::normal_cdf(1.0), WithinRel(0.841344746068542949, 1e-12));
  CHECK_THAT(kdiff::normal_cdf(1.959963984540054), WithinRel(0.975, 1e-12));
  CHECK_THAT(kdiff::normal_cdf(-1.959963984540054), WithinRel(0.025, 1e-12));
  CHECK_THAT(kdiff::normal_cdf(3.0), WithinRel(0.998650101968369906, 1e-12));
}

TEST_CASE("normal_quantile inverts normal_cdf") {
  CHECK_THAT(kdiff::normal_quantile(0.975), WithinRel(1.959963984540054, 1e-9));
  CHECK_THAT(kdiff::normal_quantile(0.5), WithinAbs(0.0, 1e-12));
  CHECK_THAT(kdiff::normal_quantile(0.05), WithinRel(-1.6448536269514722, 1e-9));
  for (double p : {0.001, 0.01, 0.2, 0.5, 0.8, 0.99, 0.999})
    CHECK_THAT(kdiff::normal_cdf(kdiff::normal_quantile(p)), WithinAbs(p, 1e-10));
}

TEST_CASE("chi-squared(1) cdf and quantile agree with references") {
  CHECK_THAT(kdiff::chi2_cdf_1(3.841458820694124), WithinRel(0.95, 1e-10));
  CHECK_THAT(kdiff::chi2_quantile_1(0.95), WithinRel(3.841458820694124, 1e-8));
  CHECK_THAT(kdiff::chi2_cdf_1(6.634896601021215), WithinRel(0.99, 1e-10));
  for (double w : {0.1, 1.0, 2.5, 7.0})
    CHECK_THAT(kdiff::chi2_quantile_1(kdiff::chi2_cdf_1(w)), WithinRel(w, 1e-8));
}

TEST_CASE("ks_uniform_distance computes the exact KS statistic") {
  // Single point at 0.5: sup |F_n - F| = 0.5 attained on either side.
  CHECK_THAT(kdiff::ks_uniform_distance(std::vector<double>{0.5}), WithinAbs(0.5, 1e-15));
  // {0.1, 0.9}: ECDF jumps at 0.1 (to 0.5) and 0.9 (to 1.0); D = 0.4.
  CHECK_THAT(kdiff::ks_uniform_distance(std::vector<double>{0.1, 0.9}),
             WithinAbs(0.4, 1e-15));
  // A perfectly spaced grid i/(n+1) has small distance.
  std::vector<double> grid;
  for (int i = 1; i <= 99; ++i) grid.push_back(i / 100.0);
  CHECK(kdiff::ks_uniform_distance(grid) < 0.02);
}
