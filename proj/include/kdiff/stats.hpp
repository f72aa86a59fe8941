#pragma once

// Normal and chi-squared distribution functions, implemented internally so
// the inference module has no external statistics dependency.

#include <algorithm>
#include <cmath>
#include <limits>

#include "kdiff/common.hpp"

namespace kdiff {

inline double normal_cdf(double z) {
  // erfc-based: accurate to ~1e-15 over the usable range.
  return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

// Wichura's AS241 (PPND16): inverse normal CDF, absolute error < 1e-15.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw validation_error("normal_quantile: p must be in (0,1)");
  const double q = p - 0.5;
  double r;
  if (std::fabs(q) <= 0.425) {
    r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
               1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
             1.3314166789178437745e2) * r + 3.3871328727963666080e0) /
           (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
               5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
             4.2313330701600911252e1) * r + 1.0);
  }
  r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
              3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
            4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
          (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
              6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
            2.05319162663775882187e0) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
              2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
            5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
          (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
              1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
            5.99832206555887937690e-1) * r + 1.0);
  }
  return q < 0.0 ? -val : val;
}

// Chi-squared with 1 degree of freedom (the only case the tests need):
// P(W <= w) = 2*Phi(sqrt(w)) - 1.
inline double chi2_cdf_1(double w) {
  if (w < 0.0) return 0.0;
  return 2.0 * normal_cdf(std::sqrt(w)) - 1.0;
}

inline double chi2_quantile_1(double p) {
  const double z = normal_quantile(0.5 * (1.0 + p));
  return z * z;
}

// Kolmogorov-Smirnov distance of a sample from Uniform[0,1]; used by the
// p-value-uniformity invariant tests.
template <typename Container>
double ks_uniform_distance(Container sample) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double lo = static_cast<double>(i) / n;
    const double hi = static_cast<double>(i + 1) / n;
    d = std::max(d, std::max(std::fabs(sample[i] - lo), std::fabs(sample[i] - hi)));
  }
  return d;
}

}  // namespace kdiff
