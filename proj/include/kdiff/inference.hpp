#pragma once

// Inference suite: delta-method boundary SEs, hypothesis tests 1-4, the panel
// bootstrap, and the specification tests (quadratic decay, superposition,
// boundary-condition model selection).

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kdiff/bessel.hpp"
#include "kdiff/common.hpp"
#include "kdiff/estimate.hpp"
#include "kdiff/greens.hpp"
#include "kdiff/linalg.hpp"
#include "kdiff/panel.hpp"
#include "kdiff/rng.hpp"
#include "kdiff/stats.hpp"

namespace kdiff {

enum class TestId {
  SpatialBoundaryExists,
  UnifiedDynamics,
  BoundaryLocation,
  RatioConsistency,
  QuadraticSpec,
  SuperpositionSpec,
  BoundaryConditionSelect,
};

enum class NullDistribution { Normal, Chi2_1, ModelScore };

struct TestReport {
  TestId test_id = TestId::SpatialBoundaryExists;
  double statistic = 0.0;
  NullDistribution null_distribution = NullDistribution::Normal;
  double p_value = 1.0;
  double alpha = 0.05;
  bool reject = false;
  bool skipped = false;      // e.g. superposition test with <2 active sources
  std::string note;
  std::map<std::string, double> extras;
};

inline const char* test_id_name(TestId id) {
  switch (id) {
    case TestId::SpatialBoundaryExists: return "SpatialBoundaryExists";
    case TestId::UnifiedDynamics: return "UnifiedDynamics";
    case TestId::BoundaryLocation: return "BoundaryLocation";
    case TestId::RatioConsistency: return "RatioConsistency";
    case TestId::QuadraticSpec: return "QuadraticSpec";
    case TestId::SuperpositionSpec: return "SuperpositionSpec";
    case TestId::BoundaryConditionSelect: return "BoundaryConditionSelect";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Delta method for the boundaries. d* = ln(1/eps_s)/kappa_s and
// tau* = ln(1/eps_t)/delta, so the gradients are -ln(1/eps_s)/kappa_s^2 and
// -ln(1/eps_t)/delta^2. The two slopes come from disjoint regression samples
// (untreated vs treated observations), so the ratio variance treats them as
// independent.
// ---------------------------------------------------------------------------
struct BoundarySes {
  double d_star = 0.0;
  double tau_star = 0.0;
  double ratio = 0.0;
};

inline BoundarySes delta_method_boundaries(const EstimationResult& r) {
  if (r.decay_violated || !(r.kappa_s > 0.0) || !(r.delta > 0.0))
    throw decay_violation("delta_method_boundaries: requires positive decay estimates");
  const double ls = std::log(1.0 / r.config.eps_s);
  const double lt = std::log(1.0 / r.config.eps_t);
  BoundarySes out;
  out.d_star = ls / (r.kappa_s * r.kappa_s) * r.kappa_s_se;
  out.tau_star = lt / (r.delta * r.delta) * r.delta_se;
  // ratio = (ls/lt) * delta / kappa_s
  const double c = ls / lt;
  const double dr_dd = c / r.kappa_s;
  const double dr_dk = -c * r.delta / (r.kappa_s * r.kappa_s);
  out.ratio = std::sqrt(dr_dd * dr_dd * r.delta_se * r.delta_se +
                        dr_dk * dr_dk * r.kappa_s_se * r.kappa_s_se);
  return out;
}

// ---------------------------------------------------------------------------
// Test 1: H0 kappa_s = 0 (no spatial boundary), one-sided t against positive
// decay.
// ---------------------------------------------------------------------------
inline TestReport test_boundary_exists(double kappa_s, double se, double alpha = 0.05) {
  if (!(se > 0.0)) throw validation_error("test_boundary_exists: se > 0 required");
  TestReport r;
  r.test_id = TestId::SpatialBoundaryExists;
  r.null_distribution = NullDistribution::Normal;
  r.alpha = alpha;
  r.statistic = kappa_s / se;
  r.p_value = 1.0 - normal_cdf(r.statistic);
  r.reject = r.p_value < alpha;
  return r;
}

// Test 3: H0 d* = d0, Wald against chi2_1.
inline TestReport test_boundary_location(double d_star, double se, double d0,
                                         double alpha = 0.05) {
  if (!(se > 0.0)) throw validation_error("test_boundary_location: se > 0 required");
  TestReport r;
  r.test_id = TestId::BoundaryLocation;
  r.null_distribution = NullDistribution::Chi2_1;
  r.alpha = alpha;
  const double z = (d_star - d0) / se;
  r.statistic = z * z;
  r.p_value = 1.0 - chi2_cdf_1(r.statistic);
  r.reject = r.p_value < alpha;
  return r;
}

// ---------------------------------------------------------------------------
// Panel bootstrap: resample units with replacement, re-run the full pipeline
// per replicate. Deterministic given (seed, B) regardless of evaluation
// order; failed replicates (no treated units drawn, stage failures, decay
// violations) are dropped and counted.
// ---------------------------------------------------------------------------
struct ParamInterval {
  double sd = 0.0;
  double lo = 0.0;   // 2.5th percentile
  double hi = 0.0;   // 97.5th percentile
};

struct BootstrapResult {
  int B = 0;
  int n_failed = 0;
  std::map<std::string, ParamInterval> params;
  std::map<std::string, std::vector<double>> draws;  // successful replicates only
};

inline PanelDataset resample_units(const PanelDataset& data, Rng& rng) {
  const std::size_t n = data.n_units();
  PanelDataset out;
  out.n_periods = data.n_periods;
  out.domain = data.domain;
  for (std::size_t k = 0; k < n; ++k) {
    const auto i = static_cast<std::size_t>(rng.below(n));
    const auto& u = data.units[i];
    const int new_id = static_cast<int>(k);
    out.units.push_back({new_id, u.x, u.y});
    const auto adopt = data.schedule.adoption_time.find(u.unit_id);
    if (adopt != data.schedule.adoption_time.end()) {
      out.schedule.treated_set.insert(new_id);
      out.schedule.adoption_time[new_id] = adopt->second;
    }
    for (int t = 1; t <= data.n_periods; ++t) {
      auto o = data.at(i, t);
      o.unit_id = new_id;
      out.obs.push_back(o);
    }
  }
  out.revalidate();
  return out;
}

namespace detail {

inline ParamInterval summarize_draws(std::vector<double> v) {
  ParamInterval p;
  if (v.empty()) return p;
  std::sort(v.begin(), v.end());
  const auto m = v.size();
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(m);
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  p.sd = m > 1 ? std::sqrt(var / static_cast<double>(m - 1)) : 0.0;
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(m - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    return lo + 1 < m ? v[lo] * (1.0 - frac) + v[lo + 1] * frac : v[lo];
  };
  p.lo = quantile(0.025);
  p.hi = quantile(0.975);
  return p;
}

}  // namespace detail

inline BootstrapResult panel_bootstrap(const PanelDataset& data, int B,
                                       std::uint64_t seed, StageConfig cfg = {},
                                       double beta = 1.0) {
  if (B < 1) throw validation_error("panel_bootstrap: B >= 1 required");
  BootstrapResult out;
  out.B = B;
  const char* names[] = {"delta", "lambda", "kappa", "kappa_s", "d_star", "tau_star",
                         "ratio"};
  for (const char* nm : names) out.draws[nm] = {};
  // Collect per-replicate rows first (indexed by r) so the reduction is
  // independent of evaluation order / thread count.
  std::vector<std::optional<EstimationResult>> rows(B);
  for (int r = 0; r < B; ++r) {
    Rng rng(seed, /*stream=*/0xB007, /*substream=*/static_cast<std::uint64_t>(r));
    try {
      const auto boot = resample_units(data, rng);
      auto est = run_pipeline(boot, cfg, beta);
      if (est.decay_violated) continue;  // left as nullopt -> failed
      rows[r] = std::move(est);
    } catch (const numeric_error&) {
    } catch (const validation_error&) {
    }
  }
  for (const auto& row : rows) {
    if (!row) {
      ++out.n_failed;
      continue;
    }
    out.draws["delta"].push_back(row->delta);
    out.draws["lambda"].push_back(row->lambda);
    out.draws["kappa"].push_back(row->kappa);
    out.draws["kappa_s"].push_back(row->kappa_s);
    out.draws["d_star"].push_back(row->d_star);
    out.draws["tau_star"].push_back(row->tau_star);
    out.draws["ratio"].push_back(row->ratio);
  }
  for (const char* nm : names) out.params[nm] = detail::summarize_draws(out.draws[nm]);
  return out;
}

// ---------------------------------------------------------------------------
// Test 4: ratio consistency, W = (d*/tau* - (ln10/ln2) lambda sqrt(delta))^2 / V.
//
// Under the fixed-threshold convention the numerator is identically zero
// (the ratio identity is algebraic), so that mode reports W = 0. The
// empirical-threshold mode re-derives the boundaries from quadratic-augmented
// decay fits (the "statistical significance" boundary reading): the boundary
// is the first distance/lag at which the fitted curve has dropped by
// ln(1/eps) from its intercept, which no longer cancels algebraically. The
// variance of the gap comes from the panel bootstrap.
// ---------------------------------------------------------------------------
enum class RatioTestMode { Algebraic, EmpiricalThreshold };

namespace detail {

// Smallest positive x with b1 x + b2 x^2 = L (L = ln eps < 0); linear
// fallback when the quadratic term is negligible or yields no positive root.
inline double quadratic_threshold_crossing(double b1, double b2, double log_eps) {
  if (!(log_eps < 0.0))
    throw validation_error("quadratic_threshold_crossing: log_eps must be negative");
  const double lin = b1 < 0.0 ? log_eps / b1 : std::numeric_limits<double>::quiet_NaN();
  if (std::fabs(b2) < 1e-14) return lin;
  const double disc = b1 * b1 + 4.0 * b2 * log_eps;
  if (disc < 0.0) return lin;
  const double s = std::sqrt(disc);
  const double r1 = (-b1 - s) / (2.0 * b2);
  const double r2 = (-b1 + s) / (2.0 * b2);
  double best = std::numeric_limits<double>::infinity();
  if (r1 > 0.0) best = std::min(best, r1);
  if (r2 > 0.0) best = std::min(best, r2);
  return std::isfinite(best) ? best : lin;
}

// Quadratic-augmented refit of a stage sample; returns (b1, b2) on x, x^2.
inline std::pair<double, double> quadratic_refit(const StageSample& s) {
  const std::size_t n = s.y.size();
  if (n < 10) throw numeric_error("quadratic_refit: insufficient data");
  Matrix<double> x(n, 3);
  for (std::size_t i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = s.x[i];
    x(i, 2) = s.x[i] * s.x[i];
  }
  const auto fit = ols(x, s.y);
  return {fit.beta[1], fit.beta[2]};
}

// Empirical-threshold ratio gap g = d*_emp/tau*_emp - (ln10/ln2) lambda sqrt(delta)
// for an already-estimated result.
inline double empirical_ratio_gap(const EstimationResult& r) {
  const auto [s1, s2q] = quadratic_refit(r.stage2.sample);
  const auto [t1, t2q] = quadratic_refit(r.stage3.sample);
  const double d_emp =
      quadratic_threshold_crossing(s1, s2q, std::log(r.config.eps_s));
  const double t_emp =
      quadratic_threshold_crossing(t1, t2q, std::log(r.config.eps_t));
  if (!std::isfinite(d_emp) || !std::isfinite(t_emp) || !(t_emp > 0.0))
    throw numeric_error("empirical_ratio_gap: no positive threshold crossing");
  return d_emp / t_emp - kRatioConst * r.lambda * std::sqrt(r.delta);
}

}  // namespace detail

inline TestReport test_ratio_consistency(const PanelDataset& data,
                                         const EstimationResult& result,
                                         RatioTestMode mode = RatioTestMode::Algebraic,
                                         int bootstrap_B = 99, std::uint64_t seed = 1,
                                         double alpha = 0.05) {
  TestReport r;
  r.test_id = TestId::RatioConsistency;
  r.null_distribution = NullDistribution::Chi2_1;
  r.alpha = alpha;
  if (result.decay_violated)
    throw decay_violation("test_ratio_consistency: decay-violated estimate");
  if (mode == RatioTestMode::Algebraic) {
    // d*/tau* = (ln10/ln2) lambda-hat sqrt(delta-hat) holds as an identity
    // under fixed thresholds; report the (zero) gap for transparency.
    r.statistic = 0.0;
    r.p_value = 1.0;
    r.reject = false;
    r.note = "fixed-threshold convention: ratio identity holds algebraically";
    r.extras["gap"] = result.ratio - result.ratio_theory;
    return r;
  }
  const double gap = detail::empirical_ratio_gap(result);
  // Bootstrap the gap: re-estimate and re-derive empirical thresholds per
  // resample.
  std::vector<double> gaps;
  int failed = 0;
  for (int b = 0; b < bootstrap_B; ++b) {
    Rng rng(seed, /*stream=*/0xB007, /*substream=*/static_cast<std::uint64_t>(b));
    try {
      const auto boot = resample_units(data, rng);
      const auto est = run_pipeline(boot, result.config);
      if (est.decay_violated) { ++failed; continue; }
      gaps.push_back(detail::empirical_ratio_gap(est));
    } catch (const numeric_error&) {
      ++failed;
    }
  }
  if (gaps.size() < 10)
    throw numeric_error("test_ratio_consistency: too few successful bootstrap "
                        "replicates for the gap variance");
  double mean = 0.0;
  for (double g : gaps) mean += g;
  mean /= static_cast<double>(gaps.size());
  double var = 0.0;
  for (double g : gaps) var += (g - mean) * (g - mean);
  var /= static_cast<double>(gaps.size() - 1);
  if (!(var > 0.0)) throw numeric_error("test_ratio_consistency: degenerate variance");
  r.statistic = gap * gap / var;
  r.p_value = 1.0 - chi2_cdf_1(r.statistic);
  r.reject = r.p_value < alpha;
  r.note = "empirical-threshold mode; bootstrap variance, B = " +
           std::to_string(bootstrap_B) + ", failed = " + std::to_string(failed);
  r.extras["gap"] = gap;
  r.extras["gap_sd"] = std::sqrt(var);
  return r;
}

// ---------------------------------------------------------------------------
// Test 2: unified vs separate decay dynamics, as a BIC comparison under a
// Gaussian pseudo-likelihood. The unified model asserts one diffusion process
// generates both decay curves, which restricts the spatial and temporal
// log-residual dispersions to a common sigma (5 parameters: two intercepts,
// two slopes, one sigma); the separate model gives each curve its own sigma
// (6 parameters). The models are non-nested in the mean, so a BIC score
// difference is reported rather than an LR statistic.
// ---------------------------------------------------------------------------
inline TestReport test_unified_dynamics(const EstimationResult& result,
                                        double alpha = 0.05) {
  const auto& s2 = result.stage2;
  const auto& s3 = result.stage3;
  const double n2 = static_cast<double>(s2.n_obs), n3 = static_cast<double>(s3.n_obs);
  const double n = n2 + n3;
  const double ssr2 = s2.resid_var * n2, ssr3 = s3.resid_var * n3;
  if (!(ssr2 > 0.0) || !(ssr3 > 0.0))
    throw numeric_error("test_unified_dynamics: degenerate stage fit");

  auto gauss_nll = [](double nn, double sigma2) {
    return 0.5 * nn * (std::log(2.0 * kPi * sigma2) + 1.0);
  };
  // Unified: pooled sigma^2 over both samples' own-mean residuals.
  const double sig_u = (ssr2 + ssr3) / n;
  const double bic_unified = 2.0 * gauss_nll(n, sig_u) + 5.0 * std::log(n);
  // Separate: per-curve sigma^2.
  const double bic_separate =
      2.0 * (gauss_nll(n2, ssr2 / n2) + gauss_nll(n3, ssr3 / n3)) + 6.0 * std::log(n);

  TestReport r;
  r.test_id = TestId::UnifiedDynamics;
  r.null_distribution = NullDistribution::ModelScore;
  r.alpha = alpha;
  r.statistic = bic_separate - bic_unified;  // > 0 favors unified
  r.p_value = 1.0;
  r.reject = false;
  r.extras["bic_unified"] = bic_unified;
  r.extras["bic_separate"] = bic_separate;
  if (std::fabs(r.statistic) < 1e-9)
    r.note = "tie: unified and separate models score identically";
  else
    r.note = r.statistic > 0.0 ? "unified model preferred (lower BIC)"
                               : "separate models preferred (lower BIC)";
  return r;
}

// ---------------------------------------------------------------------------
// Specification test 1: augment Stage 2 with d^2; Wald test on the
// quadratic coefficient with unit-clustered SE. Exponential decay implies a
// zero quadratic term in logs.
// ---------------------------------------------------------------------------
inline TestReport spec_test_quadratic(const StageSample& s, double alpha = 0.05) {
  const std::size_t n = s.y.size();
  if (n < 10) throw numeric_error("spec_test_quadratic: insufficient data");
  Matrix<double> x(n, 3);
  for (std::size_t i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = s.x[i];
    x(i, 2) = s.x[i] * s.x[i];
  }
  const auto fit = ols(x, s.y);
  const auto cv = clustered_covariance(x, fit.residuals, s.cluster, fit.xtx_inv);
  if (!(cv.se[2] > 0.0))
    throw numeric_error("spec_test_quadratic: degenerate quadratic SE");
  TestReport r;
  r.test_id = TestId::QuadraticSpec;
  r.null_distribution = NullDistribution::Chi2_1;
  r.alpha = alpha;
  const double t = fit.beta[2] / cv.se[2];
  r.statistic = t * t;
  r.p_value = 1.0 - chi2_cdf_1(r.statistic);
  r.reject = r.p_value < alpha;
  r.extras["kappa2"] = fit.beta[2];
  r.extras["kappa2_se"] = cv.se[2];
  return r;
}

// ---------------------------------------------------------------------------
// Specification test 2: superposition. For untreated observations whose unit
// sees >= 2 active sources, regress the residualized outcome on the
// superposed exposure S_it = sum_j exp(-kappa_s d_ij) over active sources and
// a pairwise interaction term P_it = sum_{j<k} exp(-kappa_s d_ij) exp(-kappa_s
// d_ik); linear superposition implies the interaction coefficient is zero.
// Reported as skipped when no unit ever sees two active sources.
// ---------------------------------------------------------------------------
inline TestReport spec_test_superposition(const PanelDataset& data,
                                          const Matrix<double>& resid, double kappa_s,
                                          double alpha = 0.05) {
  if (!(kappa_s > 0.0))
    throw validation_error("spec_test_superposition: kappa_s > 0 required");
  std::map<int, std::size_t> index;
  for (std::size_t i = 0; i < data.n_units(); ++i) index[data.units[i].unit_id] = i;
  const auto dmat = pairwise_distances(data.units);

  std::vector<double> y;
  std::vector<int> cluster;
  std::vector<double> sup, inter;
  for (std::size_t i = 0; i < data.n_units(); ++i) {
    for (int t = 1; t <= data.n_periods; ++t) {
      const auto& o = data.at(i, t);
      if (o.treated) continue;
      // Active sources at t.
      std::vector<double> g;
      for (int j_id : data.schedule.treated_set) {
        if (t < data.schedule.adoption_time.at(j_id)) continue;
        const auto j = index.at(j_id);
        if (j == i) continue;
        g.push_back(std::exp(-kappa_s * dmat(i, j)));
      }
      if (g.size() < 2) continue;
      double s = 0.0, p = 0.0;
      for (std::size_t a = 0; a < g.size(); ++a) {
        s += g[a];
        for (std::size_t b = a + 1; b < g.size(); ++b) p += g[a] * g[b];
      }
      y.push_back(resid(i, t - 1));
      cluster.push_back(static_cast<int>(i));
      sup.push_back(s);
      inter.push_back(p);
    }
  }

  TestReport r;
  r.test_id = TestId::SuperpositionSpec;
  r.null_distribution = NullDistribution::Chi2_1;
  r.alpha = alpha;
  if (y.size() < 10) {
    r.skipped = true;
    r.note = "inapplicable: fewer than 10 observations with >= 2 active sources";
    return r;
  }
  const std::size_t n = y.size();
  Matrix<double> x(n, 3);
  for (std::size_t i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = sup[i];
    x(i, 2) = inter[i];
  }
  const auto fit = ols(x, y);
  const auto cv = clustered_covariance(x, fit.residuals, cluster, fit.xtx_inv);
  if (!(cv.se[2] > 0.0)) {
    r.skipped = true;
    r.note = "inapplicable: degenerate interaction regressor";
    return r;
  }
  const double t = fit.beta[2] / cv.se[2];
  r.statistic = t * t;
  r.p_value = 1.0 - chi2_cdf_1(r.statistic);
  r.reject = r.p_value < alpha;
  r.extras["interaction"] = fit.beta[2];
  r.extras["interaction_se"] = cv.se[2];
  return r;
}

// ---------------------------------------------------------------------------
// Specification test 3: boundary-condition model selection. Fits three decay
// profiles to the Stage-2 log-residual sample:
//   Unbounded:  ln mu(d) = c - kappa d
//   Dirichlet:  ln mu(d) = c - kappa d + ln[ G_D(x, x_src) / G_unb(d) ]
//   Neumann:    ln mu(d) = c - kappa d + ln[ G_N(x, x_src) / G_unb(d) ]
// where the suppression/enhancement ratios use the declared rectangular
// domain with Green's parameters (delta = kappa^2, lambda = 1), so the
// far-field decay rate of the profile is kappa itself. kappa is profiled over
// a grid (the intercept is concentrated out in closed form); AIC/BIC compare
// the three at equal parameter counts, ties break toward unbounded.
// ---------------------------------------------------------------------------
struct BoundaryFitConfig {
  double kappa_lo = 0.004;
  double kappa_hi = 0.03;
  double kappa_step = 0.0004;
};

struct ProfileFit {
  BoundaryCondition condition = BoundaryCondition::Unbounded;
  double kappa = 0.0;
  double intercept = 0.0;
  double ssr = 0.0;
  double aic = 0.0;
  double bic = 0.0;
};

struct BoundarySelection {
  ProfileFit unbounded, dirichlet, neumann;
  BoundaryCondition selected = BoundaryCondition::Unbounded;
  std::size_t n_obs = 0;
};

namespace detail {

struct ProfileRow {
  double y = 0.0;
  double d = 0.0;
  int unit = 0;  // index into the unit-geometry cache
};

inline void score_profile(ProfileFit& f, std::size_t n, int k) {
  const double sigma2 = f.ssr / static_cast<double>(n);
  const double nll = 0.5 * static_cast<double>(n) * (std::log(2.0 * kPi * sigma2) + 1.0);
  f.aic = 2.0 * nll + 2.0 * k;
  f.bic = 2.0 * nll + k * std::log(static_cast<double>(n));
}

}  // namespace detail

inline BoundarySelection fit_boundary_profiles(const PanelDataset& data,
                                               const Matrix<double>& resid,
                                               StageConfig cfg = {},
                                               BoundaryFitConfig bc = {}) {
  if (!data.domain)
    throw validation_error("fit_boundary_profiles: dataset declares no domain geometry");
  if (!(bc.kappa_lo > 0.0 && bc.kappa_hi > bc.kappa_lo && bc.kappa_step > 0.0))
    throw validation_error("fit_boundary_profiles: invalid kappa grid");
  if (cfg.d_min < 0.0) cfg.d_min = default_d_min(data);

  // Stage-2 masked rows with receiver/source geometry. Under any schedule the
  // relevant source is the nearest active treated unit at time t.
  std::map<int, std::size_t> index;
  for (std::size_t i = 0; i < data.n_units(); ++i) index[data.units[i].unit_id] = i;
  const auto dmat = pairwise_distances(data.units);

  std::vector<detail::ProfileRow> rows;
  // Unique (receiver, source) geometry pairs, cached so each Green's ratio is
  // evaluated once per kappa rather than once per observation.
  std::vector<std::pair<std::size_t, std::size_t>> geom;
  std::map<std::pair<std::size_t, std::size_t>, int> geom_index;
  for (std::size_t i = 0; i < data.n_units(); ++i)
    for (int t = 1; t <= data.n_periods; ++t) {
      const auto& o = data.at(i, t);
      if (o.treated || !std::isfinite(o.dist_nearest_treated)) continue;
      if (!(o.dist_nearest_treated > cfg.d_min)) continue;
      const double v = std::fabs(resid(i, t - 1));
      if (v <= kLogFloor) continue;
      // Locate the nearest active source.
      std::size_t best_j = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int j_id : data.schedule.treated_set) {
        if (t < data.schedule.adoption_time.at(j_id)) continue;
        const auto j = index.at(j_id);
        if (dmat(i, j) < best_d) {
          best_d = dmat(i, j);
          best_j = j;
        }
      }
      const auto key = std::make_pair(i, best_j);
      const auto [it, inserted] = geom_index.try_emplace(key, static_cast<int>(geom.size()));
      if (inserted) geom.push_back(key);
      rows.push_back({std::log(v), o.dist_nearest_treated, it->second});
    }
  if (rows.size() < 10)
    throw numeric_error("fit_boundary_profiles: insufficient stage-2 data");

  GreensSpec rect = *data.domain;
  rect.series_max_terms = std::max(rect.series_max_terms, 2000);

  BoundarySelection sel;
  sel.n_obs = rows.size();

  auto profile_fit = [&](BoundaryCondition cond) {
    ProfileFit best;
    best.condition = cond;
    best.ssr = std::numeric_limits<double>::infinity();
    for (double kappa = bc.kappa_lo; kappa <= bc.kappa_hi + 1e-12;
         kappa += bc.kappa_step) {
      // Per-geometry log suppression/enhancement ratio at this kappa.
      std::vector<double> lratio(geom.size(), 0.0);
      if (cond != BoundaryCondition::Unbounded) {
        DiffusionParams gp;
        gp.delta = kappa * kappa;
        gp.lambda = 1.0;
        gp.kappa = 1.0;
        GreensSpec spec = rect;
        spec.condition = cond;
        for (std::size_t g = 0; g < geom.size(); ++g) {
          const auto& r = data.units[geom[g].first];
          const auto& s = data.units[geom[g].second];
          const double gu =
              bessel_k0(kappa * std::hypot(r.x - s.x, r.y - s.y)) / (2.0 * kPi);
          const double gb = cond == BoundaryCondition::DirichletRect
                                ? greens_dirichlet_fast(r.x, r.y, s.x, s.y, spec, gp)
                                : greens_neumann_fast(r.x, r.y, s.x, s.y, spec, gp);
          lratio[g] = std::log(std::clamp(gb / gu, 1e-12, 1e12));
        }
      }
      // Concentrate the intercept: c-hat = mean(y - model), SSR follows.
      double mean_gap = 0.0;
      for (const auto& r : rows) mean_gap += r.y - (-kappa * r.d + lratio[r.unit]);
      mean_gap /= static_cast<double>(rows.size());
      double ssr = 0.0;
      for (const auto& r : rows) {
        const double e = r.y - (mean_gap - kappa * r.d + lratio[r.unit]);
        ssr += e * e;
      }
      if (ssr < best.ssr) {
        best.ssr = ssr;
        best.kappa = kappa;
        best.intercept = mean_gap;
      }
    }
    detail::score_profile(best, rows.size(), /*k=*/3);  // c, kappa, sigma
    return best;
  };

  sel.unbounded = profile_fit(BoundaryCondition::Unbounded);
  sel.dirichlet = profile_fit(BoundaryCondition::DirichletRect);
  sel.neumann = profile_fit(BoundaryCondition::NeumannRect);

  // Argmin BIC; ties (within 1e-9) break toward unbounded, which is listed
  // first.
  const ProfileFit* fits[] = {&sel.unbounded, &sel.dirichlet, &sel.neumann};
  const ProfileFit* win = fits[0];
  for (const auto* f : fits)
    if (f->bic < win->bic - 1e-9) win = f;
  sel.selected = win->condition;
  return sel;
}

inline TestReport select_boundary_condition(const PanelDataset& data,
                                            StageConfig cfg = {},
                                            BoundaryFitConfig bc = {}) {
  const auto s1 = stage1_twfe(data);
  const auto sel = fit_boundary_profiles(data, s1.resid, cfg, bc);
  TestReport r;
  r.test_id = TestId::BoundaryConditionSelect;
  r.null_distribution = NullDistribution::ModelScore;
  r.p_value = 1.0;
  r.reject = false;
  r.statistic = std::min(sel.dirichlet.bic, sel.neumann.bic) - sel.unbounded.bic;
  r.extras["aic_unbounded"] = sel.unbounded.aic;
  r.extras["aic_dirichlet"] = sel.dirichlet.aic;
  r.extras["aic_neumann"] = sel.neumann.aic;
  r.extras["bic_unbounded"] = sel.unbounded.bic;
  r.extras["bic_dirichlet"] = sel.dirichlet.bic;
  r.extras["bic_neumann"] = sel.neumann.bic;
  r.extras["kappa_unbounded"] = sel.unbounded.kappa;
  r.extras["kappa_dirichlet"] = sel.dirichlet.kappa;
  r.extras["kappa_neumann"] = sel.neumann.kappa;
  switch (sel.selected) {
    case BoundaryCondition::Unbounded: r.note = "selected: unbounded"; break;
    case BoundaryCondition::DirichletRect: r.note = "selected: dirichlet"; break;
    case BoundaryCondition::NeumannRect: r.note = "selected: neumann"; break;
  }
  return r;
}

}  // namespace kdiff
