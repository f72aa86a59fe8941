#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "kdiff/estimate.hpp"
#include "kdiff/inference.hpp"
#include "kdiff/montecarlo.hpp"
#include "kdiff/rng.hpp"
#include "kdiff/simulate.hpp"
#include "kdiff/stats.hpp"

using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;
using namespace kdiff;

namespace {

EstimationResult baseline_result(std::uint64_t seed = 101, int n_units = 80) {
  PulseConfig cfg;
  cfg.n_units = n_units;
  cfg.n_treat = 5;
  cfg.seed = seed;
  const auto sim = simulate_pulse(cfg);
  return run_pipeline(sim.dataset);
}

PanelDataset baseline_panel(std::uint64_t seed = 101, int n_units = 80) {
  PulseConfig cfg;
  cfg.n_units = n_units;
  cfg.n_treat = 5;
  cfg.seed = seed;
  return simulate_pulse(cfg).dataset;
}

}  // namespace

TEST_CASE("test_boundary_exists: one-sided normal test on kappa_s") {
  const double z975 = 1.959963984540054;
  auto r = test_boundary_exists(0.01 * z975, 0.01);
  CHECK(r.test_id == TestId::SpatialBoundaryExists);
  CHECK_THAT(r.statistic, WithinRel(z975, 1e-12));
  CHECK_THAT(r.p_value, WithinRel(0.025, 1e-9));
  CHECK(r.reject);
  // One-sided: negative estimates never reject.
  auto neg = test_boundary_exists(-0.02, 0.01);
  CHECK(neg.p_value > 0.5);
  CHECK_FALSE(neg.reject);
  REQUIRE_THROWS_AS(test_boundary_exists(0.01, 0.0), validation_error);
}

TEST_CASE("test_boundary_location: Wald chi2(1) against a hypothesized d*") {
  auto r = test_boundary_location(250.0, 10.0, 230.0);  // z = 2 -> W = 4
  CHECK_THAT(r.statistic, WithinRel(4.0, 1e-12));
  CHECK_THAT(r.p_value, WithinRel(1.0 - chi2_cdf_1(4.0), 1e-12));
  CHECK(r.reject);
  auto same = test_boundary_location(230.0, 10.0, 230.0);
  CHECK_THAT(same.p_value, WithinAbs(1.0, 1e-12));
  CHECK_FALSE(same.reject);
}

TEST_CASE("delta-method boundary SEs match central finite differences") {
  const auto r = baseline_result();
  REQUIRE_FALSE(r.decay_violated);
  const auto ses = delta_method_boundaries(r);

  const double ls = std::log(1.0 / r.config.eps_s);
  const double lt = std::log(1.0 / r.config.eps_t);
  const double h = 1e-6;
  // d* depends on kappa_s only.
  const double dd = (ls / (r.kappa_s + h) - ls / (r.kappa_s - h)) / (2.0 * h);
  CHECK_THAT(ses.d_star, WithinRel(std::fabs(dd) * r.kappa_s_se, 1e-6));
  // tau* depends on delta only.
  const double dt = (lt / (r.delta + h) - lt / (r.delta - h)) / (2.0 * h);
  CHECK_THAT(ses.tau_star, WithinRel(std::fabs(dt) * r.delta_se, 1e-6));
  // ratio = (ln10/ln2) delta / kappa_s: independent stages, variances add.
  auto ratio_of = [](double delta, double ks) { return kRatioConst * delta / ks; };
  const double rk =
      (ratio_of(r.delta, r.kappa_s + h) - ratio_of(r.delta, r.kappa_s - h)) / (2.0 * h);
  const double rd =
      (ratio_of(r.delta + h, r.kappa_s) - ratio_of(r.delta - h, r.kappa_s)) / (2.0 * h);
  const double want = std::sqrt(rk * rk * r.kappa_s_se * r.kappa_s_se +
                                rd * rd * r.delta_se * r.delta_se);
  CHECK_THAT(ses.ratio, WithinRel(want, 1e-6));
}

TEST_CASE("delta_method_boundaries refuses decay-violated estimates") {
  EstimationResult r;
  r.decay_violated = true;
  REQUIRE_THROWS_AS(delta_method_boundaries(r), decay_violation);
}

TEST_CASE("resample_units draws a valid panel with fresh contiguous ids") {
  const auto d = baseline_panel(7, 40);
  Rng rng(5, 0xB007, 0);
  const auto b = resample_units(d, rng);
  REQUIRE(b.n_units() == d.n_units());
  REQUIRE(b.n_periods == d.n_periods);
  for (std::size_t k = 0; k < b.n_units(); ++k)
    CHECK(b.units[k].unit_id == static_cast<int>(k));
  // Same rng state reproduces the draw.
  Rng rng2(5, 0xB007, 0);
  const auto b2 = resample_units(d, rng2);
  for (std::size_t k = 0; k < b.n_units(); ++k) {
    CHECK(b.units[k].x == b2.units[k].x);
    CHECK(b.units[k].y == b2.units[k].y);
  }
}

TEST_CASE("panel_bootstrap is deterministic in its seed") {
  const auto d = baseline_panel(11, 60);
  const auto a = panel_bootstrap(d, 12, 42);
  const auto b = panel_bootstrap(d, 12, 42);
  const auto c = panel_bootstrap(d, 12, 43);
  REQUIRE(a.B == 12);
  CHECK(a.n_failed == b.n_failed);
  REQUIRE(a.draws.at("delta").size() == b.draws.at("delta").size());
  CHECK(static_cast<int>(a.draws.at("delta").size()) + a.n_failed == a.B);
  for (std::size_t i = 0; i < a.draws.at("delta").size(); ++i)
    CHECK(a.draws.at("delta")[i] == b.draws.at("delta")[i]);
  bool identical_to_c =
      a.n_failed == c.n_failed && a.draws.at("delta") == c.draws.at("delta");
  CHECK_FALSE(identical_to_c);
  CHECK(a.params.at("delta").sd >= 0.0);
  CHECK(a.params.at("delta").lo <= a.params.at("delta").hi);
  REQUIRE_THROWS_AS(panel_bootstrap(d, 0, 1), validation_error);
}

TEST_CASE("summarize_draws: sd and type-7 quantiles on a known sample") {
  // v = 1..5: mean 3, sample sd sqrt(2.5); q(0.025) = 1 + 0.1*1 = 1.1.
  const auto p = detail::summarize_draws({5.0, 3.0, 1.0, 4.0, 2.0});
  CHECK_THAT(p.sd, WithinRel(std::sqrt(2.5), 1e-12));
  CHECK_THAT(p.lo, WithinRel(1.1, 1e-12));
  CHECK_THAT(p.hi, WithinRel(4.9, 1e-12));
}

TEST_CASE("ratio consistency test: algebraic mode reports the exact identity") {
  const auto d = baseline_panel();
  const auto est = run_pipeline(d);
  const auto r = test_ratio_consistency(d, est, RatioTestMode::Algebraic);
  CHECK(r.statistic == 0.0);
  CHECK(r.p_value == 1.0);
  CHECK_FALSE(r.reject);
  CHECK_THAT(r.extras.at("gap"), WithinAbs(0.0, 1e-9 * est.ratio));
}

TEST_CASE("quadratic_threshold_crossing solves the drop equation") {
  // Pure linear: crossing at log_eps / b1.
  const double le = std::log(0.1);
  CHECK_THAT(detail::quadratic_threshold_crossing(-0.1, 0.0, le),
             WithinRel(le / -0.1, 1e-12));
  // Quadratic: the returned root satisfies b1 x + b2 x^2 = log_eps.
  const double x = detail::quadratic_threshold_crossing(-0.1, -0.001, le);
  REQUIRE(x > 0.0);
  CHECK_THAT(-0.1 * x - 0.001 * x * x, WithinRel(le, 1e-10));
  // Convex case picks the smallest positive root.
  const double xc = detail::quadratic_threshold_crossing(-0.2, 0.004, le);
  REQUIRE(xc > 0.0);
  CHECK_THAT(-0.2 * xc + 0.004 * xc * xc, WithinRel(le, 1e-10));
  CHECK(xc < 50.0);  // the other root of the parabola lies beyond the vertex
  REQUIRE_THROWS_AS(detail::quadratic_threshold_crossing(-0.1, 0.0, 1.0),
                    validation_error);
}

TEST_CASE("ratio consistency test: empirical-threshold mode on a clean panel") {
  const auto d = baseline_panel(19, 70);
  const auto est = run_pipeline(d);
  REQUIRE_FALSE(est.decay_violated);
  const auto r =
      test_ratio_consistency(d, est, RatioTestMode::EmpiricalThreshold, 39, 77);
  CHECK(std::isfinite(r.statistic));
  CHECK(r.statistic >= 0.0);
  CHECK(r.p_value >= 0.0);
  CHECK(r.p_value <= 1.0);
  CHECK(r.extras.count("gap") == 1);
  CHECK(r.extras.at("gap_sd") > 0.0);
}

TEST_CASE("unified-dynamics BIC comparison has the documented structure") {
  const auto est = baseline_result();
  const auto r = test_unified_dynamics(est);
  CHECK(r.test_id == TestId::UnifiedDynamics);
  CHECK(r.null_distribution == NullDistribution::ModelScore);
  CHECK(std::isfinite(r.statistic));
  CHECK_THAT(r.statistic,
             WithinAbs(r.extras.at("bic_separate") - r.extras.at("bic_unified"), 1e-9));
  // Hand-check the unified BIC from the stage fits.
  const double n2 = static_cast<double>(est.stage2.n_obs);
  const double n3 = static_cast<double>(est.stage3.n_obs);
  const double n = n2 + n3;
  const double sig_u = (est.stage2.resid_var * n2 + est.stage3.resid_var * n3) / n;
  const double want = n * (std::log(2.0 * kPi * sig_u) + 1.0) + 5.0 * std::log(n);
  CHECK_THAT(r.extras.at("bic_unified"), WithinRel(want, 1e-12));
}

TEST_CASE("spec_test_quadratic: size under the null, power under curvature") {
  Rng rng(31, 0);
  auto make_sample = [&](double b2) {
    StageSample s;
    for (int i = 0; i < 120; ++i) {
      const double d = 20.0 + 2.0 * i;
      s.x.push_back(d);
      s.y.push_back(1.0 - 0.02 * d + b2 * d * d + 0.05 * rng.normal());
      s.cluster.push_back(i % 40);
    }
    return s;
  };
  const auto null_r = spec_test_quadratic(make_sample(0.0));
  CHECK(null_r.p_value > 0.001);  // no systematic curvature
  const auto alt_r = spec_test_quadratic(make_sample(-4e-4));
  CHECK(alt_r.reject);
  CHECK(alt_r.extras.at("kappa2") < 0.0);
}

TEST_CASE("spec_test_quadratic p-values are near-uniform under the null") {
  Rng rng(57, 0);
  std::vector<double> ps;
  for (int rep = 0; rep < 300; ++rep) {
    StageSample s;
    for (int i = 0; i < 100; ++i) {
      const double d = 10.0 + 3.0 * i;
      s.x.push_back(d);
      s.y.push_back(2.0 - 0.015 * d + 0.4 * rng.normal());
      s.cluster.push_back(i);  // singleton clusters: observations independent
    }
    ps.push_back(spec_test_quadratic(s).p_value);
  }
  CHECK(ks_uniform_distance(ps) < 0.15);
}

TEST_CASE("spec_test_superposition: skipped with a single source, runs with many") {
  // Single treated unit: nobody ever sees two active sources.
  PulseConfig one;
  one.n_units = 40;
  one.n_treat = 1;
  one.seed = 3;
  const auto sim1 = simulate_pulse(one);
  const auto s1 = stage1_twfe(sim1.dataset);
  const auto skipped = spec_test_superposition(sim1.dataset, s1.resid, 0.008);
  CHECK(skipped.skipped);
  CHECK_FALSE(skipped.note.empty());

  // Baseline: five sources, plenty of multi-exposed receivers.
  const auto d = baseline_panel(23, 60);
  const auto f1 = stage1_twfe(d);
  const auto r = spec_test_superposition(d, f1.resid, 0.008);
  CHECK_FALSE(r.skipped);
  CHECK(r.p_value >= 0.0);
  CHECK(r.p_value <= 1.0);
  CHECK(r.extras.count("interaction") == 1);
  REQUIRE_THROWS_AS(spec_test_superposition(d, f1.resid, -0.01), validation_error);
}

TEST_CASE("boundary-condition selection needs a declared domain") {
  auto d = baseline_panel(29, 50);
  d.domain.reset();  // strip the simulator's domain record
  const auto f1 = stage1_twfe(d);
  REQUIRE_THROWS_AS(fit_boundary_profiles(d, f1.resid), validation_error);
}

TEST_CASE("boundary-condition selection on a Dirichlet-suppressed panel") {
  auto cfg = table3_bounded_pulse();
  cfg.n_units = 150;
  cfg.seed = 41;
  const auto sim = simulate_pulse(cfg);
  REQUIRE(sim.dataset.domain.has_value());
  const auto s1 = stage1_twfe(sim.dataset);
  const auto sel = fit_boundary_profiles(sim.dataset, s1.resid);
  CHECK(sel.n_obs >= 10);
  // All three profiles were fitted over the same grid.
  CHECK(sel.unbounded.kappa > 0.0);
  CHECK(sel.dirichlet.kappa > 0.0);
  CHECK(sel.neumann.kappa > 0.0);
  // With wall suppression in the DGP the Dirichlet profile wins the BIC race.
  CHECK(sel.selected == BoundaryCondition::DirichletRect);
  CHECK(sel.dirichlet.bic < sel.unbounded.bic);

  const auto report = select_boundary_condition(sim.dataset);
  CHECK(report.test_id == TestId::BoundaryConditionSelect);
  CHECK_THAT(report.statistic,
             WithinAbs(std::min(report.extras.at("bic_dirichlet"),
                                report.extras.at("bic_neumann")) -
                           report.extras.at("bic_unbounded"),
                       1e-9));
  CHECK(report.note == "selected: dirichlet");
}
