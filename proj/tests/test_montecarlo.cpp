#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <set>

#include "kdiff/montecarlo.hpp"

using Catch::Matchers::WithinAbs;
using namespace kdiff;

namespace {

McConfig small_config(int reps = 8, int threads = 1) {
  McConfig mc;
  mc.base = baseline_pulse();
  mc.base.n_units = 60;
  mc.replications = reps;
  mc.threads = threads;
  mc.master_seed = 5;
  return mc;
}

bool summaries_identical(const McSummary& a, const McSummary& b) {
  if (a.replications != b.replications || a.n_failed != b.n_failed) return false;
  if (a.metrics.size() != b.metrics.size()) return false;
  for (const auto& [k, m] : a.metrics) {
    const auto& o = b.metrics.at(k);
    // Bitwise comparison: thread count must not perturb a single bit.
    if (std::memcmp(&m.mean, &o.mean, sizeof(double)) != 0) return false;
    if (std::memcmp(&m.bias, &o.bias, sizeof(double)) != 0) return false;
    if (std::memcmp(&m.rmse, &o.rmse, sizeof(double)) != 0) return false;
    const bool an = std::isnan(m.coverage), bn = std::isnan(o.coverage);
    if (an != bn || (!an && std::memcmp(&m.coverage, &o.coverage, sizeof(double)) != 0))
      return false;
  }
  return a.power == b.power;
}

}  // namespace

TEST_CASE("replication seeds are distinct and order-free") {
  std::set<std::uint64_t> seen;
  for (int r = 0; r < 1000; ++r) seen.insert(detail::replication_seed(1, r));
  CHECK(seen.size() == 1000);
  CHECK(detail::replication_seed(1, 7) == splitmix64(splitmix64(1) + 7));
}

TEST_CASE("run_mc produces coherent metrics on a small study") {
  const auto s = run_mc(small_config());
  REQUIRE(s.replications == 8);
  CHECK(s.n_failed <= 2);
  for (const char* k : {"delta", "lambda", "kappa", "kappa_s", "d_star", "tau_star"}) {
    REQUIRE(s.metrics.count(k) == 1);
    const auto& m = s.metrics.at(k);
    CHECK(std::isfinite(m.mean));
    CHECK_THAT(m.bias, WithinAbs(m.mean - m.truth, 1e-12));
    CHECK(m.rmse >= std::fabs(m.bias) - 1e-12);
  }
  // Coverage exists exactly where an SE exists.
  for (const char* k : {"delta", "kappa_s", "d_star", "tau_star"}) {
    const double c = s.metrics.at(k).coverage;
    CHECK(c >= 0.0);
    CHECK(c <= 1.0);
  }
  CHECK(std::isnan(s.metrics.at("lambda").coverage));
  REQUIRE(s.power.count("SpatialBoundaryExists") == 1);
}

TEST_CASE("run_mc truth values follow the configured DGP") {
  auto mc = small_config();
  const auto t = pulse_truth(mc.base, mc.stage);
  CHECK(t.delta == mc.base.delta);
  CHECK(t.kappa_s == mc.base.kappa_s);
  CHECK_THAT(t.d_star, WithinAbs(std::log(1.0 / mc.stage.eps_s) / mc.base.kappa_s, 1e-12));
  CHECK_THAT(t.tau_star, WithinAbs(std::log(1.0 / mc.stage.eps_t) / mc.base.delta, 1e-12));
}

TEST_CASE("run_mc output is bit-identical across thread counts") {
  const auto s1 = run_mc(small_config(8, 1));
  const auto s4 = run_mc(small_config(8, 4));
  CHECK(summaries_identical(s1, s4));
}

TEST_CASE("run_comparison covers every requested method") {
  auto mc = small_config(6);
  const auto c = run_comparison(
      mc, {Method::Unified, Method::Separate, Method::StandardDiD, Method::AdHocCutoff});
  REQUIRE(c.methods.size() == 4);
  CHECK_FALSE(c.methods.at("StandardDiD").boundaries_defined);
  for (const char* m : {"Unified", "Separate", "AdHocCutoff"}) {
    const auto& cell = c.methods.at(m);
    REQUIRE(cell.boundaries_defined);
    CHECK(std::isfinite(cell.rmse_d_star));
    CHECK(cell.rmse_d_star >= 0.0);
  }
  REQUIRE_THROWS_AS(run_comparison(mc, {Method::Unified}), validation_error);
}

TEST_CASE("boundary-condition study runs on the bounded preset") {
  McConfig mc;
  mc.base = table3_bounded_pulse();
  mc.base.n_units = 120;
  mc.replications = 4;
  mc.master_seed = 9;
  const auto c = run_boundary_condition_study(mc);
  REQUIRE(c.replications == 4);
  CHECK(c.n_failed <= 1);
  CHECK(std::isfinite(c.bias_unbounded));
  CHECK(std::isfinite(c.bias_aware));
  CHECK(c.frac_bounded_selected >= 0.0);
  CHECK(c.frac_bounded_selected <= 1.0);
}

TEST_CASE("spec-test study reports a rejection rate") {
  McConfig mc;
  mc.base = table7_pulse(SpatialProfile::PowerLaw);
  mc.base.n_units = 80;
  mc.replications = 6;
  mc.master_seed = 2;
  const auto s = run_spec_test_study(mc);
  CHECK(s.replications == 6);
  CHECK(s.reject_rate >= 0.0);
  CHECK(s.reject_rate <= 1.0);
}

TEST_CASE("run_mc aborts when most replications fail") {
  auto mc = small_config(4);
  mc.base.delta = -0.2;  // growth regime: every replication is a decay violation
  REQUIRE_THROWS_AS(run_mc(mc), numeric_error);
}
