#pragma once

// Monte Carlo replication harness: run M replications of simulate -> estimate
// -> infer, aggregate bias / RMSE / coverage / power, and drive the table
// studies (baseline, noise sweep, boundary-condition study, sample-size
// sweep, method comparison, specification-test performance).

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "kdiff/common.hpp"
#include "kdiff/estimate.hpp"
#include "kdiff/inference.hpp"
#include "kdiff/rng.hpp"
#include "kdiff/simulate.hpp"

namespace kdiff {

struct McConfig {
  PulseConfig base;
  int replications = 200;
  std::uint64_t master_seed = 1;
  int threads = 1;
  StageConfig stage;

  void validate() const {
    base.validate();
    if (replications < 1) throw validation_error("McConfig: replications >= 1");
    if (threads < 1) throw validation_error("McConfig: threads >= 1");
    stage.validate();
  }
};

struct McMetric {
  double truth = 0.0;
  double mean = 0.0;
  double bias = 0.0;
  double rmse = 0.0;
  double coverage = std::numeric_limits<double>::quiet_NaN();  // NaN if no SE
};

struct McSummary {
  int replications = 0;
  int n_failed = 0;
  double wall_seconds = 0.0;
  std::map<std::string, McMetric> metrics;   // delta, lambda, kappa, kappa_s, d_star, tau_star
  std::map<std::string, double> power;       // per test, rejection rate at alpha
  std::vector<std::string> failure_notes;    // first few failure diagnostics
};

namespace detail {

// Deterministic per-replication seed derivation; independent of evaluation
// order and thread count.
inline std::uint64_t replication_seed(std::uint64_t master, int r) {
  return splitmix64(splitmix64(master) + static_cast<std::uint64_t>(r));
}

// Static partition of [0, n) across `threads` workers; results must be
// written to per-index slots so the reduction is order-insensitive.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int r = 0; r < n; ++r) fn(r);
    return;
  }
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      for (int r = w; r < n; r += threads) fn(r);
    });
  for (auto& t : pool) t.join();
}

struct RepResult {
  EstimationResult est;
  BoundarySes ses;
  bool boundary_reject = false;
};

}  // namespace detail

struct PulseTruth {
  double delta = 0.0, lambda = 0.0, kappa = 0.0, kappa_s = 0.0;
  double d_star = 0.0, tau_star = 0.0;
};

inline PulseTruth pulse_truth(const PulseConfig& cfg, const StageConfig& stage = {}) {
  PulseTruth t;
  t.delta = cfg.delta;
  t.kappa_s = cfg.kappa_s;
  t.lambda = std::sqrt(cfg.delta) / cfg.kappa_s;
  t.kappa = cfg.kappa;
  t.d_star = std::log(1.0 / stage.eps_s) / cfg.kappa_s;
  t.tau_star = std::log(1.0 / stage.eps_t) / cfg.delta;
  return t;
}

inline McSummary run_mc(const McConfig& cfg) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const int M = cfg.replications;
  const auto truth = pulse_truth(cfg.base, cfg.stage);

  std::vector<std::optional<detail::RepResult>> rows(M);
  std::vector<std::string> notes(M);
  detail::parallel_for(M, cfg.threads, [&](int r) {
    PulseConfig pc = cfg.base;
    pc.seed = detail::replication_seed(cfg.master_seed, r);
    try {
      const auto sim = simulate_pulse(pc);
      detail::RepResult rr;
      rr.est = run_pipeline(sim.dataset, cfg.stage, pc.beta);
      if (rr.est.decay_violated) {
        notes[r] = rr.est.diagnostic;
        return;
      }
      rr.ses = delta_method_boundaries(rr.est);
      rr.boundary_reject =
          test_boundary_exists(rr.est.kappa_s, rr.est.kappa_s_se).reject;
      rows[r] = std::move(rr);
    } catch (const std::exception& e) {
      notes[r] = e.what();
    }
  });

  McSummary out;
  out.replications = M;
  struct Acc {
    double truthv = 0.0;
    double sum = 0.0, sum_sq_err = 0.0;
    int covered = 0, with_ci = 0;
    int n = 0;
  };
  std::map<std::string, Acc> acc;
  const char* names[] = {"delta", "lambda", "kappa", "kappa_s", "d_star", "tau_star"};
  const double truths[] = {truth.delta,   truth.lambda, truth.kappa,
                           truth.kappa_s, truth.d_star, truth.tau_star};
  for (int i = 0; i < 6; ++i) acc[names[i]].truthv = truths[i];

  int power_count = 0, ok = 0;
  for (int r = 0; r < M; ++r) {
    if (!rows[r]) {
      ++out.n_failed;
      if (out.failure_notes.size() < 5 && !notes[r].empty())
        out.failure_notes.push_back("rep " + std::to_string(r) + ": " + notes[r]);
      continue;
    }
    ++ok;
    const auto& rr = *rows[r];
    const double est[] = {rr.est.delta,   rr.est.lambda, rr.est.kappa,
                          rr.est.kappa_s, rr.est.d_star, rr.est.tau_star};
    const double se[] = {rr.est.delta_se, 0.0, 0.0, rr.est.kappa_s_se,
                         rr.ses.d_star,   rr.ses.tau_star};
    for (int i = 0; i < 6; ++i) {
      auto& a = acc[names[i]];
      const double e = est[i] - truths[i];
      a.sum += est[i];
      a.sum_sq_err += e * e;
      ++a.n;
      if (se[i] > 0.0) {
        ++a.with_ci;
        if (std::fabs(e) <= 1.959963984540054 * se[i]) ++a.covered;
      }
    }
    if (rr.boundary_reject) ++power_count;
  }
  if (out.n_failed * 2 > M) {
    std::string msg = "run_mc: " + std::to_string(out.n_failed) + "/" +
                      std::to_string(M) + " replications failed";
    for (const auto& n : out.failure_notes) msg += "; " + n;
    throw numeric_error(msg);
  }
  for (const auto& [name, a] : acc) {
    McMetric m;
    m.truth = a.truthv;
    m.mean = a.sum / a.n;
    m.bias = m.mean - a.truthv;
    m.rmse = std::sqrt(a.sum_sq_err / a.n);
    if (a.with_ci > 0) m.coverage = static_cast<double>(a.covered) / a.with_ci;
    out.metrics[name] = m;
  }
  out.power["SpatialBoundaryExists"] = ok > 0 ? static_cast<double>(power_count) / ok : 0.0;
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return out;
}

// ---------------------------------------------------------------------------
// Method comparison (Table 6 design).
// ---------------------------------------------------------------------------
enum class Method { Unified, Separate, StandardDiD, AdHocCutoff };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::Unified: return "Unified";
    case Method::Separate: return "Separate";
    case Method::StandardDiD: return "StandardDiD";
    case Method::AdHocCutoff: return "AdHocCutoff";
  }
  return "?";
}

struct MethodCell {
  bool boundaries_defined = true;
  double rmse_d_star = std::numeric_limits<double>::quiet_NaN();
  double rmse_tau_star = std::numeric_limits<double>::quiet_NaN();
  double bias_d_star = std::numeric_limits<double>::quiet_NaN();
  int n_failed = 0;
};

struct ComparisonSummary {
  int replications = 0;
  std::map<std::string, MethodCell> methods;
  double wall_seconds = 0.0;
};

inline ComparisonSummary run_comparison(const McConfig& cfg,
                                        const std::vector<Method>& methods) {
  cfg.validate();
  if (methods.size() < 2)
    throw validation_error("run_comparison: select at least two methods");
  const auto t_start = std::chrono::steady_clock::now();
  const int M = cfg.replications;
  const auto truth = pulse_truth(cfg.base, cfg.stage);

  struct Row {
    std::map<Method, std::pair<double, double>> boundaries;  // (d*, tau*)
    std::map<Method, bool> ok;
  };
  std::vector<Row> rows(M);
  detail::parallel_for(M, cfg.threads, [&](int r) {
    PulseConfig pc = cfg.base;
    pc.seed = detail::replication_seed(cfg.master_seed, r);
    SimOutput sim;
    try {
      sim = simulate_pulse(pc);
    } catch (const std::exception&) {
      return;  // all methods fail this replication
    }
    const auto& data = sim.dataset;
    for (Method m : methods) {
      try {
        switch (m) {
          case Method::Unified: {
            const auto est = run_pipeline(data, cfg.stage, pc.beta);
            if (est.decay_violated) break;
            rows[r].boundaries[m] = {est.d_star, est.tau_star};
            rows[r].ok[m] = true;
            break;
          }
          case Method::Separate: {
            // Stages 2-3 on raw outcomes, no fixed-effect residualization and
            // no shared recovery.
            Matrix<double> raw(data.n_units(), data.n_periods);
            for (std::size_t i = 0; i < data.n_units(); ++i)
              for (int t = 1; t <= data.n_periods; ++t)
                raw(i, t - 1) = data.at(i, t).outcome;
            const auto s2 = stage2_spatial(raw, data, cfg.stage);
            const auto s3 = stage3_temporal(raw, data, cfg.stage);
            if (!(s2.slope > 0.0) || !(s3.slope > 0.0)) break;
            const auto b = compute_boundaries(s3.slope, s2.slope, cfg.stage.eps_s,
                                              cfg.stage.eps_t);
            rows[r].boundaries[m] = {b.d_star, b.tau_star};
            rows[r].ok[m] = true;
            break;
          }
          case Method::StandardDiD: {
            stage1_twfe(data);  // ATT only; boundaries undefined by design
            rows[r].ok[m] = false;
            break;
          }
          case Method::AdHocCutoff: {
            rows[r].boundaries[m] = {100.0, 5.0};
            rows[r].ok[m] = true;
            break;
          }
        }
      } catch (const std::exception&) {
      }
    }
  });

  ComparisonSummary out;
  out.replications = M;
  for (Method m : methods) {
    MethodCell cell;
    if (m == Method::StandardDiD) {
      cell.boundaries_defined = false;
      out.methods[method_name(m)] = cell;
      continue;
    }
    double se_d = 0.0, se_t = 0.0, bias_d = 0.0;
    int n = 0;
    for (const auto& row : rows) {
      const auto it = row.ok.find(m);
      if (it == row.ok.end() || !it->second) {
        ++cell.n_failed;
        continue;
      }
      const auto [ds, ts] = row.boundaries.at(m);
      se_d += (ds - truth.d_star) * (ds - truth.d_star);
      se_t += (ts - truth.tau_star) * (ts - truth.tau_star);
      bias_d += ds - truth.d_star;
      ++n;
    }
    if (n * 2 < M)
      throw numeric_error(std::string("run_comparison: method ") + method_name(m) +
                          " failed in most replications");
    cell.rmse_d_star = std::sqrt(se_d / n);
    cell.rmse_tau_star = std::sqrt(se_t / n);
    cell.bias_d_star = bias_d / n;
    out.methods[method_name(m)] = cell;
  }
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return out;
}

// ---------------------------------------------------------------------------
// Boundary-condition study (Table 3 design): per replication, estimate the
// spatial decay (hence d*) with (a) the standard unbounded log-linear Stage 2
// and (b) the boundary-aware profile fit with AIC/BIC model selection.
// ---------------------------------------------------------------------------
struct BoundaryStudyCell {
  double bias_unbounded = 0.0;
  double bias_aware = 0.0;
  double rmse_unbounded = 0.0;
  double rmse_aware = 0.0;
  double frac_bounded_selected = 0.0;  // Dirichlet or Neumann chosen
  int n_failed = 0;
  int replications = 0;
};

inline BoundaryStudyCell run_boundary_condition_study(const McConfig& cfg,
                                                      BoundaryFitConfig bc = {}) {
  cfg.validate();
  const int M = cfg.replications;
  const double d_true = std::log(1.0 / cfg.stage.eps_s) / cfg.base.kappa_s;

  struct Row {
    double d_unb = 0.0, d_aware = 0.0;
    bool bounded_sel = false;
    bool ok = false;
  };
  std::vector<Row> rows(M);
  detail::parallel_for(M, cfg.threads, [&](int r) {
    PulseConfig pc = cfg.base;
    pc.seed = detail::replication_seed(cfg.master_seed, r);
    try {
      const auto sim = simulate_pulse(pc);
      const auto s1 = stage1_twfe(sim.dataset);
      const auto s2 = stage2_spatial(s1.resid, sim.dataset, cfg.stage);
      if (!(s2.slope > 0.0)) return;
      const auto sel = fit_boundary_profiles(sim.dataset, s1.resid, cfg.stage, bc);
      const ProfileFit* win = &sel.unbounded;
      if (sel.selected == BoundaryCondition::DirichletRect) win = &sel.dirichlet;
      if (sel.selected == BoundaryCondition::NeumannRect) win = &sel.neumann;
      if (!(win->kappa > 0.0)) return;
      rows[r].d_unb = std::log(1.0 / cfg.stage.eps_s) / s2.slope;
      rows[r].d_aware = std::log(1.0 / cfg.stage.eps_s) / win->kappa;
      rows[r].bounded_sel = sel.selected != BoundaryCondition::Unbounded;
      rows[r].ok = true;
    } catch (const std::exception&) {
    }
  });

  BoundaryStudyCell out;
  out.replications = M;
  double b_u = 0.0, b_a = 0.0, s_u = 0.0, s_a = 0.0;
  int n = 0, sel_b = 0;
  for (const auto& row : rows) {
    if (!row.ok) {
      ++out.n_failed;
      continue;
    }
    b_u += row.d_unb - d_true;
    b_a += row.d_aware - d_true;
    s_u += (row.d_unb - d_true) * (row.d_unb - d_true);
    s_a += (row.d_aware - d_true) * (row.d_aware - d_true);
    if (row.bounded_sel) ++sel_b;
    ++n;
  }
  if (n * 2 < M)
    throw numeric_error("run_boundary_condition_study: most replications failed");
  out.bias_unbounded = b_u / n;
  out.bias_aware = b_a / n;
  out.rmse_unbounded = std::sqrt(s_u / n);
  out.rmse_aware = std::sqrt(s_a / n);
  out.frac_bounded_selected = static_cast<double>(sel_b) / n;
  return out;
}

// ---------------------------------------------------------------------------
// Specification-test performance (Table 7 design): rejection rate of the
// quadratic specification test under the exponential DGP (size) and the
// power-law DGP (power).
// ---------------------------------------------------------------------------
struct SpecStudyResult {
  double reject_rate = 0.0;
  int n_failed = 0;
  int replications = 0;
};

inline SpecStudyResult run_spec_test_study(const McConfig& cfg) {
  cfg.validate();
  const int M = cfg.replications;
  std::vector<int> verdict(M, -1);  // -1 failed, 0 retain, 1 reject
  detail::parallel_for(M, cfg.threads, [&](int r) {
    PulseConfig pc = cfg.base;
    pc.seed = detail::replication_seed(cfg.master_seed, r);
    try {
      const auto sim = simulate_pulse(pc);
      const auto s1 = stage1_twfe(sim.dataset);
      const auto s2 = stage2_spatial(s1.resid, sim.dataset, cfg.stage);
      verdict[r] = spec_test_quadratic(s2.sample).reject ? 1 : 0;
    } catch (const std::exception&) {
    }
  });
  SpecStudyResult out;
  out.replications = M;
  int n = 0, rej = 0;
  for (int v : verdict) {
    if (v < 0) {
      ++out.n_failed;
      continue;
    }
    ++n;
    rej += v;
  }
  if (n * 2 < M) throw numeric_error("run_spec_test_study: most replications failed");
  out.reject_rate = static_cast<double>(rej) / n;
  return out;
}

// ---------------------------------------------------------------------------
// Table presets (desk-scale Monte Carlo study designs; the CLI exposes them
// via --table).
// ---------------------------------------------------------------------------

// Baseline DGP shared by Tables 1, 2, 4, and 6.
inline PulseConfig baseline_pulse() {
  PulseConfig c;
  c.n_units = 200;
  c.n_periods = 20;
  c.domain_side = 800.0;
  c.delta = 0.15;
  c.kappa_s = 0.008;
  c.kappa = 2.0;
  c.beta = 1.0;
  c.n_treat = 5;
  c.adopt_time = 12;
  c.sigma_alpha = 0.5;
  c.sigma_gamma = 0.5;
  c.sigma_eps = 0.5;
  c.eff_sd = 0.25;
  c.xi_lsd = 0.5;
  c.amp_sp = 8.0;
  return c;
}

// Table 3 bounded arm: small domain (L = 300 km < 2 d*), Dirichlet DGP, with
// sources kept a small margin off the walls.
inline PulseConfig table3_bounded_pulse() {
  PulseConfig c = baseline_pulse();
  c.domain_side = 300.0;
  c.margin = 15.0;
  c.kappa_s = 0.012;
  c.amp_sp = 20.0;
  c.sigma_eps = 0.1;
  c.bounded = true;
  return c;
}

// Table 3 unbounded arm: large domain (L = 2000 km >> 2 d*).
inline PulseConfig table3_unbounded_pulse() {
  PulseConfig c = baseline_pulse();
  c.domain_side = 2000.0;
  c.kappa_s = 0.012;
  c.amp_sp = 20.0;
  c.sigma_eps = 0.1;
  c.n_treat = 30;
  return c;
}

// Table 7: specification-test DGPs (exponential for size, power-law for
// power).
inline PulseConfig table7_pulse(SpatialProfile profile) {
  PulseConfig c = baseline_pulse();
  c.domain_side = 400.0;
  c.amp_sp = 20.0;
  c.xi_lsd = 0.8;
  c.profile = profile;
  c.alpha_pl = 1.5;
  c.d0_pl = 50.0;
  return c;
}

}  // namespace kdiff
