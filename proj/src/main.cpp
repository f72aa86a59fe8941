// Command-line entry point: simulate | estimate | mc | greens-eval.
//
// Conventions shared by every subcommand:
//  * configs are flat key = value text (dotted section names, '#' comments);
//  * every output file is written atomically (temp file + rename) and paired
//    with a <output>.manifest.json capturing the resolved configuration;
//  * exit codes: 0 success, 1 validation/usage error, 2 numerical failure.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <sys/utsname.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "kdiff/estimate.hpp"
#include "kdiff/greens.hpp"
#include "kdiff/inference.hpp"
#include "kdiff/montecarlo.hpp"
#include "kdiff/panel.hpp"
#include "kdiff/simulate.hpp"

namespace {

using json = nlohmann::ordered_json;
using namespace kdiff;

constexpr const char* kArtifactVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Flat key-value config.
// ---------------------------------------------------------------------------
struct Config {
  std::map<std::string, std::string> kv;
  std::map<std::string, int> line_of;
  std::string path;

  bool has(const std::string& k) const { return kv.count(k) != 0; }

  template <typename T>
  T get(const std::string& k, T fallback) const {
    const auto it = kv.find(k);
    if (it == kv.end()) return fallback;
    std::istringstream ss(it->second);
    T v;
    if (!(ss >> v))
      throw validation_error(path + ": key '" + k + "' (line " +
                             std::to_string(line_of.at(k)) + "): cannot parse '" +
                             it->second + "'");
    return v;
  }

  std::string get_str(const std::string& k, const std::string& fallback) const {
    const auto it = kv.find(k);
    return it == kv.end() ? fallback : it->second;
  }
};

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

Config load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw validation_error("config: cannot open " + path);
  Config c;
  c.path = path;
  std::string line;
  int ln = 0;
  while (std::getline(f, line)) {
    ++ln;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw validation_error(path + ": line " + std::to_string(ln) +
                             ": expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto val = trim(line.substr(eq + 1));
    if (key.empty())
      throw validation_error(path + ": line " + std::to_string(ln) + ": empty key");
    c.kv[key] = val;
    c.line_of[key] = ln;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Atomic file + manifest plumbing.
// ---------------------------------------------------------------------------
void atomic_write(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw validation_error("cannot open " + tmp + " for writing");
    f << content;
    if (!f) throw validation_error("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw validation_error("cannot rename " + tmp + " to " + path);
}

json host_info() {
  struct utsname u{};
  json j;
  if (uname(&u) == 0) {
    j["sysname"] = u.sysname;
    j["release"] = u.release;
    j["machine"] = u.machine;
  }
  return j;
}

void write_manifest(const std::string& out_path, const std::string& subcommand,
                    const json& resolved_config, const std::vector<std::string>& inputs,
                    double wall_seconds) {
  json m;
  m["subcommand"] = subcommand;
  m["artifact_version"] = kArtifactVersion;
  m["config"] = resolved_config;
  m["inputs"] = inputs;
  m["output"] = out_path;
  m["wall_seconds"] = wall_seconds;
  m["host"] = host_info();
  atomic_write(out_path + ".manifest.json", m.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Config -> engine structs.
// ---------------------------------------------------------------------------
PulseConfig pulse_from_config(const Config& c) {
  PulseConfig p = baseline_pulse();
  p.n_units = c.get("sim.n_units", p.n_units);
  p.n_periods = c.get("sim.n_periods", p.n_periods);
  p.domain_side = c.get("sim.domain_side", p.domain_side);
  p.margin = c.get("sim.margin", p.margin);
  p.delta = c.get("sim.delta", p.delta);
  p.kappa_s = c.get("sim.kappa_s", p.kappa_s);
  p.kappa = c.get("sim.kappa", p.kappa);
  p.beta = c.get("sim.beta", p.beta);
  p.n_treat = c.get("sim.n_treat", p.n_treat);
  p.adopt_time = c.get("sim.adopt_time", p.adopt_time);
  p.sigma_alpha = c.get("sim.sigma_alpha", p.sigma_alpha);
  p.sigma_gamma = c.get("sim.sigma_gamma", p.sigma_gamma);
  p.sigma_eps = c.get("sim.sigma_eps", p.sigma_eps);
  p.eff_sd = c.get("sim.eff_sd", p.eff_sd);
  p.xi_lsd = c.get("sim.xi_lsd", p.xi_lsd);
  p.amp_sp = c.get("sim.amp_sp", p.amp_sp);
  const auto prof = c.get_str("sim.profile", "exponential");
  if (prof == "exponential") p.profile = SpatialProfile::Exponential;
  else if (prof == "powerlaw") p.profile = SpatialProfile::PowerLaw;
  else throw validation_error(c.path + ": sim.profile must be exponential|powerlaw");
  p.alpha_pl = c.get("sim.alpha_pl", p.alpha_pl);
  p.d0_pl = c.get("sim.d0_pl", p.d0_pl);
  p.bounded = c.get("sim.bounded", 0) != 0;
  p.seed = c.get<std::uint64_t>("sim.seed", 1);
  return p;
}

SimConfig lattice_from_config(const Config& c) {
  SimConfig s;
  s.n_units = c.get("sim.n_units", s.n_units);
  s.n_periods = c.get("sim.n_periods", s.n_periods);
  s.domain_side = c.get("sim.domain_side", s.domain_side);
  s.params.delta = c.get("sim.delta", s.params.delta);
  s.params.lambda = c.get("sim.lambda", s.params.lambda);
  s.params.kappa = c.get("sim.kappa", s.params.kappa);
  s.params.beta = c.get("sim.beta", s.params.beta);
  s.treat_share = c.get("sim.treat_share", s.treat_share);
  s.adopt_min = c.get("sim.adopt_min", s.adopt_min);
  s.adopt_max = c.get("sim.adopt_max", s.adopt_max);
  s.sigma_alpha = c.get("sim.sigma_alpha", s.sigma_alpha);
  s.sigma_gamma = c.get("sim.sigma_gamma", s.sigma_gamma);
  s.sigma_eps = c.get("sim.sigma_eps", s.sigma_eps);
  s.seed = c.get<std::uint64_t>("sim.seed", 1);
  return s;
}

StageConfig stage_from_config(const Config& c) {
  StageConfig s;
  s.d_min = c.get("stage.d_min", s.d_min);
  s.tau_min = c.get("stage.tau_min", s.tau_min);
  s.eps_s = c.get("stage.eps_s", s.eps_s);
  s.eps_t = c.get("stage.eps_t", s.eps_t);
  s.cv_folds = c.get("stage.cv_folds", s.cv_folds);
  return s;
}

json config_snapshot(const Config& c) {
  json j;
  for (const auto& [k, v] : c.kv) j[k] = v;
  return j;
}

// ---------------------------------------------------------------------------
// JSON serialization.
// ---------------------------------------------------------------------------
json to_json(const EstimationResult& r) {
  json j;
  j["att"] = r.att;
  j["kappa_s"] = r.kappa_s;
  j["kappa_s_raw"] = r.kappa_s_raw;
  j["kappa_s_correction"] = r.kappa_s_correction;
  j["kappa_s_se"] = r.kappa_s_se;
  j["delta"] = r.delta;
  j["delta_se"] = r.delta_se;
  j["lambda"] = r.lambda;
  j["kappa"] = r.kappa;
  j["d_star"] = std::isfinite(r.d_star) ? json(r.d_star) : json("inf");
  j["tau_star"] = std::isfinite(r.tau_star) ? json(r.tau_star) : json("inf");
  j["ratio"] = r.ratio;
  j["ratio_theory"] = r.ratio_theory;
  j["decay_violated"] = r.decay_violated;
  j["diagnostic"] = r.diagnostic;
  j["stage2"] = {{"slope", r.stage2.slope}, {"intercept", r.stage2.intercept},
                 {"se", r.stage2.se},       {"n_obs", r.stage2.n_obs},
                 {"r2", r.stage2.r2}};
  j["stage3"] = {{"slope", r.stage3.slope}, {"intercept", r.stage3.intercept},
                 {"se", r.stage3.se},       {"n_obs", r.stage3.n_obs},
                 {"r2", r.stage3.r2}};
  j["config"] = {{"d_min", r.config.d_min},  {"tau_min", r.config.tau_min},
                 {"eps_s", r.config.eps_s},  {"eps_t", r.config.eps_t}};
  return j;
}

json to_json(const TestReport& t) {
  json j;
  j["test"] = test_id_name(t.test_id);
  j["statistic"] = t.statistic;
  switch (t.null_distribution) {
    case NullDistribution::Normal: j["null"] = "normal"; break;
    case NullDistribution::Chi2_1: j["null"] = "chi2_1"; break;
    case NullDistribution::ModelScore: j["null"] = "model_score"; break;
  }
  j["p_value"] = t.p_value;
  j["alpha"] = t.alpha;
  j["reject"] = t.reject;
  j["skipped"] = t.skipped;
  if (!t.note.empty()) j["note"] = t.note;
  if (!t.extras.empty()) {
    json e;
    for (const auto& [k, v] : t.extras) e[k] = v;
    j["extras"] = e;
  }
  return j;
}

json to_json(const BootstrapResult& b) {
  json j;
  j["B"] = b.B;
  j["n_failed"] = b.n_failed;
  json p;
  for (const auto& [k, v] : b.params)
    p[k] = {{"sd", v.sd}, {"lo", v.lo}, {"hi", v.hi}};
  j["params"] = p;
  return j;
}

json to_json(const McSummary& s) {
  json j;
  j["replications"] = s.replications;
  j["n_failed"] = s.n_failed;
  json m;
  for (const auto& [k, v] : s.metrics) {
    json e = {{"truth", v.truth}, {"mean", v.mean}, {"bias", v.bias}, {"rmse", v.rmse}};
    if (std::isfinite(v.coverage)) e["coverage"] = v.coverage;
    m[k] = e;
  }
  j["metrics"] = m;
  json p;
  for (const auto& [k, v] : s.power) p[k] = v;
  j["power"] = p;
  j["wall_seconds"] = s.wall_seconds;
  return j;
}

// ---------------------------------------------------------------------------
// Plot-data emission (CSV tables, no rendering).
// ---------------------------------------------------------------------------
std::string plot_spatial_decay(const EstimationResult& r) {
  std::string out = "d_km,log_abs_residual,fitted\n";
  char buf[128];
  for (std::size_t i = 0; i < r.stage2.sample.x.size(); ++i) {
    const double d = r.stage2.sample.x[i];
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", d, r.stage2.sample.y[i],
                  r.stage2.intercept - r.stage2.slope * d);
    out += buf;
  }
  return out;
}

std::string plot_temporal_decay(const EstimationResult& r) {
  std::string out = "tau,log_abs_residual,fitted\n";
  char buf[128];
  for (std::size_t i = 0; i < r.stage3.sample.x.size(); ++i) {
    const double t = r.stage3.sample.x[i];
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", t, r.stage3.sample.y[i],
                  r.stage3.intercept - r.stage3.slope * t);
    out += buf;
  }
  return out;
}

std::string plot_ratio_check(const EstimationResult& r) {
  char buf[256];
  std::string out = "kind,value\n";
  std::snprintf(buf, sizeof buf, "empirical,%.17g\ntheoretical,%.17g\n", r.ratio,
                r.ratio_theory);
  return out + buf;
}

// ---------------------------------------------------------------------------
// Subcommands.
// ---------------------------------------------------------------------------
int cmd_simulate(const std::string& config_path, const std::string& out_path,
                 std::optional<std::uint64_t> seed_override) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = load_config(config_path);
  const auto engine = cfg.get_str("sim.engine", "pulse");
  SimOutput sim;
  if (engine == "pulse") {
    auto p = pulse_from_config(cfg);
    if (seed_override) p.seed = *seed_override;
    sim = simulate_pulse(p);
  } else if (engine == "lattice") {
    auto s = lattice_from_config(cfg);
    if (seed_override) s.seed = *seed_override;
    sim = simulate(s);
  } else if (engine == "powerlaw") {
    auto s = lattice_from_config(cfg);
    if (seed_override) s.seed = *seed_override;
    sim = simulate_powerlaw(s, cfg.get("sim.alpha_powerlaw", 1.5));
  } else {
    throw validation_error("sim.engine must be pulse|lattice|powerlaw");
  }
  if (!sim.note.empty()) std::fprintf(stderr, "note: %s\n", sim.note.c_str());

  // write_csv is not atomic by itself; route through a string.
  {
    const std::string tmp = out_path + ".tmp";
    write_csv(sim.dataset, tmp);
    if (std::rename(tmp.c_str(), out_path.c_str()) != 0)
      throw validation_error("cannot rename " + tmp + " to " + out_path);
  }
  auto snap = config_snapshot(cfg);
  if (seed_override) snap["sim.seed"] = std::to_string(*seed_override);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(out_path, "simulate", snap, {config_path}, wall);
  std::printf("simulate: wrote %s (%zu units x %d periods)\n", out_path.c_str(),
              sim.dataset.n_units(), sim.dataset.n_periods);
  return 0;
}

int cmd_estimate(const std::string& in_path, const std::string& out_path,
                 const std::string& config_path, bool with_inference, int bootstrap_B,
                 double alpha, std::uint64_t seed, const std::string& plot_kind,
                 const std::string& plot_out) {
  const auto t0 = std::chrono::steady_clock::now();
  Config cfg;
  if (!config_path.empty()) cfg = load_config(config_path);
  const auto stage = stage_from_config(cfg);
  const double beta = cfg.get("est.beta", 1.0);

  const auto data = load_csv(in_path);
  const auto result = run_pipeline(data, stage, beta);

  json j;
  j["estimate"] = to_json(result);
  if (with_inference && !result.decay_violated) {
    json tests = json::array();
    tests.push_back(to_json(test_boundary_exists(result.kappa_s, result.kappa_s_se, alpha)));
    const auto ses = delta_method_boundaries(result);
    j["boundary_se"] = {{"d_star", ses.d_star}, {"tau_star", ses.tau_star},
                        {"ratio", ses.ratio}};
    tests.push_back(to_json(test_unified_dynamics(result, alpha)));
    tests.push_back(to_json(
        test_ratio_consistency(data, result, RatioTestMode::Algebraic, 0, seed, alpha)));
    tests.push_back(to_json(spec_test_quadratic(result.stage2.sample, alpha)));
    {
      const auto s1 = stage1_twfe(data);
      tests.push_back(to_json(
          spec_test_superposition(data, s1.resid, result.kappa_s, alpha)));
    }
    if (data.domain) {
      try {
        tests.push_back(to_json(select_boundary_condition(data, stage)));
      } catch (const numeric_error& e) {
        json t;
        t["test"] = "BoundaryConditionSelect";
        t["skipped"] = true;
        t["note"] = e.what();
        tests.push_back(t);
      }
    }
    j["tests"] = tests;
    if (bootstrap_B > 0)
      j["bootstrap"] = to_json(panel_bootstrap(data, bootstrap_B, seed, stage, beta));
  }
  atomic_write(out_path, j.dump(2) + "\n");
  if (!plot_kind.empty()) {
    std::string csv;
    if (plot_kind == "spatial-decay") csv = plot_spatial_decay(result);
    else if (plot_kind == "temporal-decay") csv = plot_temporal_decay(result);
    else if (plot_kind == "ratio-check") csv = plot_ratio_check(result);
    else throw validation_error("--plot must be spatial-decay|temporal-decay|ratio-check");
    atomic_write(plot_out.empty() ? out_path + ".plot.csv" : plot_out, csv);
  }
  auto snap = config_snapshot(cfg);
  snap["estimate.with_inference"] = with_inference ? "1" : "0";
  snap["estimate.bootstrap"] = std::to_string(bootstrap_B);
  snap["estimate.alpha"] = std::to_string(alpha);
  snap["estimate.seed"] = std::to_string(seed);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(out_path, "estimate", snap, {in_path}, wall);
  if (result.decay_violated)
    std::fprintf(stderr, "estimate: %s\n", result.diagnostic.c_str());
  std::printf("estimate: wrote %s\n", out_path.c_str());
  return result.decay_violated ? 2 : 0;
}

int cmd_mc(int table, const std::string& config_path, int replications, int threads,
           std::uint64_t master_seed, const std::string& out_path,
           const std::string& ledger_path) {
  const auto t0 = std::chrono::steady_clock::now();
  Config cfg;
  if (!config_path.empty()) cfg = load_config(config_path);

  McConfig mc;
  mc.base = config_path.empty() ? baseline_pulse() : pulse_from_config(cfg);
  mc.replications = replications;
  mc.threads = threads;
  mc.master_seed = master_seed;
  mc.stage = stage_from_config(cfg);

  json j;
  std::string label = "custom";
  if (table == 1) {
    label = "table1";
    j["summary"] = to_json(run_mc(mc));
  } else if (table == 2) {
    label = "table2";
    json rows = json::array();
    for (double se : {0.25, 0.5, 1.0}) {
      McConfig m = mc;
      m.base.sigma_eps = se;
      auto s = run_mc(m);
      rows.push_back({{"sigma_eps", se},
                      {"rmse_d_star", s.metrics.at("d_star").rmse},
                      {"summary", to_json(s)}});
    }
    j["sweep"] = rows;
  } else if (table == 3) {
    label = "table3";
    for (const char* arm : {"bounded", "unbounded"}) {
      McConfig m = mc;
      m.base = std::string(arm) == "bounded" ? table3_bounded_pulse()
                                             : table3_unbounded_pulse();
      const auto c = run_boundary_condition_study(m);
      j[arm] = {{"L", m.base.domain_side},
                {"bias_unbounded_spec", c.bias_unbounded},
                {"bias_boundary_aware", c.bias_aware},
                {"rmse_unbounded_spec", c.rmse_unbounded},
                {"rmse_boundary_aware", c.rmse_aware},
                {"frac_bounded_selected", c.frac_bounded_selected},
                {"n_failed", c.n_failed},
                {"replications", c.replications}};
    }
  } else if (table == 4) {
    label = "table4";
    json rows = json::array();
    for (int N : {50, 100, 200}) {
      McConfig m = mc;
      m.base.n_units = N;
      auto s = run_mc(m);
      rows.push_back({{"N", N}, {"rmse_d_star", s.metrics.at("d_star").rmse},
                      {"summary", to_json(s)}});
    }
    j["sweep"] = rows;
    // RmseVsN plot table.
    std::string csv = "N,rmse_d_star\n";
    char buf[64];
    for (const auto& row : j["sweep"]) {
      std::snprintf(buf, sizeof buf, "%d,%.17g\n", row["N"].get<int>(),
                    row["rmse_d_star"].get<double>());
      csv += buf;
    }
    atomic_write(out_path + ".rmse_vs_n.csv", csv);
  } else if (table == 6) {
    label = "table6";
    const auto c = run_comparison(mc, {Method::Unified, Method::Separate,
                                       Method::StandardDiD, Method::AdHocCutoff});
    json methods;
    for (const auto& [name, cell] : c.methods) {
      json e = {{"boundaries_defined", cell.boundaries_defined},
                {"n_failed", cell.n_failed}};
      if (cell.boundaries_defined) {
        e["rmse_d_star"] = cell.rmse_d_star;
        e["rmse_tau_star"] = cell.rmse_tau_star;
        e["bias_d_star"] = cell.bias_d_star;
      }
      methods[name] = e;
    }
    j["methods"] = methods;
    j["replications"] = c.replications;
  } else if (table == 7) {
    label = "table7";
    for (auto [name, prof] : {std::pair{"exponential", SpatialProfile::Exponential},
                              std::pair{"powerlaw", SpatialProfile::PowerLaw}}) {
      McConfig m = mc;
      m.base = table7_pulse(prof);
      const auto s = run_spec_test_study(m);
      j[name] = {{"reject_rate", s.reject_rate}, {"n_failed", s.n_failed},
                 {"replications", s.replications}};
    }
  } else if (table == 0) {
    label = "custom";
    j["summary"] = to_json(run_mc(mc));
  } else {
    throw validation_error("--table must be one of 1,2,3,4,6,7 (or omitted)");
  }
  j["table"] = label;
  j["master_seed"] = master_seed;
  j["threads"] = threads;
  atomic_write(out_path, j.dump(2) + "\n");

  if (!ledger_path.empty() && (table == 0 || table == 1)) {
    // Per-replication ledger for the plain run.
    std::string csv = "replication,delta,kappa_s,d_star,tau_star,failed\n";
    char buf[256];
    for (int r = 0; r < mc.replications; ++r) {
      PulseConfig pc = mc.base;
      pc.seed = kdiff::detail::replication_seed(mc.master_seed, r);
      try {
        const auto sim = simulate_pulse(pc);
        const auto est = run_pipeline(sim.dataset, mc.stage, pc.beta);
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%d\n", r, est.delta,
                      est.kappa_s, est.d_star, est.tau_star, est.decay_violated ? 1 : 0);
      } catch (const std::exception&) {
        std::snprintf(buf, sizeof buf, "%d,,,,,1\n", r);
      }
      csv += buf;
    }
    atomic_write(ledger_path, csv);
  }

  auto snap = config_snapshot(cfg);
  snap["mc.table"] = label;
  snap["mc.replications"] = std::to_string(replications);
  snap["mc.threads"] = std::to_string(threads);
  snap["mc.master_seed"] = std::to_string(master_seed);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(out_path, "mc", snap,
                 config_path.empty() ? std::vector<std::string>{}
                                     : std::vector<std::string>{config_path},
                 wall);
  std::printf("mc: wrote %s\n", out_path.c_str());
  return 0;
}

int cmd_greens_eval(const std::string& condition, double x, double y, double x0,
                    double y0, double Lx, double Ly, double delta, double lambda,
                    double kappa, int grid_n, const std::string& out_path) {
  const auto t0 = std::chrono::steady_clock::now();
  GreensSpec spec;
  if (condition == "unbounded") spec.condition = BoundaryCondition::Unbounded;
  else if (condition == "dirichlet") spec.condition = BoundaryCondition::DirichletRect;
  else if (condition == "neumann") spec.condition = BoundaryCondition::NeumannRect;
  else throw validation_error("--condition must be unbounded|dirichlet|neumann");
  spec.Lx = Lx;
  spec.Ly = Ly;
  spec.series_max_terms = 4000;
  DiffusionParams p;
  p.delta = delta;
  p.lambda = lambda;
  p.kappa = kappa;

  if (grid_n > 0) {
    if (spec.condition != BoundaryCondition::DirichletRect)
      throw validation_error("--grid is only supported for the dirichlet condition");
    const auto g = greens_dirichlet_grid(x0, y0, spec, p, grid_n, grid_n);
    std::string csv = "i,j,x_km,y_km,value\n";
    char buf[160];
    for (int i = 0; i <= grid_n; ++i)
      for (int j = 0; j <= grid_n; ++j) {
        std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g\n", i, j,
                      Lx * i / grid_n, Ly * j / grid_n, g(i, j));
        csv += buf;
      }
    atomic_write(out_path, csv);
    json snap = {{"condition", condition}, {"x0", x0}, {"y0", y0}, {"Lx", Lx},
                 {"Ly", Ly},               {"delta", delta}, {"lambda", lambda},
                 {"kappa", kappa},         {"grid", grid_n}};
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(out_path, "greens-eval", snap, {}, wall);
    std::printf("greens-eval: wrote %s\n", out_path.c_str());
  } else {
    const double v = greens_value(x, y, x0, y0, spec, p);
    std::printf("%.17g\n", v);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial-temporal treatment-effect boundary estimation toolkit"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic panel CSV");
  std::string sim_config, sim_out = "panel.csv";
  std::optional<std::uint64_t> sim_seed;
  sim->add_option("--config", sim_config, "flat key=value config file")->required();
  sim->add_option("--out", sim_out, "output CSV path");
  sim->add_option("--seed", sim_seed, "override sim.seed");

  // estimate
  auto* est = app.add_subcommand("estimate", "Run the three-stage estimation pipeline");
  std::string est_in, est_out = "result.json", est_config, est_plot, est_plot_out;
  bool est_infer = false;
  int est_boot = 0;
  double est_alpha = 0.05;
  std::uint64_t est_seed = 1;
  est->add_option("--in", est_in, "input panel CSV")->required();
  est->add_option("--out", est_out, "output JSON path");
  est->add_option("--config", est_config, "flat key=value config file");
  est->add_flag("--with-inference", est_infer, "emit TestReports and SEs");
  est->add_option("--bootstrap", est_boot, "panel bootstrap replications");
  est->add_option("--alpha", est_alpha, "test size");
  est->add_option("--seed", est_seed, "bootstrap seed");
  est->add_option("--plot", est_plot, "spatial-decay|temporal-decay|ratio-check");
  est->add_option("--plot-out", est_plot_out, "plot CSV path");

  // mc
  auto* mc = app.add_subcommand("mc", "Monte Carlo studies");
  std::string mc_config, mc_out = "mc.json", mc_ledger;
  int mc_table = 0, mc_reps = 200, mc_threads = 1;
  std::uint64_t mc_seed = 1;
  mc->add_option("--table", mc_table, "preset: 1,2,3,4,6,7");
  mc->add_option("--config", mc_config, "flat key=value config file");
  mc->add_option("--replications", mc_reps, "replications per cell");
  mc->add_option("--threads", mc_threads, "worker threads");
  mc->add_option("--seed", mc_seed, "master seed");
  mc->add_option("--out", mc_out, "output JSON path");
  mc->add_option("--ledger", mc_ledger, "per-replication CSV ledger path");

  // greens-eval
  auto* ge = app.add_subcommand("greens-eval", "Evaluate a Green's function");
  std::string ge_cond = "unbounded", ge_out = "greens.csv";
  double ge_x = 0, ge_y = 0, ge_x0 = 0, ge_y0 = 0, ge_Lx = 1000, ge_Ly = 1000;
  double ge_delta = 0.15, ge_lambda = 8.0, ge_kappa = 1.0;
  int ge_grid = 0;
  ge->add_option("--condition", ge_cond, "unbounded|dirichlet|neumann");
  ge->add_option("--x", ge_x, "receiver x (km)");
  ge->add_option("--y", ge_y, "receiver y (km)");
  ge->add_option("--x0", ge_x0, "source x (km)");
  ge->add_option("--y0", ge_y0, "source y (km)");
  ge->add_option("--Lx", ge_Lx, "domain width (km)");
  ge->add_option("--Ly", ge_Ly, "domain height (km)");
  ge->add_option("--delta", ge_delta, "decay rate");
  ge->add_option("--lambda", ge_lambda, "diffusion range");
  ge->add_option("--kappa", ge_kappa, "source intensity");
  ge->add_option("--grid", ge_grid, "sample an NxN grid to --out instead");
  ge->add_option("--out", ge_out, "grid CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(sim_config, sim_out, sim_seed);
    if (est->parsed())
      return cmd_estimate(est_in, est_out, est_config, est_infer, est_boot, est_alpha,
                          est_seed, est_plot, est_plot_out);
    if (mc->parsed())
      return cmd_mc(mc_table, mc_config, mc_reps, mc_threads, mc_seed, mc_out,
                    mc_ledger);
    if (ge->parsed())
      return cmd_greens_eval(ge_cond, ge_x, ge_y, ge_x0, ge_y0, ge_Lx, ge_Ly, ge_delta,
                             ge_lambda, ge_kappa, ge_grid, ge_out);
  } catch (const validation_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const numeric_error& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 2;
  }
  return 1;
}
