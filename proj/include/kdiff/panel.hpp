#pragma once

// Canonical panel-data model: unit locations, staggered treatment schedules,
// outcomes, and derived exposure fields (tau_it, d_i(t)).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "kdiff/common.hpp"
#include "kdiff/greens.hpp"

namespace kdiff {

inline constexpr double kNoTreatedDistance = std::numeric_limits<double>::infinity();

struct UnitLocation {
  int unit_id = 0;
  double x = 0.0;  // km
  double y = 0.0;  // km
};

struct TreatmentSchedule {
  std::set<int> treated_set;          // eventually-treated unit ids
  std::map<int, int> adoption_time;   // unit id -> adoption period T_i (1-based)

  bool is_treated_at(int unit_id, int t) const {
    const auto it = adoption_time.find(unit_id);
    return it != adoption_time.end() && t >= it->second;
  }
};

struct PanelObservation {
  int unit_id = 0;
  int time = 0;        // period, 1..T
  double outcome = 0;  // Y_it
  bool treated = false;
  int tau = 0;                                   // periods since adoption, 0 if untreated
  double dist_nearest_treated = kNoTreatedDistance;  // d_i(t); +inf if none active
};

// Symmetric pairwise Euclidean distance matrix (km).
inline Matrix<double> pairwise_distances(const std::vector<UnitLocation>& units) {
  if (units.empty()) throw validation_error("pairwise_distances: need at least one unit");
  for (const auto& u : units)
    if (!std::isfinite(u.x) || !std::isfinite(u.y))
      throw validation_error("pairwise_distances: non-finite coordinate");
  const std::size_t n = units.size();
  Matrix<double> d(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = std::hypot(units[i].x - units[j].x, units[i].y - units[j].y);
      d(i, j) = d(j, i) = v;
    }
  return d;
}

struct Exposure {
  // Both matrices are N x T, indexed by (unit index, t - 1).
  Matrix<int> tau;
  Matrix<double> dist;
};

// Derive (tau_it, d_i(t)) for every unit and period from the schedule alone.
inline Exposure derive_exposure(const std::vector<UnitLocation>& units,
                                const TreatmentSchedule& schedule, int T) {
  for (const auto& [id, ti] : schedule.adoption_time) {
    if (!schedule.treated_set.count(id))
      throw validation_error("derive_exposure: adoption_time key not in treated_set");
    if (ti < 1 || ti > T)
      throw validation_error("derive_exposure: adoption time outside 1..T");
  }
  std::map<int, std::size_t> index;
  for (std::size_t i = 0; i < units.size(); ++i) index[units[i].unit_id] = i;
  for (int id : schedule.treated_set)
    if (!index.count(id))
      throw validation_error("derive_exposure: schedule references unknown unit " +
                             std::to_string(id));

  const auto dmat = pairwise_distances(units);
  const std::size_t n = units.size();
  Exposure e{Matrix<int>(n, T), Matrix<double>(n, T, kNoTreatedDistance)};
  for (std::size_t i = 0; i < n; ++i) {
    const int id = units[i].unit_id;
    const auto adopt = schedule.adoption_time.find(id);
    for (int t = 1; t <= T; ++t) {
      if (adopt != schedule.adoption_time.end() && t >= adopt->second)
        e.tau(i, t - 1) = t - adopt->second;
      double best = kNoTreatedDistance;
      for (int j_id : schedule.treated_set) {
        const int tj = schedule.adoption_time.at(j_id);
        if (t < tj) continue;  // not yet active
        best = std::min(best, dmat(i, index.at(j_id)));
      }
      e.dist(i, t - 1) = best;
    }
  }
  return e;
}

struct PanelDataset {
  std::vector<UnitLocation> units;
  TreatmentSchedule schedule;
  int n_periods = 0;                       // T
  std::vector<PanelObservation> obs;       // row-major: unit-major, time-minor
  std::optional<GreensSpec> domain;        // declared domain, when bounded

  std::size_t n_units() const { return units.size(); }

  const PanelObservation& at(std::size_t unit_index, int t) const {
    return obs[unit_index * n_periods + (t - 1)];
  }
  PanelObservation& at(std::size_t unit_index, int t) {
    return obs[unit_index * n_periods + (t - 1)];
  }

  // Recompute derived fields from (units, schedule) and verify internal
  // consistency; throws on violation. Called by load_csv and the simulator.
  void revalidate() {
    if (units.empty() || n_periods < 1)
      throw validation_error("PanelDataset: empty panel");
    if (obs.size() != units.size() * static_cast<std::size_t>(n_periods))
      throw validation_error("PanelDataset: unbalanced panel (expected one observation "
                             "per unit-period)");
    if (domain) {
      domain->validate();
      if (domain->condition != BoundaryCondition::Unbounded)
        for (const auto& u : units)
          if (u.x < 0.0 || u.x > domain->Lx || u.y < 0.0 || u.y > domain->Ly)
            throw validation_error("PanelDataset: unit " + std::to_string(u.unit_id) +
                                   " lies outside the declared bounded domain");
    }
    std::set<int> seen;
    for (const auto& u : units)
      if (!seen.insert(u.unit_id).second)
        throw validation_error("PanelDataset: duplicate unit_id " +
                               std::to_string(u.unit_id));
    const auto e = derive_exposure(units, schedule, n_periods);
    for (std::size_t i = 0; i < units.size(); ++i) {
      for (int t = 1; t <= n_periods; ++t) {
        auto& o = at(i, t);
        if (o.unit_id != units[i].unit_id || o.time != t)
          throw validation_error("PanelDataset: observation grid out of order");
        o.treated = schedule.is_treated_at(o.unit_id, t);
        o.tau = e.tau(i, t - 1);
        o.dist_nearest_treated = e.dist(i, t - 1);
      }
    }
  }
};

// ---------------------------------------------------------------------------
// CSV interface.
// Schema (header required): unit_id,time,x_km,y_km,treated,adoption_time,outcome
// adoption_time is empty for never-treated units; one row per (unit, time).
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

inline void write_csv(const PanelDataset& d, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw validation_error("write_csv: cannot open " + path);
  f << "unit_id,time,x_km,y_km,treated,adoption_time,outcome\n";
  char buf[64];
  for (std::size_t i = 0; i < d.n_units(); ++i) {
    const auto& u = d.units[i];
    const auto adopt = d.schedule.adoption_time.find(u.unit_id);
    for (int t = 1; t <= d.n_periods; ++t) {
      const auto& o = d.at(i, t);
      f << u.unit_id << ',' << t << ',';
      std::snprintf(buf, sizeof buf, "%.17g,%.17g", u.x, u.y);
      f << buf << ',' << (o.treated ? 1 : 0) << ',';
      if (adopt != d.schedule.adoption_time.end()) f << adopt->second;
      std::snprintf(buf, sizeof buf, "%.17g", o.outcome);
      f << ',' << buf << '\n';
    }
  }
}

inline PanelDataset load_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw validation_error("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw validation_error("load_csv: empty file " + path);
  const auto header = detail::split_csv_line(line);
  const std::vector<std::string> expected = {"unit_id", "time",          "x_km",
                                             "y_km",    "treated",       "adoption_time",
                                             "outcome"};
  if (header != expected)
    throw validation_error("load_csv: header mismatch; expected "
                           "unit_id,time,x_km,y_km,treated,adoption_time,outcome");

  struct Row {
    int unit, time, treated;
    double x, y, outcome;
    std::optional<int> adopt;
    int lineno;
  };
  std::vector<Row> rows;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != expected.size())
      throw validation_error("load_csv: line " + std::to_string(lineno) + ": expected " +
                             std::to_string(expected.size()) + " columns, got " +
                             std::to_string(cells.size()));
    Row r{};
    r.lineno = lineno;
    try {
      r.unit = std::stoi(cells[0]);
      r.time = std::stoi(cells[1]);
      r.x = std::stod(cells[2]);
      r.y = std::stod(cells[3]);
      r.treated = std::stoi(cells[4]);
      if (!cells[5].empty()) r.adopt = std::stoi(cells[5]);
      r.outcome = std::stod(cells[6]);
    } catch (const std::exception&) {
      throw validation_error("load_csv: line " + std::to_string(lineno) +
                             ": unparseable field");
    }
    rows.push_back(r);
  }
  if (rows.empty()) throw validation_error("load_csv: no data rows in " + path);

  PanelDataset d;
  int tmax = 0;
  for (const auto& r : rows) tmax = std::max(tmax, r.time);
  d.n_periods = tmax;

  std::map<int, Row> first_row;  // per unit
  std::set<std::pair<int, int>> seen;
  for (const auto& r : rows) {
    if (!seen.insert({r.unit, r.time}).second)
      throw validation_error("load_csv: line " + std::to_string(r.lineno) +
                             ": duplicate (unit,time) = (" + std::to_string(r.unit) + "," +
                             std::to_string(r.time) + ")");
    first_row.try_emplace(r.unit, r);
  }
  for (const auto& [id, r] : first_row) {
    d.units.push_back({id, r.x, r.y});
    if (r.adopt) {
      d.schedule.treated_set.insert(id);
      d.schedule.adoption_time[id] = *r.adopt;
    }
  }
  std::map<int, std::size_t> index;
  for (std::size_t i = 0; i < d.units.size(); ++i) index[d.units[i].unit_id] = i;

  d.obs.assign(d.units.size() * tmax, PanelObservation{});
  std::vector<int> fill_count(d.units.size(), 0);
  for (const auto& r : rows) {
    if (r.time < 1)
      throw validation_error("load_csv: line " + std::to_string(r.lineno) +
                             ": time must be >= 1");
    const auto i = index.at(r.unit);
    auto& o = d.obs[i * tmax + (r.time - 1)];
    o.unit_id = r.unit;
    o.time = r.time;
    o.outcome = r.outcome;
    // Validate per-row treated flag / adoption consistency before revalidate
    // overwrites derived fields.
    const bool want = r.adopt && r.time >= *r.adopt;
    if ((r.treated != 0) != want)
      throw validation_error("load_csv: line " + std::to_string(r.lineno) +
                             ": treated flag inconsistent with adoption_time");
    const auto stored = d.schedule.adoption_time.find(r.unit);
    const bool stored_adopt = stored != d.schedule.adoption_time.end();
    if (stored_adopt != static_cast<bool>(r.adopt) ||
        (r.adopt && stored->second != *r.adopt))
      throw validation_error("load_csv: line " + std::to_string(r.lineno) +
                             ": adoption_time differs across rows of unit " +
                             std::to_string(r.unit));
    ++fill_count[i];
  }
  for (std::size_t i = 0; i < d.units.size(); ++i)
    if (fill_count[i] != tmax)
      throw validation_error("load_csv: unbalanced panel; unit " +
                             std::to_string(d.units[i].unit_id) + " has " +
                             std::to_string(fill_count[i]) + " of " +
                             std::to_string(tmax) + " periods");
  d.revalidate();
  return d;
}

}  // namespace kdiff
