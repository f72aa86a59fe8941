#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include <unistd.h>

#include "kdiff/panel.hpp"
#include "kdiff/rng.hpp"
#include "kdiff/simulate.hpp"

using namespace kdiff;

namespace {

std::string temp_path(const char* tag) {
  return std::string("/tmp/kdiff_test_") + tag + "_" + std::to_string(::getpid()) + ".csv";
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream f(path);
  f << body;
}

}  // namespace

TEST_CASE("pairwise_distances matches direct computation and validates input") {
  std::vector<UnitLocation> u = {{0, 0.0, 0.0}, {1, 3.0, 4.0}, {2, -3.0, 0.0}};
  const auto d = pairwise_distances(u);
  CHECK(d(0, 0) == 0.0);
  CHECK_THAT(d(0, 1), Catch::Matchers::WithinAbs(5.0, 1e-14));
  CHECK_THAT(d(1, 2), Catch::Matchers::WithinAbs(std::hypot(6.0, 4.0), 1e-14));
  CHECK(d(1, 2) == d(2, 1));
  std::vector<UnitLocation> bad = {{0, 0.0, std::nan("")}};
  REQUIRE_THROWS_AS(pairwise_distances(bad), validation_error);
}

TEST_CASE("derive_exposure matches a brute-force oracle on a random instance") {
  Rng rng(17, 0);
  const int N = 12, T = 8;
  std::vector<UnitLocation> units;
  for (int i = 0; i < N; ++i)
    units.push_back({i, rng.uniform(0.0, 100.0), rng.uniform(0.0, 100.0)});
  TreatmentSchedule sch;
  for (int id : {1, 4, 9}) {
    sch.treated_set.insert(id);
    sch.adoption_time[id] = static_cast<int>(rng.uniform_int(2, T - 1));
  }
  const auto e = derive_exposure(units, sch, T);
  for (int i = 0; i < N; ++i)
    for (int t = 1; t <= T; ++t) {
      // tau oracle.
      int tau = 0;
      const auto it = sch.adoption_time.find(i);
      if (it != sch.adoption_time.end() && t >= it->second) tau = t - it->second;
      CHECK(e.tau(i, t - 1) == tau);
      // nearest active treated distance oracle.
      double best = kNoTreatedDistance;
      for (int j : sch.treated_set)
        if (t >= sch.adoption_time.at(j))
          best = std::min(best, std::hypot(units[i].x - units[j].x,
                                           units[i].y - units[j].y));
      if (std::isinf(best))
        CHECK(std::isinf(e.dist(i, t - 1)));
      else
        CHECK_THAT(e.dist(i, t - 1), Catch::Matchers::WithinAbs(best, 1e-12));
    }
}

TEST_CASE("derive_exposure validates the schedule") {
  std::vector<UnitLocation> units = {{0, 0, 0}, {1, 1, 1}};
  TreatmentSchedule sch;
  sch.adoption_time[0] = 2;  // key not in treated_set
  REQUIRE_THROWS_AS(derive_exposure(units, sch, 5), validation_error);
  sch.treated_set.insert(0);
  sch.adoption_time[0] = 9;  // outside 1..T
  REQUIRE_THROWS_AS(derive_exposure(units, sch, 5), validation_error);
  sch.adoption_time[0] = 2;
  sch.treated_set.insert(7);  // unknown unit
  sch.adoption_time[7] = 2;
  REQUIRE_THROWS_AS(derive_exposure(units, sch, 5), validation_error);
}

TEST_CASE("CSV round trip preserves the panel exactly") {
  PulseConfig cfg;
  cfg.n_units = 30;
  cfg.n_periods = 8;
  cfg.n_treat = 3;
  cfg.adopt_time = 4;
  cfg.seed = 99;
  const auto sim = simulate_pulse(cfg);
  const auto path = temp_path("roundtrip");
  write_csv(sim.dataset, path);
  const auto back = load_csv(path);
  std::remove(path.c_str());

  REQUIRE(back.n_units() == sim.dataset.n_units());
  REQUIRE(back.n_periods == sim.dataset.n_periods);
  REQUIRE(back.schedule.adoption_time == sim.dataset.schedule.adoption_time);
  for (std::size_t i = 0; i < back.n_units(); ++i) {
    CHECK(back.units[i].unit_id == sim.dataset.units[i].unit_id);
    CHECK(back.units[i].x == sim.dataset.units[i].x);  // 17 digits: bit-exact
    CHECK(back.units[i].y == sim.dataset.units[i].y);
    for (int t = 1; t <= back.n_periods; ++t) {
      const auto& a = back.at(i, t);
      const auto& b = sim.dataset.at(i, t);
      CHECK(a.outcome == b.outcome);
      CHECK(a.treated == b.treated);
      CHECK(a.tau == b.tau);
      if (std::isinf(b.dist_nearest_treated))
        CHECK(std::isinf(a.dist_nearest_treated));
      else
        CHECK(a.dist_nearest_treated == b.dist_nearest_treated);
    }
  }
}

TEST_CASE("load_csv rejects malformed inputs with line-level diagnostics") {
  const auto path = temp_path("bad");
  const std::string header = "unit_id,time,x_km,y_km,treated,adoption_time,outcome\n";

  SECTION("wrong header") {
    write_text(path, "unit,period,x,y,d,a,o\n1,1,0,0,0,,1.0\n");
    REQUIRE_THROWS_AS(load_csv(path), validation_error);
  }
  SECTION("wrong column count") {
    write_text(path, header + "1,1,0,0,0,1.0\n");
    REQUIRE_THROWS_WITH(load_csv(path), Catch::Matchers::ContainsSubstring("line 2"));
  }
  SECTION("unparseable field") {
    write_text(path, header + "1,1,zero,0,0,,1.0\n");
    REQUIRE_THROWS_WITH(load_csv(path), Catch::Matchers::ContainsSubstring("unparseable"));
  }
  SECTION("duplicate unit-period") {
    write_text(path, header + "1,1,0,0,0,,1.0\n1,1,0,0,0,,2.0\n");
    REQUIRE_THROWS_WITH(load_csv(path), Catch::Matchers::ContainsSubstring("duplicate"));
  }
  SECTION("treated flag inconsistent with adoption time") {
    write_text(path, header + "1,1,0,0,1,2,1.0\n1,2,0,0,1,2,1.0\n");
    REQUIRE_THROWS_WITH(load_csv(path), Catch::Matchers::ContainsSubstring("treated flag"));
  }
  SECTION("adoption time differs across rows of a unit") {
    write_text(path, header + "1,1,0,0,0,2,1.0\n1,2,0,0,1,3,1.0\n");
    REQUIRE_THROWS_AS(load_csv(path), validation_error);
  }
  SECTION("unbalanced panel") {
    write_text(path, header + "1,1,0,0,0,,1.0\n1,2,0,0,0,,1.0\n2,1,5,5,0,,1.0\n");
    REQUIRE_THROWS_WITH(load_csv(path), Catch::Matchers::ContainsSubstring("unbalanced"));
  }
  std::remove(path.c_str());
}

TEST_CASE("revalidate recomputes derived fields and catches inconsistencies") {
  PulseConfig cfg;
  cfg.n_units = 10;
  cfg.n_periods = 6;
  cfg.n_treat = 2;
  cfg.adopt_time = 3;
  cfg.seed = 7;
  auto sim = simulate_pulse(cfg);
  auto d = sim.dataset;
  // Tamper with a derived field; revalidate must restore it.
  d.at(0, 1).tau = 99;
  d.revalidate();
  CHECK(d.at(0, 1).tau == sim.dataset.at(0, 1).tau);
  // Structural damage is rejected.
  d.obs.pop_back();
  REQUIRE_THROWS_AS(d.revalidate(), validation_error);
}
