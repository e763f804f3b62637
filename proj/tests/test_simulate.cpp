#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "sde/errors.hpp"
#include "sde/fit.hpp"
#include "sde/panel.hpp"
#include "sde/simulate.hpp"

using namespace sde;

namespace {

ScenarioSpec small_spec(double p_exit, double p_entry) {
  ScenarioSpec s = preset("homogeneous", 0);
  s.grid = DomainGrid{30, 33, 2001, 2004};
  s.n_baseline = 30000;
  s.n_topup = 0;
  s.topup_year = 2001;
  s.dropout = 0.0;
  s.init_prevalence = 0.5;
  s.p_exit = [p_exit](int, int) { return p_exit; };
  s.p_entry = [p_entry](int, int) { return p_entry; };
  return s;
}

}  // namespace

TEST_CASE("transition frequencies converge to the planted surfaces") {
  ScenarioSpec spec = small_spec(0.3, 0.1);
  SimResult sim = generate(spec, 42);
  CellCounts exits = aggregate(extract_transitions(sim.panel, Direction::exit, sim.grid), sim.grid);
  CellCounts entries =
      aggregate(extract_transitions(sim.panel, Direction::entry, sim.grid), sim.grid);
  for (int c = 0; c < sim.grid.n_cells(); ++c) {
    if (exits.n[c] > 1000) {
      double p = static_cast<double>(exits.k[c]) / exits.n[c];
      CHECK(std::abs(p - 0.3) < 0.02);
    }
    if (entries.n[c] > 1000) {
      double p = static_cast<double>(entries.k[c]) / entries.n[c];
      CHECK(std::abs(p - 0.1) < 0.02);
    }
  }
  CHECK((sim.true_exit == 0.3).all());
  CHECK((sim.true_entry == 0.1).all());
}

TEST_CASE("a zero surface is an absorbing state") {
  ScenarioSpec spec = small_spec(0.0, 0.05);
  SimResult sim = generate(spec, 7);
  CellCounts exits = aggregate(extract_transitions(sim.panel, Direction::exit, sim.grid), sim.grid);
  CHECK(exits.total_n() > 0);
  CHECK(exits.total_k() == 0);
}

TEST_CASE("panels regenerate bit for bit from the seed") {
  ScenarioSpec spec = small_spec(0.3, 0.1);
  spec.n_baseline = 500;
  SimResult a = generate(spec, 9);
  SimResult b = generate(spec, 9);
  SimResult c = generate(spec, 10);
  REQUIRE(a.panel.size() == b.panel.size());
  bool same = true;
  for (size_t i = 0; i < a.panel.size(); ++i) {
    same = same && a.panel[i].person_id == b.panel[i].person_id &&
           a.panel[i].year == b.panel[i].year && a.panel[i].age == b.panel[i].age &&
           a.panel[i].has == b.panel[i].has && a.panel[i].mh == b.panel[i].mh;
  }
  CHECK(same);
  bool differs = c.panel.size() != a.panel.size();
  for (size_t i = 0; !differs && i < a.panel.size(); ++i)
    differs = a.panel[i].mh != c.panel[i].mh;
  CHECK(differs);
}

TEST_CASE("modified-effect preset plants the documented surface") {
  ScenarioSpec spec = preset("has_effect_modified", 0);
  spec.n_baseline = 50;  // truth surfaces do not depend on the panel size
  SimResult sim = generate(spec, 1);
  CHECK(sim.true_effect.minCoeff() == doctest::Approx(-2.45 * 1.551));
  CHECK(sim.true_effect.maxCoeff() == doctest::Approx(-2.45 * 0.449));
  CHECK(sim.true_effect.mean() == doctest::Approx(-2.45).epsilon(1e-9));
  // Strongest where the modifier peaks: oldest age, latest year.
  CHECK(sim.true_effect[sim.grid.index_of(64, 2016)] == doctest::Approx(sim.true_effect.minCoeff()));
  CHECK(sim.true_effect[sim.grid.index_of(25, 2001)] == doctest::Approx(sim.true_effect.maxCoeff()));
}

TEST_CASE("gradient preset slopes the right way and noise is seed-baked") {
  ScenarioSpec g = preset("smooth_gradient", 0);
  CHECK(g.p_exit(25, 2001) > g.p_exit(64, 2016));
  CHECK(g.p_entry(25, 2001) < g.p_entry(25, 2016));

  ScenarioSpec w1 = preset("white_noise", 1);
  ScenarioSpec w1b = preset("white_noise", 1);
  ScenarioSpec w2 = preset("white_noise", 2);
  CHECK(w1.p_exit(30, 2005) == w1b.p_exit(30, 2005));
  CHECK(w1.p_exit(30, 2005) != w2.p_exit(30, 2005));

  CHECK_THROWS_AS(preset("drifting", 0), ConfigError);
}

TEST_CASE("top-up wave swells the panel in its year") {
  ScenarioSpec spec = preset("homogeneous", 0);
  spec.grid = DomainGrid{25, 34, 2001, 2010};
  spec.n_baseline = 5000;
  spec.n_topup = 2000;
  spec.topup_year = 2006;
  spec.dropout = 0.10;
  SimResult sim = generate(spec, 3);
  std::map<int, long> rows_per_year;
  for (const auto& r : sim.panel) ++rows_per_year[r.year];
  CHECK(rows_per_year[2006] > rows_per_year[2005] + 1000);
}

TEST_CASE("scenario validation rejects malformed truth") {
  ScenarioSpec spec = preset("homogeneous", 0);
  spec.init_prevalence = 0.0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = preset("homogeneous", 0);
  spec.p_exit = [](int, int) { return 1.2; };
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = preset("homogeneous", 0);
  spec.s1 = [](int, int) { return 0.5; };  // not mean zero
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = preset("homogeneous", 0);
  spec.n_topup = 10;
  spec.topup_year = 1990;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("truth tables land on disk with one row per cell") {
  ScenarioSpec spec = small_spec(0.3, 0.1);
  spec.n_baseline = 100;
  SimResult sim = generate(spec, 5);
  auto tmp = std::filesystem::temp_directory_path();
  std::string tpath = (tmp / "sde_truth_trans.csv").string();
  std::string epath = (tmp / "sde_truth_eff.csv").string();
  write_truth_transitions_csv(tpath, sim);
  write_truth_effects_csv(epath, sim);

  std::ifstream tin(tpath);
  std::string line;
  std::getline(tin, line);
  CHECK(line == "age,year,p_exit,p_entry");
  int rows = 0;
  while (std::getline(tin, line))
    if (!line.empty()) ++rows;
  CHECK(rows == sim.grid.n_cells());
  tin.close();

  std::ifstream ein(epath);
  std::getline(ein, line);
  CHECK(line == "age,year,effect");
  ein.close();
  std::remove(tpath.c_str());
  std::remove(epath.c_str());
}
