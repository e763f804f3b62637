#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sde/errors.hpp"
#include "sde/gcomp.hpp"
#include "sde/rng.hpp"

using namespace sde;

namespace {

std::vector<DiffRecord> synth_diffs(const DomainGrid& grid, int n, double beta2,
                                    std::uint64_t seed) {
  Rng rng(seed);
  std::vector<DiffRecord> out;
  for (int i = 0; i < n; ++i) {
    DiffRecord r;
    r.cell = grid.cell_at(i % grid.n_cells());
    r.y_prev = rng.uniform(40.0, 90.0);
    r.exposed = rng.uniform() < 0.5 ? 1 : 0;
    r.dy = 18.0 - 0.24 * r.y_prev + beta2 * r.exposed + 4.0 * rng.normal();
    out.push_back(r);
  }
  return out;
}

}  // namespace

TEST_CASE("zero-crossing shift") {
  CHECK(equilibrium_shift(-0.5, -1.0) == doctest::Approx(-2.0));
  CHECK(equilibrium_shift(-0.33, -2.39) == doctest::Approx(-7.242424242424242));
  CHECK(equilibrium_shift(-0.4, 0.0) == 0.0);
  CHECK_THROWS_AS(equilibrium_shift(0.0, -2.0), NumericalError);
  CHECK_THROWS_AS(equilibrium_shift(5e-13, -2.0), NumericalError);
}

TEST_CASE("previous-score policies parse and validate") {
  YprevPolicy p = parse_policy("fixed");
  CHECK(p.kind == YprevPolicy::Kind::fixed);
  CHECK(p.value == 75.0);
  p = parse_policy("fixed:62.5");
  CHECK(p.value == 62.5);
  CHECK(policy_name(p) == "fixed:62.5");
  p = parse_policy("observed");
  CHECK(p.kind == YprevPolicy::Kind::observed);
  CHECK_THROWS_AS(parse_policy("typical"), ConfigError);
  CHECK_THROWS_AS(parse_policy("fixed:120"), ConfigError);
  CHECK_THROWS_AS(parse_policy("fixed:-1"), ConfigError);
}

TEST_CASE("main-effect model yields a flat effect surface") {
  DomainGrid grid{30, 33, 2001, 2004};
  auto records = synth_diffs(grid, 2000, -2.5, 77);
  MhModelSpec spec;
  spec.pooling = MhPooling::complete;
  spec.form = MhForm::has_main;
  MhFit fit = fit_mh_model(spec, records, grid);
  REQUIRE(fit.converged);

  GcompOptions opt;
  opt.n_draws = 500;
  opt.seed = 10;
  EffectSurface s = effect_surface(fit, opt);
  CHECK(s.mean_range() < 1e-8);
  CHECK(std::abs(s.overall_mean + 2.5) < 0.5);
  CHECK(s.overall_q025 < s.overall_mean);
  CHECK(s.overall_q975 > s.overall_mean);

  // Per draw the contrast is exactly beta2 in every cell.
  Eigen::MatrixXd draws = effect_draws(fit, 50, 3);
  for (int d = 0; d < draws.rows(); ++d)
    CHECK(std::abs(draws(d, 0) - draws(d, grid.n_cells() - 1)) < 1e-12);
}

TEST_CASE("effect contrasts ignore the previous-score policy") {
  DomainGrid grid{30, 32, 2001, 2003};
  auto records = synth_diffs(grid, 1500, -2.0, 13);
  MhModelSpec spec;
  spec.pooling = MhPooling::tensor;
  spec.form = MhForm::has_modified;
  spec.smooth.n_interior = 2;
  MhFit fit = fit_mh_model_fixed(spec, records, grid, Eigen::Vector2d(10.0, 10.0));
  REQUIRE(fit.converged);

  GcompOptions a;
  a.policy = parse_policy("fixed");  // 75
  a.n_draws = 200;
  a.seed = 5;
  GcompOptions b = a;
  b.policy = parse_policy("fixed:50");

  Eigen::MatrixXd da = effect_draws(fit, a.n_draws, a.seed);
  Eigen::MatrixXd db = effect_draws(fit, b.n_draws, b.seed);
  CHECK((da - db).norm() == 0.0);  // the contrast never touches y_prev

  EffectSurface sa = effect_surface(fit, a);
  EffectSurface sb = effect_surface(fit, b);
  CHECK((sa.mean - sb.mean).abs().maxCoeff() == 0.0);
  CHECK(sa.overall_mean == sb.overall_mean);
  CHECK(sa.overall_q025 == sb.overall_q025);

  // Single-arm surfaces do depend on it.
  CounterfactualSurface ca = counterfactual_surface(fit, 1, a);
  CounterfactualSurface cb = counterfactual_surface(fit, 1, b);
  CHECK((ca.mean - cb.mean).abs().maxCoeff() > 0.1);

  // And exposed minus unexposed recovers the effect surface exactly.
  CounterfactualSurface c0 = counterfactual_surface(fit, 0, a);
  CHECK((ca.mean - c0.mean - sa.mean).abs().maxCoeff() < 1e-9);
}

TEST_CASE("baseline models carry no stress contrast") {
  DomainGrid grid{30, 31, 2001, 2002};
  auto records = synth_diffs(grid, 400, 0.0, 19);
  MhModelSpec spec;
  spec.pooling = MhPooling::complete;
  spec.form = MhForm::baseline;
  MhFit fit = fit_mh_model(spec, records, grid);
  CHECK_THROWS_AS(effect_draws(fit, 10, 1), ConfigError);
  // Counterfactual surfaces still work; the arm is ignored.
  GcompOptions opt;
  opt.n_draws = 100;
  CounterfactualSurface c0 = counterfactual_surface(fit, 0, opt);
  CounterfactualSurface c1 = counterfactual_surface(fit, 1, opt);
  CHECK((c0.mean - c1.mean).abs().maxCoeff() == 0.0);
}

TEST_CASE("equilibrium summary brackets the mode") {
  DomainGrid grid{30, 32, 2001, 2003};
  auto records = synth_diffs(grid, 3000, -2.4, 23);
  MhModelSpec spec;
  spec.pooling = MhPooling::complete;
  spec.form = MhForm::has_main;
  MhFit fit = fit_mh_model(spec, records, grid);
  EquilibriumSummary eq = equilibrium_summary(fit, 2000, 7);
  CHECK(eq.point == doctest::Approx(equilibrium_shift(fit.beta1(), fit.beta2())));
  CHECK(eq.q025 < eq.point);
  CHECK(eq.q975 > eq.point);
  CHECK(std::abs(eq.mean - eq.point) < 1.0);
}

TEST_CASE("observed policy weights cells by their records") {
  DomainGrid grid{30, 31, 2001, 2002};
  auto records = synth_diffs(grid, 600, -1.5, 29);
  MhModelSpec spec;
  spec.pooling = MhPooling::complete;
  spec.form = MhForm::has_main;
  MhFit fit = fit_mh_model(spec, records, grid);
  GcompOptions opt;
  opt.policy = parse_policy("observed");
  opt.n_draws = 200;
  CHECK_THROWS_AS(effect_surface(fit, opt), ConfigError);  // records required
  EffectSurface s = effect_surface(fit, opt, &records);
  CHECK(s.observed_policy);
  CHECK(std::abs(s.overall_mean + 1.5) < 0.6);
}

TEST_CASE("effect artifacts list their identifying assumptions") {
  MhModelSpec spec;
  spec.pooling = MhPooling::tensor;
  spec.form = MhForm::has_modified;
  auto lines = assumptions_manifest(spec);
  int named = 0;
  bool adjustment = false;
  for (const auto& l : lines) {
    if (l.rfind("assumption", 0) == 0) ++named;
    if (l.find("adjust") != std::string::npos) adjustment = true;
  }
  CHECK(named == 3);
  CHECK(adjustment);

  DomainGrid grid{30, 31, 2001, 2002};
  auto records = synth_diffs(grid, 500, -2.0, 41);
  MhModelSpec cspec;
  cspec.pooling = MhPooling::complete;
  cspec.form = MhForm::has_main;
  MhFit fit = fit_mh_model(cspec, records, grid);
  GcompOptions opt;
  opt.n_draws = 100;
  EffectSurface s = effect_surface(fit, opt);
  std::string path = (std::filesystem::temp_directory_path() / "sde_effect.csv").string();
  write_effect_csv(path, s, cspec);
  std::ifstream in(path);
  std::string line;
  int comments = 0;
  std::string header;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#') {
      ++comments;
    } else {
      header = line;
      break;
    }
  }
  CHECK(comments >= 4);  // three assumptions, adjustment set, overall average
  CHECK(header == "age,year,mean,q025,q975");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == grid.n_cells());
  in.close();
  std::remove(path.c_str());
}
