#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "sde/errors.hpp"
#include "sde/mh_model.hpp"
#include "sde/rng.hpp"

using namespace sde;

namespace {

// Draws diff records from dy ~ N(alpha + beta1 y + beta2 M, sigma(y)) with
// exposure assigned at random and cells cycling over the grid.
std::vector<DiffRecord> synth_diffs(const DomainGrid& grid, int n, double alpha, double beta1,
                                    double beta2, double ls0, double ls1, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<DiffRecord> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    DiffRecord r;
    r.cell = grid.cell_at(i % grid.n_cells());
    r.y_prev = rng.uniform(40.0, 90.0);
    r.exposed = rng.uniform() < 0.4 ? 1 : 0;
    double sigma = std::exp(ls0 + ls1 * r.y_prev);
    r.dy = alpha + beta1 * r.y_prev + beta2 * r.exposed + sigma * rng.normal();
    out.push_back(r);
  }
  return out;
}

}  // namespace

TEST_CASE("complete baseline recovers slope, intercept and noise scale") {
  DomainGrid grid{30, 33, 2001, 2004};
  auto records = synth_diffs(grid, 4000, 20.0, -0.25, 0.0, std::log(5.0), 0.0, 101);
  MhModelSpec spec;
  spec.pooling = MhPooling::complete;
  spec.form = MhForm::baseline;
  MhFit fit = fit_mh_model(spec, records, grid);
  REQUIRE(fit.converged);
  CHECK(std::abs(fit.theta[fit.i_alpha] - 20.0) < 1.5);
  CHECK(std::abs(fit.beta1() + 0.25) < 0.03);
  CHECK(fit.i_beta2 == -1);
  CHECK(fit.beta2() == 0.0);
  for (double y : {45.0, 65.0, 85.0})
    CHECK(std::abs(fit.log_sigma_at(y, fit.theta) - std::log(5.0)) < 0.12);
}

TEST_CASE("noise scale spline tracks heteroscedasticity") {
  DomainGrid grid{30, 31, 2001, 2002};
  auto records = synth_diffs(grid, 5000, 10.0, -0.15, 0.0, 2.2, -0.02, 33);
  MhModelSpec spec;
  spec.pooling = MhPooling::complete;
  MhFit fit = fit_mh_model(spec, records, grid);
  REQUIRE(fit.converged);
  CHECK(fit.log_sigma_at(45.0, fit.theta) > fit.log_sigma_at(85.0, fit.theta));
  CHECK(std::abs(fit.log_sigma_at(50.0, fit.theta) - (2.2 - 0.02 * 50.0)) < 0.2);
  CHECK(std::abs(fit.log_sigma_at(80.0, fit.theta) - (2.2 - 0.02 * 80.0)) < 0.2);
}

TEST_CASE("main-effect form shifts every cell by the same amount") {
  DomainGrid grid{30, 33, 2001, 2004};
  auto records = synth_diffs(grid, 1600, 15.0, -0.2, -2.0, std::log(4.0), 0.0, 7);
  MhModelSpec spec;
  spec.pooling = MhPooling::tensor;
  spec.form = MhForm::has_main;
  spec.smooth.n_interior = 2;
  Eigen::VectorXd hyper(2);
  hyper << 10.0, 10.0;
  MhFit fit = fit_mh_model_fixed(spec, records, grid, hyper);
  REQUIRE(fit.converged);
  CHECK(std::abs(fit.beta2() + 2.0) < 0.8);

  Rng rng(99);
  Eigen::VectorXd th = normal_vector(rng, fit.q());
  for (int c : {0, 5, 11}) {
    DomainCell cell = grid.cell_at(c);
    double d50 = fit.mu_at(cell, 50.0, 1, th) - fit.mu_at(cell, 50.0, 0, th);
    double d80 = fit.mu_at(cell, 80.0, 1, th) - fit.mu_at(cell, 80.0, 0, th);
    CHECK(std::abs(d50 - th[fit.i_beta2]) < 1e-12);
    CHECK(std::abs(d80 - th[fit.i_beta2]) < 1e-12);
  }
}

TEST_CASE("arm-split surfaces vary by cell but not by the score level") {
  DomainGrid grid{30, 33, 2001, 2004};
  auto records = synth_diffs(grid, 2400, 15.0, -0.2, -2.4, std::log(4.0), 0.0, 21);
  MhModelSpec spec;
  spec.pooling = MhPooling::tensor;
  spec.form = MhForm::has_modified;
  spec.smooth.n_interior = 2;
  Eigen::VectorXd hyper(2);
  hyper << 5.0, 5.0;
  MhFit fit = fit_mh_model_fixed(spec, records, grid, hyper);
  REQUIRE(fit.converged);
  CHECK(fit.dim_s > 0);
  CHECK(fit.dim_s2 > 0);

  Rng rng(5);
  Eigen::VectorXd th = normal_vector(rng, fit.q());
  DomainCell cell = grid.cell_at(3);
  double d50 = fit.mu_at(cell, 50.0, 1, th) - fit.mu_at(cell, 50.0, 0, th);
  double d80 = fit.mu_at(cell, 80.0, 1, th) - fit.mu_at(cell, 80.0, 0, th);
  CHECK(d50 == doctest::Approx(d80).epsilon(1e-12));
}

TEST_CASE("partial pooling marks which cells carry their own effect") {
  DomainGrid grid{30, 34, 2001, 2005};
  // Only populate a corner of the grid.
  DomainGrid corner{30, 31, 2001, 2002};
  auto records = synth_diffs(corner, 800, 12.0, -0.18, 0.0, std::log(4.0), 0.0, 13);
  MhModelSpec spec;
  spec.pooling = MhPooling::partial;
  MhFit fit = fit_mh_model(spec, records, grid);
  REQUIRE(fit.converged);
  CHECK(fit.sigma_d > 0.0);
  CHECK(fit.level_defined[grid.index_of(30, 2001)]);
  CHECK_FALSE(fit.level_defined[grid.index_of(34, 2005)]);
  CHECK(fit.cell_effect_defined({30, 2001}, 0));
  CHECK_FALSE(fit.cell_effect_defined({34, 2005}, 0));
  // Cells without their own effect fall back to the global line.
  double mu = fit.mu_at({34, 2005}, 60.0, 0, fit.theta);
  CHECK(mu == doctest::Approx(fit.theta[fit.i_alpha] + fit.beta1() * 60.0));
}

TEST_CASE("model spec validation") {
  MhModelSpec spec;
  spec.pooling = MhPooling::complete;
  spec.form = MhForm::has_modified;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.form = MhForm::has_main;
  CHECK_NOTHROW(spec.validate());
  spec.var_df = 3;
  CHECK_THROWS_AS(spec.validate(), ConfigError);

  CHECK(parse_pooling("partial") == MhPooling::partial);
  CHECK(parse_mh_form("has_modified") == MhForm::has_modified);
  CHECK_THROWS_AS(parse_pooling("mixed"), ConfigError);
  CHECK_THROWS_AS(parse_mh_form("interaction"), ConfigError);
  CHECK(pooling_name(MhPooling::tensor) == "tensor");
  CHECK(mh_form_name(MhForm::baseline) == "baseline");
}

TEST_CASE("empty or constant inputs are rejected") {
  DomainGrid grid{30, 31, 2001, 2002};
  MhModelSpec spec;
  spec.pooling = MhPooling::complete;
  CHECK_THROWS_AS(fit_mh_model(spec, {}, grid), DataError);
}

TEST_CASE("positive-part log determinant") {
  Eigen::VectorXd d(4);
  d << 0.0, 0.0, 2.0, 3.0;
  Eigen::MatrixXd k = d.asDiagonal();
  CHECK(logdet_positive_part(k, 2) == doctest::Approx(std::log(6.0)));
  CHECK_THROWS_AS(logdet_positive_part(k, 1), NumericalError);
  CHECK_THROWS_AS(logdet_positive_part(k, -1), ConfigError);
  CHECK_THROWS_AS(logdet_positive_part(k, 5), ConfigError);
}

TEST_CASE("refitting at the selected scale reproduces the fit") {
  DomainGrid grid{30, 32, 2001, 2003};
  auto records = synth_diffs(grid, 900, 14.0, -0.2, 0.0, std::log(4.5), 0.0, 55);
  MhModelSpec spec;
  spec.pooling = MhPooling::partial;
  MhFit fit = fit_mh_model(spec, records, grid);
  REQUIRE(fit.converged);
  REQUIRE(fit.hyper.size() == 1);
  CHECK(fit.hyper_names[0] == "sigma_d");
  MhFit refit = fit_mh_model_fixed(spec, records, grid, fit.hyper);
  CHECK((fit.theta - refit.theta).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(std::abs(fit.lml - refit.lml) < 1e-6);
}

TEST_CASE("posterior draws are reproducible") {
  DomainGrid grid{30, 31, 2001, 2002};
  auto records = synth_diffs(grid, 600, 12.0, -0.15, 0.0, std::log(4.0), 0.0, 3);
  MhModelSpec spec;
  spec.pooling = MhPooling::complete;
  MhFit fit = fit_mh_model(spec, records, grid);
  Eigen::MatrixXd d1 = fit.draw_theta(100, 17);
  Eigen::MatrixXd d2 = fit.draw_theta(100, 17);
  CHECK((d1 - d2).norm() == 0.0);
  CHECK(d1.rows() == 100);
  CHECK(d1.cols() == fit.q());
  // log_posterior peaks at the mode.
  double at_mode = fit.log_posterior(fit.theta);
  Eigen::VectorXd off = fit.theta;
  off[fit.i_alpha] += 0.5;
  CHECK(at_mode > fit.log_posterior(off));
}
