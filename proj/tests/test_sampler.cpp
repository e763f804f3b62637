#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "sde/errors.hpp"
#include "sde/fit.hpp"
#include "sde/rng.hpp"
#include "sde/sampler.hpp"

using namespace sde;

TEST_CASE("random walk samples a standard normal") {
  auto lp = [](const Eigen::VectorXd& x) { return -0.5 * x.squaredNorm(); };
  SamplerResult r = random_walk_metropolis(lp, Eigen::VectorXd::Zero(1), 40000, 4);
  REQUIRE(r.draws.rows() == 20000);  // second half kept
  CHECK(r.acceptance_ok);
  CHECK(r.acceptance > 0.05);
  CHECK(r.acceptance < 0.7);
  double mean = r.draws.col(0).mean();
  double sd = std::sqrt((r.draws.col(0).array() - mean).square().mean());
  CHECK(std::abs(mean) < 0.1);
  CHECK(sd == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("chains are deterministic in the seed") {
  auto lp = [](const Eigen::VectorXd& x) { return -0.5 * x.squaredNorm(); };
  SamplerResult a = random_walk_metropolis(lp, Eigen::VectorXd::Zero(2), 2000, 11);
  SamplerResult b = random_walk_metropolis(lp, Eigen::VectorXd::Zero(2), 2000, 11);
  SamplerResult c = random_walk_metropolis(lp, Eigen::VectorXd::Zero(2), 2000, 12);
  CHECK((a.draws - b.draws).norm() == 0.0);
  CHECK(a.acceptance == b.acceptance);
  CHECK((a.draws - c.draws).norm() > 0.0);
}

TEST_CASE("degenerate sampler inputs") {
  auto lp = [](const Eigen::VectorXd& x) { return -0.5 * x.squaredNorm(); };
  SamplerResult empty = random_walk_metropolis(lp, Eigen::VectorXd::Zero(1), 0, 1);
  CHECK(empty.draws.rows() == 0);
  CHECK_THROWS_AS(random_walk_metropolis(lp, Eigen::VectorXd::Zero(1), -5, 1), ConfigError);

  auto bad = [](const Eigen::VectorXd&) { return std::numeric_limits<double>::quiet_NaN(); };
  CHECK_THROWS_AS(random_walk_metropolis(bad, Eigen::VectorXd::Zero(1), 100, 1), NumericalError);
}

TEST_CASE("a shaped proposal keeps acceptance healthy on a skewed target") {
  // Two nearly independent coordinates with very different scales.
  Eigen::Vector2d s(0.05, 20.0);
  auto lp = [&](const Eigen::VectorXd& x) {
    return -0.5 * (x.array() / s.array()).square().sum();
  };
  auto step = [&](const Eigen::VectorXd& z) -> Eigen::VectorXd { return (z.array() * s.array()); };
  SamplerResult r = random_walk_metropolis(lp, Eigen::VectorXd::Zero(2), 30000, 8, {}, step);
  CHECK(r.acceptance_ok);
  double sd0 = std::sqrt(r.draws.col(0).array().square().mean());
  double sd1 = std::sqrt(r.draws.col(1).array().square().mean());
  CHECK(sd0 == doctest::Approx(0.05).epsilon(0.2));
  CHECK(sd1 == doctest::Approx(20.0).epsilon(0.2));
}

TEST_CASE("metropolis agrees with the Laplace mean on a pooled fit") {
  DomainGrid grid{30, 30, 2001, 2001};
  CellCounts counts;
  counts.grid = grid;
  counts.n = Eigen::ArrayXi::Constant(1, 400);
  counts.k = Eigen::ArrayXi::Constant(1, 120);
  BinomialFieldFit fit = fit_partial_pool(counts);
  SamplerResult r = mh_sampler(fit, 30000, 21);
  CHECK(r.acceptance_ok);
  Eigen::VectorXd mean = r.draws.colwise().mean();
  CHECK(std::abs(mean[0] - fit.theta[0]) < 0.05);
}
