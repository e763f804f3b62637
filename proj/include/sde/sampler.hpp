#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>

#include "sde/fit.hpp"
#include "sde/mh_model.hpp"

namespace sde {

// Random-walk Metropolis check of the Laplace approximation. The proposal is
// theta + scale * unit_step(z) with z iid standard normal, so passing the
// Laplace covariance factor as unit_step gives a well-scaled chain. The first
// half of the iterations is burn-in; the proposal scale adapts there and is
// frozen afterwards.

struct SamplerOptions {
  int adapt_window = 100;
  double init_scale = 0.0;  // 0 picks 2.38 / sqrt(dim)
};

struct SamplerResult {
  Eigen::MatrixXd draws;     // kept iterations x dim
  double acceptance = 0.0;   // after burn-in
  bool acceptance_ok = true; // false when acceptance leaves [0.05, 0.7]
  double scale = 0.0;        // final proposal scale
};

SamplerResult random_walk_metropolis(
    const std::function<double(const Eigen::VectorXd&)>& log_post, const Eigen::VectorXd& theta0,
    int n_iter, std::uint64_t seed, const SamplerOptions& opt = {},
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& unit_step = {});

// Chains started at the mode with the fit's own posterior covariance shaping
// the proposal. The target is the fit's own log posterior; for complete
// pooling that is the exact binomial density, which makes the chain an
// independent check on the Laplace summaries.
SamplerResult mh_sampler(const BinomialFieldFit& fit, int n_iter, std::uint64_t seed,
                         const SamplerOptions& opt = {});
SamplerResult mh_sampler(const CompleteFit& fit, int n_iter, std::uint64_t seed,
                         const SamplerOptions& opt = {});
SamplerResult mh_sampler(const MhFit& fit, int n_iter, std::uint64_t seed,
                         const SamplerOptions& opt = {});

}  // namespace sde
