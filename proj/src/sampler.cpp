#include "sde/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "sde/errors.hpp"
#include "sde/rng.hpp"

namespace sde {

SamplerResult random_walk_metropolis(
    const std::function<double(const Eigen::VectorXd&)>& log_post, const Eigen::VectorXd& theta0,
    int n_iter, std::uint64_t seed, const SamplerOptions& opt,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& unit_step) {
  if (n_iter < 0) throw ConfigError("sampler: iteration count must be nonnegative");
  const int dim = static_cast<int>(theta0.size());
  const int burn = n_iter / 2;
  const int keep = n_iter - burn;

  SamplerResult res;
  res.scale = opt.init_scale > 0.0 ? opt.init_scale
                                   : 2.38 / std::sqrt(static_cast<double>(std::max(1, dim)));
  res.draws.resize(keep, dim);
  if (n_iter == 0) return res;

  Rng rng(seed);
  Eigen::VectorXd th = theta0;
  double lp = log_post(th);
  if (!std::isfinite(lp))
    throw NumericalError("sampler: log posterior is not finite at the initial point");

  long acc_post = 0;
  int acc_win = 0, win = 0;
  for (int it = 0; it < n_iter; ++it) {
    Eigen::VectorXd z = normal_vector(rng, dim);
    Eigen::VectorXd prop = unit_step ? (th + res.scale * unit_step(z)).eval()
                                     : (th + res.scale * z).eval();
    double lpp = log_post(prop);
    double u = rng.uniform();
    if (lpp >= lp || u < std::exp(lpp - lp)) {
      th = prop;
      lp = lpp;
      ++acc_win;
      if (it >= burn) ++acc_post;
    }
    ++win;
    if (it < burn && win == opt.adapt_window) {
      double rate = static_cast<double>(acc_win) / win;
      if (rate > 0.3)
        res.scale *= 1.1;
      else if (rate < 0.15)
        res.scale *= 0.9;
      acc_win = 0;
      win = 0;
    }
    if (it >= burn) res.draws.row(it - burn) = th.transpose();
  }
  res.acceptance = keep > 0 ? static_cast<double>(acc_post) / keep : 0.0;
  res.acceptance_ok = res.acceptance >= 0.05 && res.acceptance <= 0.7;
  return res;
}

SamplerResult mh_sampler(const BinomialFieldFit& fit, int n_iter, std::uint64_t seed,
                         const SamplerOptions& opt) {
  if (!fit.log_posterior || !fit.precision)
    throw ConfigError("sampler: fit carries no posterior density");
  auto prec = fit.precision;
  Eigen::VectorXd inv_sqrt_d = prec->vectorD().cwiseInverse().cwiseSqrt();
  auto step = [prec, inv_sqrt_d](const Eigen::VectorXd& z) {
    Eigen::VectorXd u = prec->matrixU().solve((inv_sqrt_d.array() * z.array()).matrix());
    return Eigen::VectorXd(prec->permutationPinv() * u);
  };
  return random_walk_metropolis(fit.log_posterior, fit.theta, n_iter, seed, opt, step);
}

SamplerResult mh_sampler(const CompleteFit& fit, int n_iter, std::uint64_t seed,
                         const SamplerOptions& opt) {
  const double k = static_cast<double>(fit.k_total);
  const double n = static_cast<double>(fit.n_total);
  auto lp = [k, n](const Eigen::VectorXd& eta) { return k * eta[0] - n * log1pexp(eta[0]); };
  const double sd = std::sqrt(fit.logit_var);
  auto step = [sd](const Eigen::VectorXd& z) { return Eigen::VectorXd(sd * z); };
  Eigen::VectorXd theta0(1);
  theta0[0] = fit.logit_mode;
  return random_walk_metropolis(lp, theta0, n_iter, seed, opt, step);
}

SamplerResult mh_sampler(const MhFit& fit, int n_iter, std::uint64_t seed,
                         const SamplerOptions& opt) {
  if (!fit.log_posterior || !fit.precision)
    throw ConfigError("sampler: fit carries no posterior density");
  auto prec = fit.precision;
  auto step = [prec](const Eigen::VectorXd& z) {
    return Eigen::VectorXd(prec->matrixU().solve(z));
  };
  return random_walk_metropolis(fit.log_posterior, fit.theta, n_iter, seed, opt, step);
}

}  // namespace sde
