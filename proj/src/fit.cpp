#include "sde/fit.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "sde/errors.hpp"
#include "sde/rng.hpp"

namespace sde {

namespace {

constexpr double kZ975 = 1.959963984540054;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_counts(const CellCounts& c) {
  c.grid.validate();
  if (c.n.size() != c.grid.n_cells() || c.k.size() != c.grid.n_cells())
    throw DataError("cell counts do not match the grid size");
  if ((c.n < 0).any() || (c.k < 0).any() || (c.k > c.n).any())
    throw DataError("cell counts require 0 <= k <= n");
}

double stabilized_mode(int k, int n) { return logit((k + 0.5) / (n + 1.0)); }

double stabilized_var(int k, int n) {
  double pt = (k + 0.5) / (n + 1.0);
  return 1.0 / ((n + 1.0) * pt * (1.0 - pt));
}

}  // namespace

double logit(double p) { return std::log(p / (1.0 - p)); }

double inv_logit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double log1pexp(double x) {
  if (x > 35.0) return x;
  if (x < -35.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

// ---------------------------------------------------------------------------
// Closed-form estimators

DirectFit fit_direct(const CellCounts& counts) {
  check_counts(counts);
  int m = counts.grid.n_cells();
  DirectFit f;
  f.grid = counts.grid;
  f.p_hat = Eigen::ArrayXd::Constant(m, kNaN);
  f.logit_mode = Eigen::ArrayXd::Constant(m, kNaN);
  f.logit_var = Eigen::ArrayXd::Constant(m, kNaN);
  f.point_logit = Eigen::ArrayXd::Constant(m, kNaN);
  f.populated = counts.n > 0;
  for (int c = 0; c < m; ++c) {
    int n = counts.n[c], k = counts.k[c];
    if (n == 0) continue;
    f.p_hat[c] = static_cast<double>(k) / n;
    f.logit_mode[c] = stabilized_mode(k, n);
    f.logit_var[c] = stabilized_var(k, n);
    f.point_logit[c] = (k == 0 || k == n) ? f.logit_mode[c] : logit(f.p_hat[c]);
  }
  return f;
}

CompleteFit fit_complete(const CellCounts& counts) {
  check_counts(counts);
  CompleteFit f;
  f.grid = counts.grid;
  f.n_total = counts.total_n();
  f.k_total = counts.total_k();
  if (f.n_total == 0) throw DataError("complete pooling requires at least one observation");
  if (f.k_total == 0 || f.k_total == f.n_total)
    throw DataError("complete pooling degenerate: all outcomes identical");
  f.p_hat = static_cast<double>(f.k_total) / static_cast<double>(f.n_total);
  f.logit_mode = logit(f.p_hat);
  f.logit_var = 1.0 / (static_cast<double>(f.n_total) * f.p_hat * (1.0 - f.p_hat));
  return f;
}

WeightedFit fit_weighted(const CellCounts& counts, double w) {
  check_counts(counts);
  if (w < 0.0 || w > 1.0) throw ConfigError("weighted estimator needs w in [0, 1]");
  CompleteFit pooled = fit_complete(counts);
  int m = counts.grid.n_cells();
  WeightedFit f;
  f.grid = counts.grid;
  f.w = w;
  f.p_hat = Eigen::ArrayXd::Constant(m, w * pooled.p_hat);
  for (int c = 0; c < m; ++c) {
    if (counts.n[c] == 0) {
      if (w < 1.0)
        throw DataError("weighted estimator with w < 1 undefined for empty cells (age " +
                        std::to_string(counts.grid.cell_at(c).age) + ", year " +
                        std::to_string(counts.grid.cell_at(c).year) + ")");
      continue;
    }
    f.p_hat[c] += (1.0 - w) * static_cast<double>(counts.k[c]) / counts.n[c];
  }
  return f;
}

KernelFit fit_naive_kernel(const CellCounts& counts, int half_width) {
  check_counts(counts);
  if (half_width < 1) throw ConfigError("kernel estimator needs half_width >= 1");
  const DomainGrid& g = counts.grid;
  int m = g.n_cells();
  KernelFit f;
  f.grid = g;
  f.half_width = half_width;
  f.p_hat = Eigen::ArrayXd::Constant(m, kNaN);
  f.logit_mode = Eigen::ArrayXd::Constant(m, kNaN);
  f.logit_var = Eigen::ArrayXd::Constant(m, kNaN);
  f.window_n = Eigen::ArrayXi::Zero(m);
  f.populated = BoolArray::Constant(m, false);
  for (int c = 0; c < m; ++c) {
    DomainCell cell = g.cell_at(c);
    long kk = 0, nn = 0;
    int a_lo = std::max(g.age_min, cell.age - half_width + 1);
    int a_hi = std::min(g.age_max, cell.age + half_width - 1);
    int t_lo = std::max(g.year_min, cell.year - half_width + 1);
    int t_hi = std::min(g.year_max, cell.year + half_width - 1);
    for (int a = a_lo; a <= a_hi; ++a)
      for (int t = t_lo; t <= t_hi; ++t) {
        int idx = g.index_of(a, t);
        nn += counts.n[idx];
        kk += counts.k[idx];
      }
    f.window_n[c] = static_cast<int>(nn);
    if (nn == 0) continue;
    f.populated[c] = true;
    f.p_hat[c] = static_cast<double>(kk) / static_cast<double>(nn);
    f.logit_mode[c] = stabilized_mode(static_cast<int>(kk), static_cast<int>(nn));
    f.logit_var[c] = stabilized_var(static_cast<int>(kk), static_cast<int>(nn));
  }
  return f;
}

// ---------------------------------------------------------------------------
// Penalized Newton

namespace {

double binom_loglik(const Eigen::ArrayXd& k, const Eigen::ArrayXd& n, const Eigen::VectorXd& eta) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    if (n[i] == 0.0) continue;
    ll += k[i] * eta[i] - n[i] * log1pexp(eta[i]);
  }
  return ll;
}

double quad_form(const SpMat& K, const Eigen::VectorXd& theta) {
  return 0.5 * theta.dot(K * theta);
}

double ldlt_logdet(const Eigen::SimplicialLDLT<SpMat>& ldlt) {
  Eigen::VectorXd d = ldlt.vectorD();
  if (d.minCoeff() <= 0.0) throw NumericalError("penalized Hessian is not positive definite");
  return d.array().log().sum();
}

}  // namespace

PenNewtonResult newton_binomial(const SpMat& X, const Eigen::ArrayXd& k, const Eigen::ArrayXd& n,
                                const SpMat& K, const Eigen::VectorXd& theta0,
                                const NewtonOptions& opt) {
  const Eigen::Index q = X.cols();
  PenNewtonResult res;
  res.theta = (theta0.size() == q) ? theta0 : Eigen::VectorXd::Zero(q);

  Eigen::VectorXd eta = X * res.theta;

  // The gradient subtracts terms of magnitude |X|'(k + n p) + |K||theta|, so
  // its rounding noise scales with that sum; under extreme penalties the
  // absolute tolerance alone would sit below the representable floor.
  SpMat Xabs = X.cwiseAbs();
  SpMat Kabs = K.cwiseAbs();
  auto grad_small = [&](const Eigen::VectorXd& grad, const Eigen::ArrayXd& p) {
    constexpr double eps = std::numeric_limits<double>::epsilon();
    Eigen::VectorXd scale = Xabs.transpose() * (k + n * p).matrix();
    scale.noalias() += Kabs * res.theta.cwiseAbs();
    for (Eigen::Index i = 0; i < grad.size(); ++i)
      if (std::abs(grad[i]) > std::max(opt.grad_tol, 32.0 * eps * scale[i])) return false;
    return true;
  };
  auto gradient_at = [&](const Eigen::VectorXd& theta, const Eigen::VectorXd& eta_v,
                         Eigen::ArrayXd& p) {
    for (Eigen::Index i = 0; i < eta_v.size(); ++i) p[i] = inv_logit(eta_v[i]);
    return Eigen::VectorXd(X.transpose() * (k - n * p).matrix() - K * theta);
  };

  // The objective is strictly concave wherever the factorization below
  // succeeds, so the gradient has a unique root and damped Newton steps
  // certified by squared-gradient-norm decrease converge globally. The merit
  // also stays fully resolved in floating point near the root, where
  // objective increments fall below double resolution and an ascent test
  // would accept pure rounding noise.
  Eigen::ArrayXd p(eta.size());
  Eigen::VectorXd grad = gradient_at(res.theta, eta, p);
  Eigen::SimplicialLDLT<SpMat> ldlt;
  for (res.iters = 0; res.iters < opt.max_iter; ++res.iters) {
    if (grad_small(grad, p)) {
      res.converged = true;
      break;
    }
    Eigen::ArrayXd w = n * p * (1.0 - p);
    SpMat XtWX = X.transpose() * (w.matrix().asDiagonal() * X);
    SpMat H = XtWX + K;
    ldlt.compute(H);
    if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0)
      throw NumericalError("newton_binomial: penalized Hessian not positive definite");
    Eigen::VectorXd delta = ldlt.solve(grad);

    double phi = grad.squaredNorm();
    bool moved = false;
    for (double step = 1.0; step > 2e-4 && !moved; step *= 0.5) {
      Eigen::VectorXd cand = res.theta + step * delta;
      Eigen::VectorXd eta_c = X * cand;
      Eigen::ArrayXd p_c(eta_c.size());
      Eigen::VectorXd grad_c = gradient_at(cand, eta_c, p_c);
      if (grad_c.squaredNorm() <= (1.0 - 2e-4 * step) * phi) {
        res.theta = std::move(cand);
        eta = std::move(eta_c);
        p = std::move(p_c);
        grad = std::move(grad_c);
        moved = true;
      }
    }
    if (!moved) break;  // gradient floor; convergence judged by grad_small
  }

  // Curvature and objective pieces at the final iterate.
  if (!res.converged) res.converged = grad_small(grad, p);
  Eigen::ArrayXd w = n * p * (1.0 - p);
  SpMat XtWX = X.transpose() * (w.matrix().asDiagonal() * X);
  res.neg_hessian_pen = XtWX + K;
  res.loglik = binom_loglik(k, n, eta);
  res.penalty_quad = quad_form(K, res.theta);
  return res;
}

double logdet_plus(const Eigen::MatrixXd& K, double rel_tol) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
  if (es.info() != Eigen::Success) throw NumericalError("logdet_plus: eigendecomposition failed");
  const Eigen::VectorXd& ev = es.eigenvalues();
  double thresh = ev.cwiseAbs().maxCoeff() * rel_tol;
  double s = 0.0;
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (ev[i] > thresh) s += std::log(ev[i]);
  return s;
}

double laplace_lml(const PenNewtonResult& fit, double logdet_plus_K) {
  Eigen::SimplicialLDLT<SpMat> ldlt(fit.neg_hessian_pen);
  if (ldlt.info() != Eigen::Success)
    throw NumericalError("laplace_lml: cannot factorize the penalized Hessian");
  return fit.loglik - fit.penalty_quad + 0.5 * logdet_plus_K - 0.5 * ldlt_logdet(ldlt);
}

Eigen::VectorXd select_hyper(const Eigen::VectorXd& log10_lo, const Eigen::VectorXd& log10_hi,
                             const std::function<double(const Eigen::VectorXd&)>& eval,
                             const SelectOptions& opt) {
  const int d = static_cast<int>(log10_lo.size());
  if (log10_hi.size() != d) throw ConfigError("select_hyper: bound sizes differ");
  const int G = opt.grid_points;
  Eigen::VectorXd x = 0.5 * (log10_lo + log10_hi);

  int n_sweeps = (d == 1) ? 1 : opt.sweeps;
  for (int sweep = 0; sweep < n_sweeps; ++sweep) {
    for (int p = 0; p < d; ++p) {
      double best_v = -std::numeric_limits<double>::infinity();
      double best_xp = x[p];
      for (int g = 0; g < G; ++g) {
        x[p] = log10_lo[p] + (log10_hi[p] - log10_lo[p]) * g / (G - 1);
        double v = eval(x);
        if (v > best_v) {
          best_v = v;
          best_xp = x[p];
        }
      }
      x[p] = best_xp;
    }
  }

  // Golden-section polish of each coordinate within one grid step.
  const double inv_phi = 0.6180339887498949;
  for (int p = 0; p < d; ++p) {
    double h = (log10_hi[p] - log10_lo[p]) / (G - 1);
    double a = std::max(log10_lo[p], x[p] - h);
    double b = std::min(log10_hi[p], x[p] + h);
    double best_xp = x[p];
    x[p] = best_xp;
    double best_v = eval(x);
    double c = b - (b - a) * inv_phi;
    double e = a + (b - a) * inv_phi;
    x[p] = c;
    double fc = eval(x);
    x[p] = e;
    double fe = eval(x);
    if (fc > best_v) { best_v = fc; best_xp = c; }
    if (fe > best_v) { best_v = fe; best_xp = e; }
    for (int it = 0; it < opt.golden_iters; ++it) {
      if (fc > fe) {
        b = e;
        e = c;
        fe = fc;
        c = b - (b - a) * inv_phi;
        x[p] = c;
        fc = eval(x);
        if (fc > best_v) { best_v = fc; best_xp = c; }
      } else {
        a = c;
        c = e;
        fc = fe;
        e = a + (b - a) * inv_phi;
        x[p] = e;
        fe = eval(x);
        if (fe > best_v) { best_v = fe; best_xp = e; }
      }
    }
    x[p] = best_xp;
  }
  return x;
}

// ---------------------------------------------------------------------------
// Field fits

Eigen::RowVectorXd TensorStructure::row(double age, double year) const {
  return Eigen::RowVectorXd(
      tensor_design(bspline_row(age_basis, age), bspline_row(year_basis, year)));
}

namespace {

SpMat sparse_from_dense(const Eigen::MatrixXd& m) {
  std::vector<Eigen::Triplet<double>> trips;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (m(i, j) != 0.0) trips.emplace_back(i, j, m(i, j));
  SpMat s(m.rows(), m.cols());
  s.setFromTriplets(trips.begin(), trips.end());
  return s;
}

std::shared_ptr<Eigen::SimplicialLDLT<SpMat>> factorize_precision(const SpMat& H) {
  auto f = std::make_shared<Eigen::SimplicialLDLT<SpMat>>(H);
  if (f->info() != Eigen::Success || f->vectorD().minCoeff() <= 0.0)
    throw NumericalError("posterior precision is not positive definite");
  return f;
}

std::function<double(const Eigen::VectorXd&)> make_binomial_logpost(
    std::shared_ptr<const SpMat> X, std::shared_ptr<const Eigen::ArrayXd> k,
    std::shared_ptr<const Eigen::ArrayXd> n, std::shared_ptr<const SpMat> K) {
  return [X, k, n, K](const Eigen::VectorXd& theta) {
    Eigen::VectorXd eta = (*X) * theta;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      if ((*n)[i] == 0.0) continue;
      ll += (*k)[i] * eta[i] - (*n)[i] * log1pexp(eta[i]);
    }
    return ll - 0.5 * theta.dot((*K) * theta);
  };
}

}  // namespace

Eigen::MatrixXd BinomialFieldFit::draw_theta(int n_draws, std::uint64_t seed) const {
  if (n_draws <= 0) throw ConfigError("draw_theta: n_draws must be positive");
  const Eigen::Index q = theta.size();
  Eigen::VectorXd inv_sqrt_d = precision->vectorD().cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd out(n_draws, q);
  Rng rng(derive_seed(seed, 17));
  for (int s = 0; s < n_draws; ++s) {
    Eigen::VectorXd z = normal_vector(rng, q);
    Eigen::VectorXd u = inv_sqrt_d.cwiseProduct(z);
    Eigen::VectorXd w = precision->matrixU().solve(u);
    out.row(s) = (theta + precision->permutationPinv() * w).transpose();
  }
  return out;
}

Eigen::MatrixXd BinomialFieldFit::draw_cell_logits(int n_draws, std::uint64_t seed) const {
  const Eigen::Index q = theta.size();
  const int m = grid.n_cells();
  Eigen::VectorXd inv_sqrt_d = precision->vectorD().cwiseSqrt().cwiseInverse();
  Eigen::ArrayXd extra_sd = extra_logit_var.sqrt();
  Eigen::MatrixXd out(n_draws, m);
  Rng rng(derive_seed(seed, 17));
  for (int s = 0; s < n_draws; ++s) {
    Eigen::VectorXd z = normal_vector(rng, q);
    Eigen::VectorXd u = inv_sqrt_d.cwiseProduct(z);
    Eigen::VectorXd w = precision->matrixU().solve(u);
    Eigen::VectorXd th = theta + precision->permutationPinv() * w;
    out.row(s) = (cell_map * th).transpose();
    for (int c = 0; c < m; ++c)
      if (extra_sd[c] > 0.0) out(s, c) += extra_sd[c] * rng.normal();
  }
  return out;
}

Eigen::ArrayXd BinomialFieldFit::cell_logit_mean() const {
  return (cell_map * theta).array();
}

Eigen::ArrayXd BinomialFieldFit::cell_logit_var() const {
  const int m = grid.n_cells();
  Eigen::ArrayXd v(m);
  for (int c = 0; c < m; ++c) {
    Eigen::VectorXd row = cell_map.row(c).transpose();
    v[c] = row.dot(precision->solve(row)) + extra_logit_var[c];
  }
  return v;
}

namespace {

BinomialFieldFit assemble_field_fit(const DomainGrid& grid, PenNewtonResult&& nr,
                                    Eigen::MatrixXd cell_map, Eigen::ArrayXd extra_var,
                                    BoolArray populated, Eigen::VectorXd hyper,
                                    std::vector<std::string> hyper_names, double lml,
                                    std::shared_ptr<const SpMat> X,
                                    std::shared_ptr<const Eigen::ArrayXd> k,
                                    std::shared_ptr<const Eigen::ArrayXd> n,
                                    std::shared_ptr<const SpMat> K) {
  BinomialFieldFit f;
  f.grid = grid;
  f.theta = std::move(nr.theta);
  f.precision = factorize_precision(nr.neg_hessian_pen);
  f.cell_map = std::move(cell_map);
  f.extra_logit_var = std::move(extra_var);
  f.populated = std::move(populated);
  f.hyper = std::move(hyper);
  f.hyper_names = std::move(hyper_names);
  f.lml = lml;
  f.converged = nr.converged;
  f.newton_iters = nr.iters;
  f.log_posterior = make_binomial_logpost(X, k, n, K);
  return f;
}

}  // namespace

BinomialFieldFit fit_partial_pool_fixed(const CellCounts& counts, double sigma,
                                        const NewtonOptions&) {
  check_counts(counts);
  if (sigma <= 0.0) throw ConfigError("partial pooling requires sigma > 0");
  const DomainGrid& g = counts.grid;
  const int m_cells = g.n_cells();

  DirectFit direct = fit_direct(counts);
  CompleteFit pooled = fit_complete(counts);

  std::vector<int> levels;
  for (int c = 0; c < m_cells; ++c)
    if (counts.n[c] > 0) levels.push_back(c);
  const int m = static_cast<int>(levels.size());
  if (m == 0) throw DataError("partial pooling requires at least one populated cell");

  // Gaussian hierarchical model on the stabilized cell logits,
  //   theta_hat_c ~ N(mu + u_c, v_c),  u_c ~ N(0, sigma^2),
  // with the grand mean pinned to the pooled logit. The posterior is exact:
  // u_c = w_c (theta_hat_c - mu) with w_c = sigma^2 / (sigma^2 + v_c), so
  // every cell logit mu + u_c is a convex combination of the pooled and the
  // stabilized direct logits.
  const double s2 = sigma * sigma;
  Eigen::VectorXd th(m + 1);
  th[0] = pooled.logit_mode;
  SpMat H(m + 1, m + 1);
  double lml = 0.0;
  {
    std::vector<Eigen::Triplet<double>> trips;
    trips.emplace_back(0, 0, 1.0 / pooled.logit_var);
    for (int r = 0; r < m; ++r) {
      double resid = direct.logit_mode[levels[r]] - pooled.logit_mode;
      double v = direct.logit_var[levels[r]];
      double w = s2 / (s2 + v);
      th[1 + r] = w * resid;
      trips.emplace_back(1 + r, 1 + r, 1.0 / (w * v));
      lml -= 0.5 * (std::log(2.0 * M_PI * (s2 + v)) + resid * resid / (s2 + v));
    }
    H.setFromTriplets(trips.begin(), trips.end());
  }

  Eigen::MatrixXd cell_map = Eigen::MatrixXd::Zero(m_cells, m + 1);
  cell_map.col(0).setOnes();
  Eigen::ArrayXd extra = Eigen::ArrayXd::Constant(m_cells, s2);
  for (int r = 0; r < m; ++r) {
    cell_map(levels[r], 1 + r) = 1.0;
    extra[levels[r]] = 0.0;
  }

  BinomialFieldFit f;
  f.grid = g;
  f.theta = th;
  f.precision = factorize_precision(H);
  f.cell_map = std::move(cell_map);
  f.extra_logit_var = std::move(extra);
  f.populated = counts.n > 0;
  f.hyper = Eigen::VectorXd::Constant(1, sigma);
  f.hyper_names = {"sigma"};
  f.lml = lml;
  f.converged = true;
  f.newton_iters = 1;
  f.level_cells = levels;
  // The posterior given (sigma, mu) is exactly this Gaussian.
  f.log_posterior = [th, H](const Eigen::VectorXd& x) {
    Eigen::VectorXd d = x - th;
    return -0.5 * d.dot(H * d);
  };
  return f;
}

BinomialFieldFit fit_partial_pool(const CellCounts& counts, const SelectOptions& opt) {
  check_counts(counts);
  DirectFit direct = fit_direct(counts);
  CompleteFit pooled = fit_complete(counts);

  std::vector<double> resid, var;
  for (int c = 0; c < counts.grid.n_cells(); ++c) {
    if (counts.n[c] == 0) continue;
    resid.push_back(direct.logit_mode[c] - pooled.logit_mode);
    var.push_back(direct.logit_var[c]);
  }
  if (resid.empty()) throw DataError("partial pooling requires at least one populated cell");

  // Marginally theta_hat_c ~ N(mu, sigma^2 + v_c); the scale is picked by
  // this exact marginal likelihood (constants dropped).
  auto eval = [&](const Eigen::VectorXd& log10_sigma) {
    double s2 = std::pow(10.0, 2.0 * log10_sigma[0]);
    double ll = 0.0;
    for (std::size_t i = 0; i < resid.size(); ++i)
      ll -= 0.5 * (std::log(s2 + var[i]) + resid[i] * resid[i] / (s2 + var[i]));
    return ll;
  };

  Eigen::VectorXd lo(1), hi(1);
  lo[0] = -3.0;
  hi[0] = 1.0;
  Eigen::VectorXd best = select_hyper(lo, hi, eval, opt);
  return fit_partial_pool_fixed(counts, std::pow(10.0, best[0]), opt.newton);
}

namespace {

struct TensorPrep {
  TensorStructure structure;
  Eigen::MatrixXd cell_design;  // n_cells x q
  std::shared_ptr<SpMat> X;
  std::shared_ptr<Eigen::ArrayXd> karr, narr;
  Eigen::ArrayXd pen_age_eigs, pen_year_eigs;  // marginal penalty spectra
  int na = 0, nt = 0, order = 2;
};

TensorPrep prepare_tensor(const CellCounts& counts, const SmoothSpec& spec, int year_extension) {
  spec.validate();
  if (year_extension < 0) throw ConfigError("year_extension must be >= 0");
  const DomainGrid& g = counts.grid;
  TensorPrep prep;
  prep.order = spec.penalty_order;
  prep.structure.age_basis =
      uniform_bspline(g.age_min, g.age_max, spec.n_interior, spec.degree);
  prep.structure.year_basis =
      uniform_bspline(g.year_min, g.year_max + year_extension, spec.n_interior, spec.degree);
  prep.na = prep.structure.age_basis.n_basis();
  prep.nt = prep.structure.year_basis.n_basis();

  Eigen::VectorXd ages(g.n_cells()), years(g.n_cells());
  for (int c = 0; c < g.n_cells(); ++c) {
    DomainCell cell = g.cell_at(c);
    ages[c] = cell.age;
    years[c] = cell.year;
  }
  prep.cell_design = tensor_design(bspline_design(prep.structure.age_basis, ages),
                                   bspline_design(prep.structure.year_basis, years));
  prep.X = std::make_shared<SpMat>(sparse_from_dense(prep.cell_design));
  prep.karr = std::make_shared<Eigen::ArrayXd>(counts.k.cast<double>());
  prep.narr = std::make_shared<Eigen::ArrayXd>(counts.n.cast<double>());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(
      difference_penalty(prep.na, spec.penalty_order, 1.0));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> et(
      difference_penalty(prep.nt, spec.penalty_order, 1.0));
  prep.pen_age_eigs = ea.eigenvalues().array().max(0.0);
  prep.pen_year_eigs = et.eigenvalues().array().max(0.0);
  return prep;
}

// Pseudo log-determinant of la*(Ka x I) + lt*(I x Kt) from the marginal
// spectra; the joint null space (pairs with both eigenvalues zero) is skipped.
double tensor_logdet_plus(const Eigen::ArrayXd& sa, const Eigen::ArrayXd& st, double la,
                          double lt) {
  double tol_a = sa.maxCoeff() * 1e-12;
  double tol_t = st.maxCoeff() * 1e-12;
  double s = 0.0;
  for (Eigen::Index i = 0; i < sa.size(); ++i)
    for (Eigen::Index j = 0; j < st.size(); ++j) {
      bool null_a = sa[i] <= tol_a;
      bool null_t = st[j] <= tol_t;
      if (null_a && null_t) continue;
      s += std::log(la * (null_a ? 0.0 : sa[i]) + lt * (null_t ? 0.0 : st[j]));
    }
  return s;
}

BinomialFieldFit finish_tensor(const CellCounts& counts, TensorPrep& prep, double lambda_age,
                               double lambda_year, const NewtonOptions& opt,
                               const Eigen::VectorXd& warm) {
  auto K = std::make_shared<SpMat>(
      sparse_from_dense(tensor_penalty(prep.na, prep.nt, prep.order, lambda_age, lambda_year)));
  PenNewtonResult nr = newton_binomial(*prep.X, *prep.karr, *prep.narr, *K, warm, opt);
  double lml = (lambda_age > 0.0 && lambda_year > 0.0)
                   ? laplace_lml(nr, tensor_logdet_plus(prep.pen_age_eigs, prep.pen_year_eigs,
                                                        lambda_age, lambda_year))
                   : std::numeric_limits<double>::quiet_NaN();

  Eigen::VectorXd hyper(2);
  hyper[0] = lambda_age;
  hyper[1] = lambda_year;
  BinomialFieldFit f = assemble_field_fit(
      counts.grid, std::move(nr), prep.cell_design,
      Eigen::ArrayXd::Zero(counts.grid.n_cells()), counts.n > 0, std::move(hyper),
      {"lambda_age", "lambda_year"}, lml, prep.X, prep.karr, prep.narr, K);
  f.tensor = prep.structure;
  return f;
}

}  // namespace

BinomialFieldFit fit_tensor_binomial_fixed(const CellCounts& counts, const SmoothSpec& spec,
                                           double lambda_age, double lambda_year,
                                           const NewtonOptions& opt, int year_extension) {
  check_counts(counts);
  if (lambda_age < 0.0 || lambda_year < 0.0)
    throw ConfigError("tensor estimator requires lambdas >= 0");
  TensorPrep prep = prepare_tensor(counts, spec, year_extension);
  return finish_tensor(counts, prep, lambda_age, lambda_year, opt, Eigen::VectorXd());
}

BinomialFieldFit fit_tensor_binomial(const CellCounts& counts, const SmoothSpec& spec,
                                     const SelectOptions& opt, int year_extension) {
  check_counts(counts);
  TensorPrep prep = prepare_tensor(counts, spec, year_extension);
  Eigen::VectorXd warm;
  auto eval = [&](const Eigen::VectorXd& log10_lambda) {
    double la = std::pow(10.0, log10_lambda[0]);
    double lt = std::pow(10.0, log10_lambda[1]);
    SpMat K = sparse_from_dense(tensor_penalty(prep.na, prep.nt, prep.order, la, lt));
    PenNewtonResult nr = newton_binomial(*prep.X, *prep.karr, *prep.narr, K, warm, opt.newton);
    warm = nr.theta;
    return laplace_lml(nr, tensor_logdet_plus(prep.pen_age_eigs, prep.pen_year_eigs, la, lt));
  };
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(2, -4.0);
  Eigen::VectorXd hi = Eigen::VectorXd::Constant(2, 6.0);
  Eigen::VectorXd best = select_hyper(lo, hi, eval, opt);
  return finish_tensor(counts, prep, std::pow(10.0, best[0]), std::pow(10.0, best[1]), opt.newton,
                       warm);
}

// ---------------------------------------------------------------------------
// Variant helpers

std::string estimator_name(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::direct: return "direct";
    case EstimatorKind::complete: return "complete";
    case EstimatorKind::weighted: return "weighted";
    case EstimatorKind::kernel: return "kernel";
    case EstimatorKind::partial_pool: return "partial";
    case EstimatorKind::tensor: return "tensor";
  }
  return "unknown";
}

EstimatorKind parse_estimator(const std::string& name) {
  if (name == "direct") return EstimatorKind::direct;
  if (name == "complete") return EstimatorKind::complete;
  if (name == "weighted") return EstimatorKind::weighted;
  if (name == "kernel") return EstimatorKind::kernel;
  if (name == "partial" || name == "partial_pool") return EstimatorKind::partial_pool;
  if (name == "tensor") return EstimatorKind::tensor;
  throw ConfigError("unknown estimator '" + name +
                    "' (expected direct, complete, weighted, kernel, partial, tensor)");
}

BinomialFitAny fit_estimator(const EstimatorConfig& cfg, const CellCounts& counts) {
  switch (cfg.kind) {
    case EstimatorKind::direct: return fit_direct(counts);
    case EstimatorKind::complete: return fit_complete(counts);
    case EstimatorKind::weighted: return fit_weighted(counts, cfg.weight_w);
    case EstimatorKind::kernel: return fit_naive_kernel(counts, cfg.kernel_half_width);
    case EstimatorKind::partial_pool: return fit_partial_pool(counts, cfg.select);
    case EstimatorKind::tensor: return fit_tensor_binomial(counts, cfg.smooth, cfg.select);
  }
  throw ConfigError("fit_estimator: unhandled estimator kind");
}

namespace {

Eigen::MatrixXd draws_from_cellwise_normal(const Eigen::ArrayXd& mode, const Eigen::ArrayXd& var,
                                           const BoolArray& defined, int n_draws,
                                           std::uint64_t seed) {
  const int m = static_cast<int>(mode.size());
  Eigen::MatrixXd out(n_draws, m);
  Rng rng(derive_seed(seed, 17));
  for (int s = 0; s < n_draws; ++s)
    for (int c = 0; c < m; ++c)
      out(s, c) = defined[c] ? mode[c] + std::sqrt(var[c]) * rng.normal() : kNaN;
  return out;
}

}  // namespace

Eigen::MatrixXd cell_logit_draws(const BinomialFitAny& fit, int n_draws, std::uint64_t seed) {
  if (n_draws <= 0) throw ConfigError("cell_logit_draws: n_draws must be positive");
  return std::visit(
      [&](const auto& f) -> Eigen::MatrixXd {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, DirectFit>) {
          return draws_from_cellwise_normal(f.logit_mode, f.logit_var, f.populated, n_draws, seed);
        } else if constexpr (std::is_same_v<T, CompleteFit>) {
          Eigen::MatrixXd out(n_draws, f.grid.n_cells());
          Rng rng(derive_seed(seed, 17));
          double sd = std::sqrt(f.logit_var);
          for (int s = 0; s < n_draws; ++s) out.row(s).setConstant(f.logit_mode + sd * rng.normal());
          return out;
        } else if constexpr (std::is_same_v<T, WeightedFit>) {
          throw ConfigError(
              "the weighted estimator has no predictive distribution; it cannot be scored");
        } else if constexpr (std::is_same_v<T, KernelFit>) {
          return draws_from_cellwise_normal(f.logit_mode, f.logit_var, f.populated, n_draws, seed);
        } else {
          return f.draw_cell_logits(n_draws, seed);
        }
      },
      fit);
}

BoolArray cells_with_estimate(const BinomialFitAny& fit) {
  return std::visit(
      [&](const auto& f) -> BoolArray {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, DirectFit>) {
          return f.populated;
        } else if constexpr (std::is_same_v<T, CompleteFit>) {
          return BoolArray::Constant(f.grid.n_cells(), true);
        } else if constexpr (std::is_same_v<T, WeightedFit>) {
          return BoolArray::Constant(f.grid.n_cells(), true);
        } else if constexpr (std::is_same_v<T, KernelFit>) {
          return f.populated;
        } else {
          return BoolArray::Constant(f.grid.n_cells(), true);
        }
      },
      fit);
}

double logit_normal_mean(double mean, double var) {
  // 20-node Gauss-Hermite rule, built once by Golub-Welsch.
  static const auto rule = [] {
    const int n = 20;
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, n);
    for (int i = 1; i < n; ++i) {
      double b = std::sqrt(i / 2.0);
      j(i - 1, i) = b;
      j(i, i - 1) = b;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(j);
    struct R {
      Eigen::VectorXd x, w;
    } r;
    r.x = es.eigenvalues();
    r.w = es.eigenvectors().row(0).transpose().array().square();  // normalized: sum w = 1
    return r;
  }();
  double sd2 = std::sqrt(2.0 * std::max(0.0, var));
  double s = 0.0;
  for (Eigen::Index i = 0; i < rule.x.size(); ++i)
    s += rule.w[i] * inv_logit(mean + sd2 * rule.x[i]);
  return s;
}

CellSummary summarize(const BinomialFitAny& fit, const CellCounts& counts) {
  check_counts(counts);
  const DomainGrid& g = counts.grid;
  const int m = g.n_cells();
  CellSummary s;
  s.grid = g;
  s.mean_p = Eigen::ArrayXd::Constant(m, kNaN);
  s.q025 = Eigen::ArrayXd::Constant(m, kNaN);
  s.q500 = Eigen::ArrayXd::Constant(m, kNaN);
  s.q975 = Eigen::ArrayXd::Constant(m, kNaN);
  s.post_logit_mean = Eigen::ArrayXd::Constant(m, kNaN);
  s.post_logit_var = Eigen::ArrayXd::Constant(m, kNaN);
  s.point_logit = Eigen::ArrayXd::Constant(m, kNaN);
  s.defined = BoolArray::Constant(m, false);
  s.has_quantiles = BoolArray::Constant(m, false);
  s.n = counts.n;

  auto fill_normal = [&](int c, double mode, double var) {
    double sd = std::sqrt(var);
    s.post_logit_mean[c] = mode;
    s.post_logit_var[c] = var;
    s.q025[c] = inv_logit(mode - kZ975 * sd);
    s.q500[c] = inv_logit(mode);
    s.q975[c] = inv_logit(mode + kZ975 * sd);
    s.has_quantiles[c] = true;
  };

  std::visit(
      [&](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, DirectFit>) {
          for (int c = 0; c < m; ++c) {
            if (!f.populated[c]) continue;
            s.defined[c] = true;
            s.mean_p[c] = f.p_hat[c];
            s.point_logit[c] = f.point_logit[c];
            fill_normal(c, f.logit_mode[c], f.logit_var[c]);
          }
        } else if constexpr (std::is_same_v<T, CompleteFit>) {
          for (int c = 0; c < m; ++c) {
            s.defined[c] = true;
            s.mean_p[c] = f.p_hat;
            s.point_logit[c] = f.logit_mode;
            fill_normal(c, f.logit_mode, f.logit_var);
          }
        } else if constexpr (std::is_same_v<T, WeightedFit>) {
          for (int c = 0; c < m; ++c) {
            s.defined[c] = true;
            s.mean_p[c] = f.p_hat[c];
            if (f.p_hat[c] > 0.0 && f.p_hat[c] < 1.0) s.point_logit[c] = logit(f.p_hat[c]);
          }
        } else if constexpr (std::is_same_v<T, KernelFit>) {
          for (int c = 0; c < m; ++c) {
            if (!f.populated[c]) continue;
            s.defined[c] = true;
            s.mean_p[c] = f.p_hat[c];
            s.point_logit[c] = f.logit_mode[c];
            fill_normal(c, f.logit_mode[c], f.logit_var[c]);
          }
        } else {
          Eigen::ArrayXd mean = f.cell_logit_mean();
          Eigen::ArrayXd var = f.cell_logit_var();
          for (int c = 0; c < m; ++c) {
            s.defined[c] = true;
            s.mean_p[c] = logit_normal_mean(mean[c], var[c]);
            s.point_logit[c] = mean[c];
            fill_normal(c, mean[c], var[c]);
          }
        }
      },
      fit);
  return s;
}

}  // namespace sde
