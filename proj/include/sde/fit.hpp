#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "sde/basis.hpp"
#include "sde/panel.hpp"

namespace sde {

using SpMat = Eigen::SparseMatrix<double>;
using BoolArray = Eigen::Array<bool, Eigen::Dynamic, 1>;

double logit(double p);
double inv_logit(double x);
// log(1 + exp(x)) without overflow.
double log1pexp(double x);

// ---------------------------------------------------------------------------
// Closed-form estimators. All of them carry a Gaussian posterior for the
// per-cell log odds; uncertainty for the frequency-type estimators uses a
// half-success stabilization so that boundary cells keep a proper posterior
// while the point estimate itself stays the raw frequency.

struct DirectFit {
  DomainGrid grid;
  Eigen::ArrayXd p_hat;       // k/n, NaN where n = 0
  Eigen::ArrayXd logit_mode;  // logit((k + 1/2) / (n + 1))
  Eigen::ArrayXd logit_var;   // 1 / ((n + 1) p~ (1 - p~))
  Eigen::ArrayXd point_logit; // logit(k/n); falls back to the stabilized mode at k = 0 or k = n
  BoolArray populated;
};
DirectFit fit_direct(const CellCounts& counts);

struct CompleteFit {
  DomainGrid grid;
  double p_hat = 0.0;      // sum k / sum n
  double logit_mode = 0.0; // logit(p_hat)
  double logit_var = 0.0;  // 1 / (N p (1-p))
  long n_total = 0;
  long k_total = 0;
};
CompleteFit fit_complete(const CellCounts& counts);

// Convex combination of the pooled and per-cell frequencies on the
// probability scale. Point estimates only. Throws DataError when a cell has
// n = 0 and w < 1.
struct WeightedFit {
  DomainGrid grid;
  double w = 0.5;
  Eigen::ArrayXd p_hat;
};
WeightedFit fit_weighted(const CellCounts& counts, double w);

// Moving-window pooling: each cell borrows every observation with
// |age - a| < half_width and |year - t| < half_width (strict inequalities).
struct KernelFit {
  DomainGrid grid;
  int half_width = 5;
  Eigen::ArrayXd p_hat;
  Eigen::ArrayXd logit_mode;
  Eigen::ArrayXd logit_var;
  Eigen::ArrayXi window_n;
  BoolArray populated;  // window contains at least one observation
};
KernelFit fit_naive_kernel(const CellCounts& counts, int half_width = 5);

// ---------------------------------------------------------------------------
// Penalized maximum likelihood machinery shared by the model-based
// estimators. The mode maximizes loglik(theta) - theta'K theta / 2 by damped
// Newton steps; the curvature at the mode defines the Laplace posterior
// N(theta_hat, (X'WX + K)^-1).

struct NewtonOptions {
  int max_iter = 200;
  double grad_tol = 1e-8;
};

struct SelectOptions {
  int grid_points = 25;   // log10-spaced marginal likelihood evaluations per parameter
  int golden_iters = 25;  // golden-section refinement steps around the grid optimum
  int sweeps = 2;         // coordinate sweeps when several parameters are selected
  NewtonOptions newton;
};

struct PenNewtonResult {
  Eigen::VectorXd theta;
  double loglik = 0.0;        // unpenalized, at the mode
  double penalty_quad = 0.0;  // theta'K theta / 2
  int iters = 0;
  bool converged = false;
  SpMat neg_hessian_pen;      // X'WX + K at the mode
};

// Binomial log likelihood on aggregated rows: sum_i k_i eta_i - n_i log(1+e^eta_i).
PenNewtonResult newton_binomial(const SpMat& X, const Eigen::ArrayXd& k, const Eigen::ArrayXd& n,
                                const SpMat& K, const Eigen::VectorXd& theta0,
                                const NewtonOptions& opt);

// Pseudo log-determinant (product of eigenvalues above rel_tol * max).
double logdet_plus(const Eigen::MatrixXd& K, double rel_tol = 1e-12);

// Laplace approximation of the log marginal likelihood, up to terms constant
// in the hyperparameters: loglik - quad + logdet+(K)/2 - logdet(X'WX + K)/2.
double laplace_lml(const PenNewtonResult& fit, double logdet_plus_K);

// Coordinate grid search over log10-scaled hyperparameters followed by a
// golden-section polish of each coordinate. eval receives log10 values and
// returns the criterion to maximize; evaluation order is deterministic.
Eigen::VectorXd select_hyper(const Eigen::VectorXd& log10_lo, const Eigen::VectorXd& log10_hi,
                             const std::function<double(const Eigen::VectorXd&)>& eval,
                             const SelectOptions& opt);

// ---------------------------------------------------------------------------
// Model-based estimators of the transition surface. Both produce a joint
// Gaussian posterior over the coefficient vector; per-cell log odds are the
// linear images cell_map * theta.

struct TensorStructure {
  BsplineBasis age_basis;
  BsplineBasis year_basis;
  Eigen::RowVectorXd row(double age, double year) const;
};

struct BinomialFieldFit {
  DomainGrid grid;
  Eigen::VectorXd theta;
  std::shared_ptr<Eigen::SimplicialLDLT<SpMat>> precision;  // X'WX + K at the mode
  Eigen::MatrixXd cell_map;       // n_cells x q
  Eigen::ArrayXd extra_logit_var; // predictive variance for cells without their own effect
  BoolArray populated;
  Eigen::VectorXd hyper;  // natural scale
  std::vector<std::string> hyper_names;
  double lml = 0.0;
  bool converged = false;
  int newton_iters = 0;
  std::function<double(const Eigen::VectorXd&)> log_posterior;
  std::optional<TensorStructure> tensor;  // set for the tensor estimator
  std::vector<int> level_cells;           // partial pooling: cell index per random effect

  double sigma_u() const { return hyper.size() > 0 ? hyper[0] : 0.0; }

  Eigen::MatrixXd draw_theta(int n_draws, std::uint64_t seed) const;
  // n_draws x n_cells; includes the extra predictive noise for cells without
  // their own effect.
  Eigen::MatrixXd draw_cell_logits(int n_draws, std::uint64_t seed) const;
  Eigen::ArrayXd cell_logit_mean() const;
  Eigen::ArrayXd cell_logit_var() const;  // marginal, including extra_logit_var
};

// Hierarchical shrinkage on the stabilized cell logits: a grand mean pinned
// to the pooled logit plus one zero-mean Gaussian effect per populated cell.
// The posterior is closed-form, so every cell logit is a convex combination
// of the pooled and the stabilized direct logits; the effect scale is
// selected by exact marginal likelihood over sigma in [1e-3, 10].
BinomialFieldFit fit_partial_pool(const CellCounts& counts, const SelectOptions& opt = {});
BinomialFieldFit fit_partial_pool_fixed(const CellCounts& counts, double sigma,
                                        const NewtonOptions& opt = {});

// Tensor-product P-spline over (age, year) with anisotropic difference
// penalties; the two lambdas are selected over [1e-4, 1e6]. Knots always span
// the full grid (plus year_extension years beyond year_max) so held-out and
// forecast cells stay inside the basis support.
BinomialFieldFit fit_tensor_binomial(const CellCounts& counts, const SmoothSpec& spec,
                                     const SelectOptions& opt = {}, int year_extension = 0);
BinomialFieldFit fit_tensor_binomial_fixed(const CellCounts& counts, const SmoothSpec& spec,
                                           double lambda_age, double lambda_year,
                                           const NewtonOptions& opt = {}, int year_extension = 0);

// ---------------------------------------------------------------------------
// Uniform access to every transition-surface estimator, used by the
// cross-validation harness and the CLI dump.

enum class EstimatorKind { direct, complete, weighted, kernel, partial_pool, tensor };

std::string estimator_name(EstimatorKind kind);
EstimatorKind parse_estimator(const std::string& name);  // throws ConfigError

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::direct;
  double weight_w = 0.5;
  int kernel_half_width = 5;
  SmoothSpec smooth;
  SelectOptions select;
};

using BinomialFitAny =
    std::variant<DirectFit, CompleteFit, WeightedFit, KernelFit, BinomialFieldFit>;

BinomialFitAny fit_estimator(const EstimatorConfig& cfg, const CellCounts& counts);

// Per-cell log-odds draws, n_draws x n_cells. Columns for cells without an
// estimate are NaN. The weighted estimator has no posterior and throws
// ConfigError here.
Eigen::MatrixXd cell_logit_draws(const BinomialFitAny& fit, int n_draws, std::uint64_t seed);

// Cells whose predictive distribution is defined (everything for the
// model-based estimators, non-empty windows or cells otherwise).
BoolArray cells_with_estimate(const BinomialFitAny& fit);

// Summary table used for CSV dumps and plots. mean is the estimator's point
// estimate; the quantiles come from its log-odds posterior mapped through the
// inverse logit (absent for the weighted estimator).
struct CellSummary {
  DomainGrid grid;
  Eigen::ArrayXd mean_p, q025, q500, q975;
  Eigen::ArrayXd post_logit_mean, post_logit_var;
  Eigen::ArrayXd point_logit;
  BoolArray defined;
  BoolArray has_quantiles;
  Eigen::ArrayXi n;
};
CellSummary summarize(const BinomialFitAny& fit, const CellCounts& counts);

// Gauss-Hermite approximation of E[inv_logit(Z)], Z ~ N(mean, var).
double logit_normal_mean(double mean, double var);

}  // namespace sde
