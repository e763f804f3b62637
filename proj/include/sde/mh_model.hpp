#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sde/basis.hpp"
#include "sde/fit.hpp"
#include "sde/grid.hpp"
#include "sde/panel.hpp"

namespace sde {

// First-difference mental-health model: dy ~ N(mu, sigma) with
//   mu        = alpha + beta1 y_prev [+ beta2 M] [+ cell terms]
//   log sigma = s_h(y_prev)  (low-rank cubic spline, unpenalized)
// The cell terms depend on the pooling flavor: none (complete), one random
// intercept per populated cell or per (cell, arm) (partial), or zero-mean
// tensor-spline surfaces (tensor). has_modified splits the cell terms by
// exposure arm: (1 - M) s1(a,t) + beta2 M + M s2(a,t).

enum class MhPooling { complete, partial, tensor };
enum class MhForm { baseline, has_main, has_modified };

std::string pooling_name(MhPooling p);
MhPooling parse_pooling(const std::string& name);  // throws ConfigError
std::string mh_form_name(MhForm f);
MhForm parse_mh_form(const std::string& name);  // throws ConfigError

struct MhModelSpec {
  MhPooling pooling = MhPooling::tensor;
  MhForm form = MhForm::baseline;
  SmoothSpec smooth;  // tensor pooling only; the zero-mean constraint is applied internally
  int var_df = 5;     // basis size of the cubic log-sigma spline (>= 4)
  SelectOptions select;

  bool has_exposure() const { return form != MhForm::baseline; }
  int n_arm_blocks() const { return form == MhForm::has_modified ? 2 : 1; }
  // complete pooling cannot carry the per-arm cell split -> ConfigError
  void validate() const;
};

struct MhFit {
  DomainGrid grid;
  MhModelSpec spec;
  Eigen::VectorXd theta;  // mean block followed by the log-sigma block
  int q_mean = 0, q_h = 0;

  // Mean-block layout: alpha, beta1, [beta2], [cell-effect block(s)].
  int i_alpha = 0;
  int i_beta1 = 1;
  int i_beta2 = -1;            // -1 when the model has no exposure term
  int off_s = -1, dim_s = 0;   // shared surface, or the unexposed arm
  int off_s2 = -1, dim_s2 = 0; // exposed arm (has_modified only)

  // Cell-effect rows for prediction: logit-free linear maps theta -> effect.
  // Tensor pooling: constrained tensor design over the grid; partial pooling:
  // level indicators with zeros for cells that had no data in that arm.
  Eigen::MatrixXd s_cells;   // n_cells x dim_s
  Eigen::MatrixXd s2_cells;  // n_cells x dim_s2
  BoolArray level_defined;   // partial pooling: cell carries its own effect
  BoolArray level2_defined;
  double sigma_d = 0.0;      // partial pooling: fresh-effect predictive sd

  BsplineBasis h_basis;  // over the observed y_prev range; evaluation clamps
  Eigen::VectorXd hyper; // natural scale
  std::vector<std::string> hyper_names;
  double lml = 0.0;
  bool converged = false;
  int iters = 0;
  double grad_norm = 0.0;

  std::shared_ptr<Eigen::LLT<Eigen::MatrixXd>> precision;  // joint negative Hessian at the mode
  std::function<double(const Eigen::VectorXd&)> log_posterior;

  int q() const { return q_mean + q_h; }
  double beta1() const { return theta[i_beta1]; }
  double beta2() const { return i_beta2 >= 0 ? theta[i_beta2] : 0.0; }

  // Mean predictor under coefficient vector th (defaults to the mode via the
  // callers). Cells without their own partial-pooling effect contribute zero;
  // predictive draws add fresh sigma_d noise at the call sites that need it.
  double mu_at(const DomainCell& cell, double y_prev, int exposed,
               const Eigen::VectorXd& th) const;
  double log_sigma_at(double y_prev, const Eigen::VectorXd& th) const;
  bool cell_effect_defined(const DomainCell& cell, int exposed) const;

  // Joint Laplace draws of theta, n_draws x q.
  Eigen::MatrixXd draw_theta(int n_draws, std::uint64_t seed) const;
};

MhFit fit_mh_model(const MhModelSpec& spec, const std::vector<DiffRecord>& records,
                   const DomainGrid& grid);

// Fixed hyperparameters (sigma_d, or lambda per smooth) instead of the
// marginal-likelihood selection; layout matches MhFit::hyper_names.
MhFit fit_mh_model_fixed(const MhModelSpec& spec, const std::vector<DiffRecord>& records,
                         const DomainGrid& grid, const Eigen::VectorXd& hyper);

// Log of the positive eigenvalue part of a penalty with a known null-space
// dimension (eigenvalues sorted; the null_dim smallest are dropped).
double logdet_positive_part(const Eigen::MatrixXd& K, int null_dim);

}  // namespace sde
