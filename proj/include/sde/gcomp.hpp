#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "sde/grid.hpp"
#include "sde/mh_model.hpp"
#include "sde/panel.hpp"

namespace sde {

// Counterfactual contrasts over a fitted MH model: expected next-year change
// under stress present vs absent, per cell and averaged. Every implemented
// model is additive in y_prev, so effect contrasts never depend on the
// y_prev policy; single-arm prediction surfaces do.

struct YprevPolicy {
  enum class Kind { fixed, observed };
  Kind kind = Kind::fixed;
  double value = 75.0;  // fixed policy only; must lie in [0, 100]

  void validate() const;  // throws ConfigError
};

// "fixed", "fixed:62.5", or "observed".
YprevPolicy parse_policy(const std::string& text);
std::string policy_name(const YprevPolicy& p);

struct GcompOptions {
  YprevPolicy policy;
  int n_draws = 2000;
  std::uint64_t seed = 0;
};

// Posterior draws of the per-cell effect contrast E[dY | M=1] - E[dY | M=0],
// n_draws x n_cells. Partial-pooling cells without their own level in an arm
// get a fresh effect draw at sigma_d, so every cell is defined. Throws
// ConfigError when the model has no stress term.
Eigen::MatrixXd effect_draws(const MhFit& fit, int n_draws, std::uint64_t seed);

struct EffectSurface {
  DomainGrid grid;
  Eigen::ArrayXd mean, q025, q975;
  double overall_mean = 0.0, overall_q025 = 0.0, overall_q975 = 0.0;
  bool observed_policy = false;

  double mean_range() const;  // max - min of the posterior-mean surface
};

// Per-cell effect summaries plus the overall average: record-weighted under
// the observed policy (records required), unweighted over cells otherwise.
EffectSurface effect_surface(const MhFit& fit, const GcompOptions& opt,
                             const std::vector<DiffRecord>* records = nullptr);

// Single-arm counterfactual surface E[dY | M=exposed] under the policy's
// y_prev. Cells without records are undefined (NaN) under the observed
// policy. Valid for models without a stress term (the arm is then ignored).
struct CounterfactualSurface {
  DomainGrid grid;
  int exposed = 0;
  Eigen::ArrayXd mean, q025, q975;
  double overall_mean = 0.0, overall_q025 = 0.0, overall_q975 = 0.0;
};

CounterfactualSurface counterfactual_surface(const MhFit& fit, int exposed,
                                             const GcompOptions& opt,
                                             const std::vector<DiffRecord>* records = nullptr);

// Previous-score shift at which the expected change crosses zero: -b2 / b1.
// Throws NumericalError when |b1| < 1e-12.
double equilibrium_shift(double beta1, double beta2);

struct EquilibriumSummary {
  double point = 0.0;  // at the posterior mode
  double mean = 0.0, q025 = 0.0, q975 = 0.0;
};

EquilibriumSummary equilibrium_summary(const MhFit& fit, int n_draws, std::uint64_t seed);

// The causal caveats attached to every effect artifact: three named
// assumptions and the adjustment set implied by the model.
std::vector<std::string> assumptions_manifest(const MhModelSpec& spec);

// '#'-commented manifest and overall-average lines, then
// age,year,mean,q025,q975 rows over the grid.
void write_effect_csv(const std::string& path, const EffectSurface& s, const MhModelSpec& spec);
void write_surface_csv(const std::string& path, const CounterfactualSurface& s,
                       const MhModelSpec& spec, const YprevPolicy& policy);
void write_equilibrium_csv(const std::string& path, const EquilibriumSummary& s);

}  // namespace sde
