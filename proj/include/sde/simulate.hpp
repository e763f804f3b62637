#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sde/grid.hpp"
#include "sde/panel.hpp"

namespace sde {

// Synthetic panel generator with known ground truth. People enter at the
// first year (uniform ages), as an annual age-25 inflow that keeps the age
// pyramid roughly level, and as a one-off top-up wave; they age one year per
// year, drop out with a constant hazard, switch stress state by a first-order
// Markov chain, and move their mental-health score by a Gaussian change.
//
// Truth surfaces are probability-scale functions over (age, year); boundary
// values 0 and 1 are legal (an absorbing state is a valid scenario). The
// transition that lands in cell (a+1, t+1) uses the surface at that
// destination cell, matching how the estimators attribute transitions.

struct ScenarioSpec {
  DomainGrid grid{25, 64, 2001, 2016};
  int n_baseline = 19914;
  int n_topup = 5451;
  int topup_year = 2012;
  double dropout = 0.05;  // annual hazard, exposure-independent
  // Multiplies the hazard by 1.5 for stressed person-years. Untested beyond
  // construction; kept for sensitivity runs only.
  bool informative_dropout = false;
  double init_prevalence = 0.12;

  std::function<double(int age, int year)> p_exit;
  std::function<double(int age, int year)> p_entry;

  // Change model: dY = alpha + beta1 y_prev + s1(a,t) + beta2 M s2(a,t) + sigma(y_prev) eps,
  // with s1 mean zero and s2 mean one over the grid.
  double alpha = 24.75;
  double beta1 = -0.33;
  double beta2 = -2.39;
  std::function<double(int age, int year)> s1;
  std::function<double(int age, int year)> s2;
  std::function<double(double y_prev)> sigma;

  void validate() const;  // throws ConfigError
};

// homogeneous | white_noise | smooth_gradient | has_effect_modified. The
// white-noise cell offsets are baked in from the seed.
ScenarioSpec preset(const std::string& name, std::uint64_t seed);

struct SimResult {
  std::vector<PersonYear> panel;
  DomainGrid grid;
  Eigen::ArrayXd true_exit, true_entry;  // per cell
  Eigen::ArrayXd true_effect;            // beta2 * s2 per cell
};

SimResult generate(const ScenarioSpec& spec, std::uint64_t seed);

// age,year,p_exit,p_entry
void write_truth_transitions_csv(const std::string& path, const SimResult& sim);
// age,year,effect
void write_truth_effects_csv(const std::string& path, const SimResult& sim);

}  // namespace sde
