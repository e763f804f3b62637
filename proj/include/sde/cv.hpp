#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "sde/fit.hpp"
#include "sde/grid.hpp"
#include "sde/mh_model.hpp"
#include "sde/panel.hpp"

namespace sde {

// Fold construction, expected log predictive density scoring, and the
// model-comparison table. The driver routines sort records into a canonical
// order first so that fold membership and every total are independent of
// input order.

enum class FoldDesign { stratified, leave_year, leave_age, leave_cohort };

std::string fold_design_name(FoldDesign d);
FoldDesign parse_fold_design(const std::string& name);  // throws ConfigError

struct FoldPlan {
  FoldDesign design = FoldDesign::stratified;
  int n_folds = 5;
  std::vector<int> assignment;  // record index -> fold, in the caller's order
};

// Stratified folds balance sizes within each cell (transitions) or each
// (cell, arm) pair (differences): sizes within a stratum differ by at most
// one. The grouped designs keep all records of a year / age / cohort in one
// fold and spread the distinct values over folds as evenly as possible;
// fewer distinct values than folds is a ConfigError.
FoldPlan make_folds(const std::vector<TransitionRecord>& records, FoldDesign design, int n_folds,
                    std::uint64_t seed);
FoldPlan make_folds(const std::vector<DiffRecord>& records, FoldDesign design, int n_folds,
                    std::uint64_t seed);

void canonical_sort(std::vector<TransitionRecord>& records);
void canonical_sort(std::vector<DiffRecord>& records);

struct ElpdReport {
  Eigen::ArrayXd elpd_i;  // one entry per scored record
  double total = 0.0;
  long n_fallback = 0;  // records scored by the empty-cell log(1/2) rule
};

// Spread of the total: sqrt(N * sample variance of elpd_i).
double elpd_sd(const ElpdReport& r);

struct Comparison {
  double delta = 0.0;
  double se = 0.0;  // sqrt(N * sample variance of per-record differences)
};
// Pointwise comparison; the reports must score the same records in the same
// order (enforced only by length).
Comparison compare_elpd(const ElpdReport& model, const ElpdReport& reference);

// Across-cell spread of the cell point logits (population variance around
// their unweighted mean) and the average posterior logit variance, over the
// cells with a defined estimate.
struct Heterogeneity {
  double v_of_e = 0.0;
  double e_of_v = 0.0;
  int n_cells = 0;
};
Heterogeneity heterogeneity(const CellSummary& cells);

// Bernoulli log predictive density per transition record, averaging the
// event probability over posterior draws. Records in cells without an
// estimate score log(1/2) and are counted in n_fallback.
ElpdReport elpd_binomial(const BinomialFitAny& fit, const std::vector<TransitionRecord>& records,
                         int n_draws, std::uint64_t seed);

// Gaussian log predictive density per difference record under an MH model
// fit. Partial-pooling cells without their own effect are scored with the
// fresh-effect variance folded into the Gaussian analytically.
ElpdReport elpd_gaussian(const MhFit& fit, const std::vector<DiffRecord>& records, int n_draws,
                         std::uint64_t seed);

struct CvOptions {
  FoldDesign design = FoldDesign::stratified;
  int n_folds = 5;
  int n_draws = 2000;
  std::uint64_t seed = 0;
};

// Within-sample and cross-validated elpd plus heterogeneity diagnostics for
// one estimator. Records are copied and canonically sorted; the fold plan is
// shared across estimators by passing the same options and records.
struct EstimatorCvResult {
  ElpdReport within;
  ElpdReport cv;
  Heterogeneity het;
};

EstimatorCvResult evaluate_estimator(const EstimatorConfig& config,
                                     std::vector<TransitionRecord> records,
                                     const DomainGrid& grid, const CvOptions& opt);

// Gaussian counterpart for the MH models.
EstimatorCvResult evaluate_mh_model(const MhModelSpec& spec, std::vector<DiffRecord> records,
                                    const DomainGrid& grid, const CvOptions& opt);

struct CvTableRow {
  std::string estimator;
  double elpd_within = 0.0;
  double delta_within = 0.0;
  double v_of_e = 0.0;
  double e_of_v = 0.0;
  double elpd_cv = 0.0;
  double sd = 0.0;
  double delta_cv = 0.0;
  double delta_sd = 0.0;
  long n_fallback = 0;
};

// One row per estimator, all scored on the same folds; deltas are against
// the reference row. Throws ConfigError on fewer than two estimators or a
// bad reference index.
std::vector<CvTableRow> cv_table(const std::vector<EstimatorConfig>& configs, int reference,
                                 std::vector<TransitionRecord> records, const DomainGrid& grid,
                                 const CvOptions& opt);

// estimator,elpd_within,delta_within,V_of_E_x1000,E_of_V_x1000,elpd_cv,sd,delta_cv,delta_sd
void write_cv_table_csv(const std::string& path, const std::vector<CvTableRow>& rows);

}  // namespace sde
