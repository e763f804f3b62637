#include "sde/cv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <tuple>
#include <utility>
#include <variant>

#include "sde/csv.hpp"
#include "sde/errors.hpp"
#include "sde/rng.hpp"

namespace sde {

namespace {

constexpr double kLogHalf = -0.6931471805599453;
constexpr double kLogTwoPi = 1.8378770664093453;

long cell_key(const DomainCell& c) { return static_cast<long>(c.age) * 100000L + c.year; }

FoldPlan assign_stratified(const std::vector<long>& key, FoldDesign design, int n_folds,
                           std::uint64_t seed) {
  std::map<long, std::vector<int>> groups;
  for (int i = 0; i < static_cast<int>(key.size()); ++i) groups[key[i]].push_back(i);
  FoldPlan plan;
  plan.design = design;
  plan.n_folds = n_folds;
  plan.assignment.assign(key.size(), 0);
  for (auto& [k, idx] : groups) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    shuffle(idx, rng);
    int start = rng.uniform_int(0, n_folds - 1);
    for (std::size_t j = 0; j < idx.size(); ++j)
      plan.assignment[idx[j]] = (start + static_cast<int>(j)) % n_folds;
  }
  return plan;
}

FoldPlan assign_grouped(const std::vector<long>& value, FoldDesign design, int n_folds,
                        std::uint64_t seed, const char* what) {
  std::set<long> distinct(value.begin(), value.end());
  if (static_cast<int>(distinct.size()) < n_folds)
    throw ConfigError(std::string("fold design needs at least as many distinct ") + what +
                      " as folds");
  std::vector<long> vals(distinct.begin(), distinct.end());
  Rng rng(derive_seed(seed, 0x6f1d5));
  shuffle(vals, rng);
  std::map<long, int> fold_of;
  for (std::size_t j = 0; j < vals.size(); ++j)
    fold_of[vals[j]] = static_cast<int>(j % static_cast<std::size_t>(n_folds));
  FoldPlan plan;
  plan.design = design;
  plan.n_folds = n_folds;
  plan.assignment.resize(value.size());
  for (std::size_t i = 0; i < value.size(); ++i) plan.assignment[i] = fold_of[value[i]];
  return plan;
}

long grouped_value(const DomainCell& c, FoldDesign d) {
  switch (d) {
    case FoldDesign::leave_year: return c.year;
    case FoldDesign::leave_age: return c.age;
    case FoldDesign::leave_cohort: return c.cohort();
    default: return 0;
  }
}

const char* grouped_what(FoldDesign d) {
  switch (d) {
    case FoldDesign::leave_year: return "years";
    case FoldDesign::leave_age: return "ages";
    case FoldDesign::leave_cohort: return "cohorts";
    default: return "values";
  }
}

template <class Rec>
FoldPlan make_folds_impl(const std::vector<Rec>& records, FoldDesign design, int n_folds,
                         std::uint64_t seed, const std::function<long(const Rec&)>& stratum) {
  if (n_folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
  std::vector<long> key(records.size());
  if (design == FoldDesign::stratified) {
    for (std::size_t i = 0; i < records.size(); ++i) key[i] = stratum(records[i]);
    return assign_stratified(key, design, n_folds, seed);
  }
  for (std::size_t i = 0; i < records.size(); ++i)
    key[i] = grouped_value(records[i].cell, design);
  return assign_grouped(key, design, n_folds, seed, grouped_what(design));
}

}  // namespace

std::string fold_design_name(FoldDesign d) {
  switch (d) {
    case FoldDesign::stratified: return "stratified";
    case FoldDesign::leave_year: return "leave_year_out";
    case FoldDesign::leave_age: return "leave_age_out";
    case FoldDesign::leave_cohort: return "leave_cohort_out";
  }
  return "unknown";
}

FoldDesign parse_fold_design(const std::string& name) {
  if (name == "stratified") return FoldDesign::stratified;
  if (name == "leave_year_out" || name == "leave_year") return FoldDesign::leave_year;
  if (name == "leave_age_out" || name == "leave_age") return FoldDesign::leave_age;
  if (name == "leave_cohort_out" || name == "leave_cohort") return FoldDesign::leave_cohort;
  throw ConfigError("unknown fold design '" + name +
                    "' (expected stratified, leave_year_out, leave_age_out, leave_cohort_out)");
}

FoldPlan make_folds(const std::vector<TransitionRecord>& records, FoldDesign design, int n_folds,
                    std::uint64_t seed) {
  return make_folds_impl<TransitionRecord>(
      records, design, n_folds, seed, [](const TransitionRecord& r) { return cell_key(r.cell); });
}

FoldPlan make_folds(const std::vector<DiffRecord>& records, FoldDesign design, int n_folds,
                    std::uint64_t seed) {
  return make_folds_impl<DiffRecord>(records, design, n_folds, seed, [](const DiffRecord& r) {
    return cell_key(r.cell) * 2 + (r.exposed ? 1 : 0);
  });
}

void canonical_sort(std::vector<TransitionRecord>& records) {
  std::sort(records.begin(), records.end(), [](const TransitionRecord& a,
                                               const TransitionRecord& b) {
    return std::tie(a.cell.age, a.cell.year, a.prev_state, a.next_state) <
           std::tie(b.cell.age, b.cell.year, b.prev_state, b.next_state);
  });
}

void canonical_sort(std::vector<DiffRecord>& records) {
  std::sort(records.begin(), records.end(), [](const DiffRecord& a, const DiffRecord& b) {
    return std::tie(a.cell.age, a.cell.year, a.exposed, a.y_prev, a.dy) <
           std::tie(b.cell.age, b.cell.year, b.exposed, b.y_prev, b.dy);
  });
}

double elpd_sd(const ElpdReport& r) {
  const Eigen::Index n = r.elpd_i.size();
  if (n < 2) return 0.0;
  double m = r.elpd_i.mean();
  double var = (r.elpd_i - m).square().sum() / static_cast<double>(n - 1);
  return std::sqrt(static_cast<double>(n) * var);
}

Comparison compare_elpd(const ElpdReport& model, const ElpdReport& reference) {
  if (model.elpd_i.size() != reference.elpd_i.size())
    throw ConfigError("elpd comparison needs the same records under both models");
  Comparison c;
  Eigen::ArrayXd d = model.elpd_i - reference.elpd_i;
  c.delta = d.sum();
  const Eigen::Index n = d.size();
  if (n >= 2) {
    double m = d.mean();
    c.se = std::sqrt(static_cast<double>(n) * (d - m).square().sum() / static_cast<double>(n - 1));
  }
  return c;
}

Heterogeneity heterogeneity(const CellSummary& cells) {
  Heterogeneity h;
  // Variance around a shifted origin so that a constant surface (complete
  // pooling) comes out exactly zero instead of mean-rounding noise.
  double origin = 0.0, sum = 0.0;
  for (Eigen::Index c = 0; c < cells.defined.size(); ++c) {
    if (!cells.defined[c]) continue;
    if (h.n_cells == 0) origin = cells.point_logit[c];
    sum += cells.point_logit[c] - origin;
    ++h.n_cells;
  }
  if (h.n_cells == 0) return h;
  double mean = sum / h.n_cells;
  double ss = 0.0, vs = 0.0;
  for (Eigen::Index c = 0; c < cells.defined.size(); ++c) {
    if (!cells.defined[c]) continue;
    double d = cells.point_logit[c] - origin - mean;
    ss += d * d;
    vs += cells.post_logit_var[c];
  }
  h.v_of_e = ss / h.n_cells;
  h.e_of_v = vs / h.n_cells;
  return h;
}

ElpdReport elpd_binomial(const BinomialFitAny& fit, const std::vector<TransitionRecord>& records,
                         int n_draws, std::uint64_t seed) {
  if (n_draws <= 0) throw ConfigError("elpd needs a positive draw count");
  const DomainGrid grid = std::visit([](const auto& f) { return f.grid; }, fit);
  ElpdReport rep;
  rep.elpd_i.resize(static_cast<Eigen::Index>(records.size()));
  if (records.empty()) return rep;

  BoolArray defined = cells_with_estimate(fit);
  Eigen::MatrixXd draws = cell_logit_draws(fit, n_draws, seed);
  const double log_s = std::log(static_cast<double>(n_draws));

  // Records agree on elpd whenever they share (cell, outcome); score each
  // such pair once.
  std::map<std::pair<int, int>, double> cache;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const TransitionRecord& r = records[i];
    if (!grid.contains(r.cell.age, r.cell.year))
      throw DataError("elpd: record outside the estimation grid");
    int c = grid.index_of(r.cell.age, r.cell.year);
    int y = r.event() ? 1 : 0;
    auto [it, inserted] = cache.try_emplace({c, y}, 0.0);
    if (inserted) {
      if (!defined[c]) {
        it->second = kLogHalf;
      } else {
        double mx = -std::numeric_limits<double>::infinity();
        double acc = 0.0;
        for (int s = 0; s < n_draws; ++s) {
          double eta = draws(s, c);
          double lp = y ? -log1pexp(-eta) : -log1pexp(eta);
          if (lp > mx) {
            acc = acc * std::exp(mx - lp) + 1.0;
            mx = lp;
          } else {
            acc += std::exp(lp - mx);
          }
        }
        it->second = mx + std::log(acc) - log_s;
      }
    }
    if (!defined[c]) ++rep.n_fallback;
    rep.elpd_i[static_cast<Eigen::Index>(i)] = it->second;
  }
  rep.total = rep.elpd_i.sum();
  return rep;
}

ElpdReport elpd_gaussian(const MhFit& fit, const std::vector<DiffRecord>& records, int n_draws,
                         std::uint64_t seed) {
  if (n_draws <= 0) throw ConfigError("elpd needs a positive draw count");
  ElpdReport rep;
  const Eigen::Index n = static_cast<Eigen::Index>(records.size());
  rep.elpd_i.resize(n);
  if (records.empty()) return rep;

  // Static per-record pieces: covariates, clamped variance-spline rows, and
  // the sparse map from the cell-effect block to each record.
  Eigen::ArrayXd y(n), dy(n), extra_var(n);
  Eigen::ArrayXd arm(n);
  Eigen::MatrixXd xh(n, fit.q_h);
  Eigen::MatrixXd xs(n, fit.dim_s + fit.dim_s2);
  const bool split = fit.spec.form == MhForm::has_modified;
  for (Eigen::Index i = 0; i < n; ++i) {
    const DiffRecord& r = records[static_cast<std::size_t>(i)];
    if (!fit.grid.contains(r.cell.age, r.cell.year))
      throw DataError("elpd: record outside the estimation grid");
    int c = fit.grid.index_of(r.cell.age, r.cell.year);
    int exposed = fit.spec.has_exposure() ? r.exposed : 0;
    y[i] = r.y_prev;
    dy[i] = r.dy;
    arm[i] = exposed;
    double x = std::clamp(r.y_prev, fit.h_basis.lo, fit.h_basis.hi);
    xh.row(i) = bspline_row(fit.h_basis, x);
    xs.row(i).setZero();
    if (split) {
      if (exposed) {
        if (fit.dim_s2 > 0) xs.row(i).tail(fit.dim_s2) = fit.s2_cells.row(c);
      } else if (fit.dim_s > 0) {
        xs.row(i).head(fit.dim_s) = fit.s_cells.row(c);
      }
    } else if (fit.dim_s > 0) {
      xs.row(i).head(fit.dim_s) = fit.s_cells.row(c);
    }
    // Cells without their own effect integrate the fresh one analytically.
    extra_var[i] = fit.cell_effect_defined(r.cell, exposed) ? 0.0 : fit.sigma_d * fit.sigma_d;
  }

  Eigen::MatrixXd draws = fit.draw_theta(n_draws, seed);
  Eigen::ArrayXd run_max = Eigen::ArrayXd::Constant(n, -std::numeric_limits<double>::infinity());
  Eigen::ArrayXd run_sum = Eigen::ArrayXd::Zero(n);
  for (int s = 0; s < n_draws; ++s) {
    Eigen::VectorXd th = draws.row(s).transpose();
    Eigen::ArrayXd mu = th[fit.i_alpha] + th[fit.i_beta1] * y;
    if (fit.i_beta2 >= 0) mu += th[fit.i_beta2] * arm;
    if (xs.cols() > 0) mu += (xs * th.segment(fit.off_s, xs.cols())).array();
    Eigen::ArrayXd var = (2.0 * (xh * th.tail(fit.q_h)).array()).exp() + extra_var;
    Eigen::ArrayXd lp = -0.5 * (var.log() + kLogTwoPi + (dy - mu).square() / var);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (lp[i] > run_max[i]) {
        run_sum[i] = run_sum[i] * std::exp(run_max[i] - lp[i]) + 1.0;
        run_max[i] = lp[i];
      } else {
        run_sum[i] += std::exp(lp[i] - run_max[i]);
      }
    }
  }
  rep.elpd_i = run_max + run_sum.log() - std::log(static_cast<double>(n_draws));
  rep.total = rep.elpd_i.sum();
  return rep;
}

EstimatorCvResult evaluate_estimator(const EstimatorConfig& config,
                                     std::vector<TransitionRecord> records,
                                     const DomainGrid& grid, const CvOptions& opt) {
  if (config.kind == EstimatorKind::weighted)
    throw ConfigError(
        "the weighted estimator has no predictive distribution and cannot be cross-validated");
  if (records.empty()) throw DataError("cross-validation needs at least one record");
  canonical_sort(records);
  FoldPlan plan = make_folds(records, opt.design, opt.n_folds, opt.seed);

  EstimatorCvResult res;
  CellCounts all = aggregate(records, grid);
  BinomialFitAny full = fit_estimator(config, all);
  res.within = elpd_binomial(full, records, opt.n_draws, derive_seed(opt.seed, 999));
  res.het = heterogeneity(summarize(full, all));

  res.cv.elpd_i.resize(static_cast<Eigen::Index>(records.size()));
  for (int f = 0; f < opt.n_folds; ++f) {
    std::vector<TransitionRecord> train, test;
    std::vector<Eigen::Index> test_idx;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (plan.assignment[i] == f) {
        test.push_back(records[i]);
        test_idx.push_back(static_cast<Eigen::Index>(i));
      } else {
        train.push_back(records[i]);
      }
    }
    if (test.empty()) continue;
    if (train.empty()) throw DataError("cross-validation fold holds every record");
    BinomialFitAny ffit = fit_estimator(config, aggregate(train, grid));
    ElpdReport fr = elpd_binomial(ffit, test, opt.n_draws, derive_seed(opt.seed, 1000 + f));
    for (std::size_t j = 0; j < test_idx.size(); ++j)
      res.cv.elpd_i[test_idx[j]] = fr.elpd_i[static_cast<Eigen::Index>(j)];
    res.cv.n_fallback += fr.n_fallback;
  }
  res.cv.total = res.cv.elpd_i.sum();
  return res;
}

EstimatorCvResult evaluate_mh_model(const MhModelSpec& spec, std::vector<DiffRecord> records,
                                    const DomainGrid& grid, const CvOptions& opt) {
  if (records.empty()) throw DataError("cross-validation needs at least one record");
  canonical_sort(records);
  FoldPlan plan = make_folds(records, opt.design, opt.n_folds, opt.seed);

  EstimatorCvResult res;
  MhFit full = fit_mh_model(spec, records, grid);
  res.within = elpd_gaussian(full, records, opt.n_draws, derive_seed(opt.seed, 999));

  res.cv.elpd_i.resize(static_cast<Eigen::Index>(records.size()));
  for (int f = 0; f < opt.n_folds; ++f) {
    std::vector<DiffRecord> train, test;
    std::vector<Eigen::Index> test_idx;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (plan.assignment[i] == f) {
        test.push_back(records[i]);
        test_idx.push_back(static_cast<Eigen::Index>(i));
      } else {
        train.push_back(records[i]);
      }
    }
    if (test.empty()) continue;
    if (train.empty()) throw DataError("cross-validation fold holds every record");
    MhFit ffit = fit_mh_model(spec, train, grid);
    ElpdReport fr = elpd_gaussian(ffit, test, opt.n_draws, derive_seed(opt.seed, 1000 + f));
    for (std::size_t j = 0; j < test_idx.size(); ++j)
      res.cv.elpd_i[test_idx[j]] = fr.elpd_i[static_cast<Eigen::Index>(j)];
    res.cv.n_fallback += fr.n_fallback;
  }
  res.cv.total = res.cv.elpd_i.sum();
  return res;
}

std::vector<CvTableRow> cv_table(const std::vector<EstimatorConfig>& configs, int reference,
                                 std::vector<TransitionRecord> records, const DomainGrid& grid,
                                 const CvOptions& opt) {
  if (configs.size() < 2) throw ConfigError("the comparison table needs at least two estimators");
  if (reference < 0 || reference >= static_cast<int>(configs.size()))
    throw ConfigError("reference estimator index out of range");
  canonical_sort(records);

  std::vector<EstimatorCvResult> results;
  results.reserve(configs.size());
  for (const EstimatorConfig& cfg : configs)
    results.push_back(evaluate_estimator(cfg, records, grid, opt));

  const EstimatorCvResult& ref = results[static_cast<std::size_t>(reference)];
  std::vector<CvTableRow> rows;
  rows.reserve(configs.size());
  for (std::size_t m = 0; m < configs.size(); ++m) {
    const EstimatorCvResult& r = results[m];
    CvTableRow row;
    row.estimator = estimator_name(configs[m].kind);
    row.elpd_within = r.within.total;
    row.delta_within = r.within.total - ref.within.total;
    row.v_of_e = r.het.v_of_e;
    row.e_of_v = r.het.e_of_v;
    row.elpd_cv = r.cv.total;
    row.sd = elpd_sd(r.cv);
    Comparison cmp = compare_elpd(r.cv, ref.cv);
    row.delta_cv = cmp.delta;
    row.delta_sd = static_cast<int>(m) == reference ? 0.0 : cmp.se;
    row.n_fallback = r.cv.n_fallback;
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_cv_table_csv(const std::string& path, const std::vector<CvTableRow>& rows) {
  FileWriter out(path);
  out.writeln(
      "estimator,elpd_within,delta_within,V_of_E_x1000,E_of_V_x1000,elpd_cv,sd,delta_cv,"
      "delta_sd");
  for (const CvTableRow& r : rows) {
    out.writeln(r.estimator + "," + format_double(r.elpd_within) + "," +
                format_double(r.delta_within) + "," + format_double(r.v_of_e * 1000.0) + "," +
                format_double(r.e_of_v * 1000.0) + "," + format_double(r.elpd_cv) + "," +
                format_double(r.sd) + "," + format_double(r.delta_cv) + "," +
                format_double(r.delta_sd));
  }
}

}  // namespace sde
