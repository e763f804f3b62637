#include "sde/gcomp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "sde/csv.hpp"
#include "sde/errors.hpp"
#include "sde/rng.hpp"

namespace sde {

namespace {

const double kNaN = std::numeric_limits<double>::quiet_NaN();

double draw_quantile(std::vector<double>& sorted, double p) {
  if (sorted.empty()) return kNaN;
  std::sort(sorted.begin(), sorted.end());
  double h = p * (static_cast<double>(sorted.size()) - 1.0);
  std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= sorted.size()) return sorted.back();
  double f = h - static_cast<double>(lo);
  return sorted[lo] * (1.0 - f) + sorted[lo + 1] * f;
}

struct DrawSummary {
  Eigen::ArrayXd mean, q025, q975;
};

// Column-wise mean and quantiles; NaN columns stay NaN.
DrawSummary summarize_draws(const Eigen::MatrixXd& draws) {
  const Eigen::Index n_cols = draws.cols();
  DrawSummary s;
  s.mean.setConstant(n_cols, kNaN);
  s.q025.setConstant(n_cols, kNaN);
  s.q975.setConstant(n_cols, kNaN);
  std::vector<double> buf;
  for (Eigen::Index c = 0; c < n_cols; ++c) {
    if (draws.rows() == 0 || !std::isfinite(draws(0, c))) continue;
    s.mean[c] = draws.col(c).mean();
    buf.assign(draws.col(c).data(), draws.col(c).data() + draws.rows());
    s.q025[c] = draw_quantile(buf, 0.025);
    s.q975[c] = draw_quantile(buf, 0.975);
  }
  return s;
}

// Record-count weights per cell, normalized. Cells without records weigh 0.
Eigen::ArrayXd record_weights(const DomainGrid& grid, const std::vector<DiffRecord>& records) {
  Eigen::ArrayXd w = Eigen::ArrayXd::Zero(grid.n_cells());
  for (const DiffRecord& r : records) {
    if (!grid.contains(r.cell.age, r.cell.year))
      throw DataError("gcomp: record outside the estimation grid");
    w[grid.index_of(r.cell.age, r.cell.year)] += 1.0;
  }
  double total = w.sum();
  if (total <= 0.0) throw DataError("gcomp: no usable records for the observed policy");
  return w / total;
}

// Weighted average of per-cell draws, skipping zero-weight columns so NaN
// cells cannot poison the total.
Eigen::ArrayXd weighted_rowmeans(const Eigen::MatrixXd& draws, const Eigen::ArrayXd& w) {
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(draws.rows());
  for (Eigen::Index c = 0; c < draws.cols(); ++c) {
    if (w[c] <= 0.0) continue;
    out += w[c] * draws.col(c).array();
  }
  return out;
}

void summarize_overall(const Eigen::ArrayXd& totals, double* mean, double* q025, double* q975) {
  *mean = totals.mean();
  std::vector<double> buf(totals.data(), totals.data() + totals.size());
  *q025 = draw_quantile(buf, 0.025);
  *q975 = draw_quantile(buf, 0.975);
}

}  // namespace

void YprevPolicy::validate() const {
  if (kind == Kind::fixed && (value < 0.0 || value > 100.0))
    throw ConfigError("fixed y_prev policy must lie in [0, 100]");
}

YprevPolicy parse_policy(const std::string& text) {
  YprevPolicy p;
  if (text == "observed") {
    p.kind = YprevPolicy::Kind::observed;
    return p;
  }
  if (text == "fixed") return p;
  if (text.rfind("fixed:", 0) == 0) {
    p.value = parse_double_field(text.substr(6), "y_prev policy");
    p.validate();
    return p;
  }
  throw ConfigError("unknown y_prev policy '" + text + "' (expected fixed[:value] or observed)");
}

std::string policy_name(const YprevPolicy& p) {
  if (p.kind == YprevPolicy::Kind::observed) return "observed";
  return "fixed:" + format_double(p.value);
}

Eigen::MatrixXd effect_draws(const MhFit& fit, int n_draws, std::uint64_t seed) {
  if (!fit.spec.has_exposure())
    throw ConfigError("effect queries need a model with the stress term (has_main or "
                      "has_modified)");
  Eigen::MatrixXd th = fit.draw_theta(n_draws, derive_seed(seed, 11));
  const int n_cells = fit.grid.n_cells();
  Eigen::MatrixXd out = th.col(fit.i_beta2).replicate(1, n_cells);
  if (fit.spec.form == MhForm::has_modified) {
    out += th.middleCols(fit.off_s2, fit.dim_s2) * fit.s2_cells.transpose();
    out -= th.middleCols(fit.off_s, fit.dim_s) * fit.s_cells.transpose();
    if (fit.spec.pooling == MhPooling::partial) {
      Rng rng(derive_seed(seed, 31));
      for (int c = 0; c < n_cells; ++c) {
        bool d1 = fit.level_defined[c], d2 = fit.level2_defined[c];
        if (d1 && d2) continue;
        for (int s = 0; s < n_draws; ++s) {
          if (!d2) out(s, c) += fit.sigma_d * rng.normal();
          if (!d1) out(s, c) -= fit.sigma_d * rng.normal();
        }
      }
    }
  }
  return out;
}

double EffectSurface::mean_range() const {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (Eigen::Index c = 0; c < mean.size(); ++c) {
    if (!std::isfinite(mean[c])) continue;
    lo = std::min(lo, mean[c]);
    hi = std::max(hi, mean[c]);
  }
  return hi - lo;
}

EffectSurface effect_surface(const MhFit& fit, const GcompOptions& opt,
                             const std::vector<DiffRecord>* records) {
  opt.policy.validate();
  Eigen::MatrixXd draws = effect_draws(fit, opt.n_draws, opt.seed);
  DrawSummary s = summarize_draws(draws);

  EffectSurface out;
  out.grid = fit.grid;
  out.mean = s.mean;
  out.q025 = s.q025;
  out.q975 = s.q975;
  out.observed_policy = opt.policy.kind == YprevPolicy::Kind::observed;

  Eigen::ArrayXd w;
  if (out.observed_policy) {
    if (!records) throw ConfigError("the observed policy needs the fitted records");
    w = record_weights(fit.grid, *records);
  } else {
    w = Eigen::ArrayXd::Constant(fit.grid.n_cells(), 1.0 / fit.grid.n_cells());
  }
  Eigen::ArrayXd totals = weighted_rowmeans(draws, w);
  summarize_overall(totals, &out.overall_mean, &out.overall_q025, &out.overall_q975);
  return out;
}

CounterfactualSurface counterfactual_surface(const MhFit& fit, int exposed,
                                             const GcompOptions& opt,
                                             const std::vector<DiffRecord>* records) {
  opt.policy.validate();
  if (exposed != 0 && !fit.spec.has_exposure()) exposed = 0;
  const int n_cells = fit.grid.n_cells();
  const bool observed = opt.policy.kind == YprevPolicy::Kind::observed;

  // Per-cell y_prev under the policy.
  Eigen::ArrayXd y_cell(n_cells);
  Eigen::ArrayXd w;
  if (observed) {
    if (!records) throw ConfigError("the observed policy needs the fitted records");
    w = record_weights(fit.grid, *records);
    Eigen::ArrayXd ysum = Eigen::ArrayXd::Zero(n_cells), cnt = Eigen::ArrayXd::Zero(n_cells);
    for (const DiffRecord& r : *records) {
      int c = fit.grid.index_of(r.cell.age, r.cell.year);
      ysum[c] += r.y_prev;
      cnt[c] += 1.0;
    }
    for (int c = 0; c < n_cells; ++c) y_cell[c] = cnt[c] > 0 ? ysum[c] / cnt[c] : kNaN;
  } else {
    y_cell.setConstant(opt.policy.value);
    w = Eigen::ArrayXd::Constant(n_cells, 1.0 / n_cells);
  }

  Eigen::MatrixXd th = fit.draw_theta(opt.n_draws, derive_seed(opt.seed, 11));
  Eigen::MatrixXd draws(opt.n_draws, n_cells);
  Eigen::ArrayXd base = th.col(fit.i_alpha).array();
  if (exposed && fit.i_beta2 >= 0) base += th.col(fit.i_beta2).array();

  // Cell terms for the requested arm.
  Eigen::MatrixXd sterm;
  const bool split = fit.spec.form == MhForm::has_modified;
  if (split && exposed) {
    sterm = th.middleCols(fit.off_s2, fit.dim_s2) * fit.s2_cells.transpose();
  } else if (fit.dim_s > 0) {
    sterm = th.middleCols(fit.off_s, fit.dim_s) * fit.s_cells.transpose();
  } else {
    sterm = Eigen::MatrixXd::Zero(opt.n_draws, n_cells);
  }
  for (int c = 0; c < n_cells; ++c) {
    if (!std::isfinite(y_cell[c])) {
      draws.col(c).setConstant(kNaN);
      continue;
    }
    draws.col(c) = (base + th.col(fit.i_beta1).array() * y_cell[c] + sterm.col(c).array()).matrix();
  }
  if (fit.spec.pooling == MhPooling::partial) {
    Rng rng(derive_seed(opt.seed, 37 + static_cast<std::uint64_t>(exposed ? 1 : 0)));
    const BoolArray& defined = (split && exposed) ? fit.level2_defined : fit.level_defined;
    for (int c = 0; c < n_cells; ++c) {
      if (defined[c] || !std::isfinite(y_cell[c])) continue;
      for (int s = 0; s < opt.n_draws; ++s) draws(s, c) += fit.sigma_d * rng.normal();
    }
  }

  DrawSummary s = summarize_draws(draws);
  CounterfactualSurface out;
  out.grid = fit.grid;
  out.exposed = exposed ? 1 : 0;
  out.mean = s.mean;
  out.q025 = s.q025;
  out.q975 = s.q975;
  Eigen::ArrayXd totals = weighted_rowmeans(draws, w);
  summarize_overall(totals, &out.overall_mean, &out.overall_q025, &out.overall_q975);
  return out;
}

double equilibrium_shift(double beta1, double beta2) {
  if (std::abs(beta1) < 1e-12)
    throw NumericalError("equilibrium shift undefined: the y_prev slope is numerically zero");
  return -beta2 / beta1;
}

EquilibriumSummary equilibrium_summary(const MhFit& fit, int n_draws, std::uint64_t seed) {
  if (!fit.spec.has_exposure())
    throw ConfigError("the equilibrium shift needs a model with the stress term");
  EquilibriumSummary s;
  s.point = equilibrium_shift(fit.beta1(), fit.beta2());
  Eigen::MatrixXd th = fit.draw_theta(n_draws, derive_seed(seed, 13));
  Eigen::ArrayXd vals(n_draws);
  for (int i = 0; i < n_draws; ++i)
    vals[i] = equilibrium_shift(th(i, fit.i_beta1), th(i, fit.i_beta2));
  std::vector<double> buf(vals.data(), vals.data() + vals.size());
  s.mean = vals.mean();
  s.q025 = draw_quantile(buf, 0.025);
  buf.assign(vals.data(), vals.data() + vals.size());
  s.q975 = draw_quantile(buf, 0.975);
  return s;
}

std::vector<std::string> assumptions_manifest(const MhModelSpec& spec) {
  std::vector<std::string> lines;
  lines.push_back(
      "causal caveat: contrasts below are associational unless the assumptions hold");
  lines.push_back(
      "assumption exchangeability: no unmeasured confounding of housing stress and the "
      "mental-health change given the adjustment set");
  lines.push_back(
      "assumption manipulability: housing stress admits a well-defined intervention in every "
      "cell");
  lines.push_back(
      "assumption stable-unit-treatment-value: one person's exposure does not affect another's "
      "outcome, and exposure comes in one version");
  lines.push_back("adjustment set (" + pooling_name(spec.pooling) +
                  " pooling): age, calendar year, previous mental-health score");
  return lines;
}

namespace {

std::string cell_row(const DomainCell& cell, double mean, double q025, double q975) {
  std::string row = std::to_string(cell.age) + "," + std::to_string(cell.year) + ",";
  if (std::isfinite(mean))
    row += format_double(mean) + "," + format_double(q025) + "," + format_double(q975);
  else
    row += ",,";
  return row;
}

}  // namespace

void write_effect_csv(const std::string& path, const EffectSurface& s, const MhModelSpec& spec) {
  FileWriter out(path);
  for (const std::string& line : assumptions_manifest(spec)) out.writeln("# " + line);
  out.writeln("# overall average effect (" +
              std::string(s.observed_policy ? "observed policy, record-weighted"
                                            : "fixed policy, unweighted over cells") +
              "): mean=" + format_double(s.overall_mean) + " q025=" +
              format_double(s.overall_q025) + " q975=" + format_double(s.overall_q975));
  out.writeln("age,year,mean,q025,q975");
  for (int c = 0; c < s.grid.n_cells(); ++c)
    out.writeln(cell_row(s.grid.cell_at(c), s.mean[c], s.q025[c], s.q975[c]));
}

void write_surface_csv(const std::string& path, const CounterfactualSurface& s,
                       const MhModelSpec& spec, const YprevPolicy& policy) {
  FileWriter out(path);
  for (const std::string& line : assumptions_manifest(spec)) out.writeln("# " + line);
  out.writeln("# arm: stress " + std::string(s.exposed ? "present" : "absent") +
              "; y_prev policy: " + policy_name(policy));
  out.writeln("# overall average: mean=" + format_double(s.overall_mean) +
              " q025=" + format_double(s.overall_q025) +
              " q975=" + format_double(s.overall_q975));
  out.writeln("age,year,mean,q025,q975");
  for (int c = 0; c < s.grid.n_cells(); ++c)
    out.writeln(cell_row(s.grid.cell_at(c), s.mean[c], s.q025[c], s.q975[c]));
}

void write_equilibrium_csv(const std::string& path, const EquilibriumSummary& s) {
  FileWriter out(path);
  out.writeln("point,mean,q025,q975");
  out.writeln(format_double(s.point) + "," + format_double(s.mean) + "," +
              format_double(s.q025) + "," + format_double(s.q975));
}

}  // namespace sde
