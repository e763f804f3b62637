#include "sde/mh_model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "sde/errors.hpp"
#include "sde/rng.hpp"

namespace sde {

namespace {

constexpr double kLogTwoPi = 1.8378770664093453;

// Mean-block column layout shared by the fitting passes.
struct Layout {
  int q_mean = 0, q_h = 0;
  int i_beta2 = -1;
  int off_s = -1, dim_s = 0;
  int off_s2 = -1, dim_s2 = 0;
};

// Records grouped by (cell, arm): within a group the mean-design row differs
// only through y_prev, so the weighted normal equations reduce to six
// aggregate moments per group against a static column pattern.
struct Workspace {
  int n_records = 0;
  int n_cells = 0;
  Eigen::ArrayXd y, dy;
  Eigen::ArrayXi group;  // cell * 2 + arm
  Eigen::MatrixXd xh;    // N x q_h

  std::vector<int> active;                                 // populated groups, ascending
  std::vector<std::vector<std::pair<int, double>>> gcols;  // static entries per group

  // aggregates under the current weights, indexed by group
  Eigen::ArrayXd sw, swy, swyy, swd, swdy, swdd;
  double const_w = 0.0;  // sum over records of -log sigma - log(2 pi)/2
};

void compute_logsig(const Workspace& ws, const Eigen::VectorXd& th_h, Eigen::ArrayXd& logsig,
                    Eigen::ArrayXd& w) {
  logsig = (ws.xh * th_h).array();
  w = (-2.0 * logsig).exp();
}

void aggregate(Workspace& ws, const Eigen::ArrayXd& w, const Eigen::ArrayXd& logsig) {
  const int n_groups = 2 * ws.n_cells;
  ws.sw.setZero(n_groups);
  ws.swy.setZero(n_groups);
  ws.swyy.setZero(n_groups);
  ws.swd.setZero(n_groups);
  ws.swdy.setZero(n_groups);
  ws.swdd.setZero(n_groups);
  for (int i = 0; i < ws.n_records; ++i) {
    int g = ws.group[i];
    double wi = w[i], yi = ws.y[i], di = ws.dy[i];
    ws.sw[g] += wi;
    ws.swy[g] += wi * yi;
    ws.swyy[g] += wi * yi * yi;
    ws.swd[g] += wi * di;
    ws.swdy[g] += wi * di * yi;
    ws.swdd[g] += wi * di * di;
  }
  ws.const_w = -logsig.sum() - 0.5 * kLogTwoPi * ws.n_records;
}

// A = X'WX and b = X'W dy over the mean block, from the group aggregates.
// Column 1 (beta1, the y_prev slope) is the only one that varies within a
// group and is handled through the y-weighted moments.
void build_normal_eq(const Workspace& ws, const Layout& ly, Eigen::MatrixXd& a,
                     Eigen::VectorXd& b) {
  a.setZero(ly.q_mean, ly.q_mean);
  b.setZero(ly.q_mean);
  const int ib1 = 1;
  for (int g : ws.active) {
    const auto& cols = ws.gcols[g];
    double sw = ws.sw[g], swy = ws.swy[g];
    for (std::size_t p = 0; p < cols.size(); ++p) {
      auto [cp, vp] = cols[p];
      for (std::size_t r = 0; r <= p; ++r) {
        auto [cr, vr] = cols[r];
        a(std::max(cp, cr), std::min(cp, cr)) += sw * vp * vr;
      }
      a(std::max(cp, ib1), std::min(cp, ib1)) += swy * vp;
      b[cp] += ws.swd[g] * vp;
    }
    a(ib1, ib1) += ws.swyy[g];
    b[ib1] += ws.swdy[g];
  }
  a = a.selfadjointView<Eigen::Lower>();
}

// Static (y-free) part of the linear predictor per group.
Eigen::ArrayXd group_static_values(const Workspace& ws, const Eigen::VectorXd& th_mu) {
  Eigen::ArrayXd sval = Eigen::ArrayXd::Zero(2 * ws.n_cells);
  for (int g : ws.active) {
    double v = 0.0;
    for (auto [c, x] : ws.gcols[g]) v += x * th_mu[c];
    sval[g] = v;
  }
  return sval;
}

Eigen::ArrayXd residuals(const Workspace& ws, const Eigen::VectorXd& th_mu) {
  Eigen::ArrayXd sval = group_static_values(ws, th_mu);
  Eigen::ArrayXd r(ws.n_records);
  double b1 = th_mu[1];
  for (int i = 0; i < ws.n_records; ++i)
    r[i] = ws.dy[i] - sval[ws.group[i]] - b1 * ws.y[i];
  return r;
}

double variance_loglik(const Workspace& ws, const Eigen::ArrayXd& r, const Eigen::VectorXd& th_h) {
  Eigen::ArrayXd logsig = (ws.xh * th_h).array();
  Eigen::ArrayXd q = r.square() * (-2.0 * logsig).exp();
  double v = -logsig.sum() - 0.5 * q.sum();
  return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
}

// Newton steps on the log-sigma coefficients for fixed residuals.
void variance_newton(const Workspace& ws, const Eigen::ArrayXd& r, Eigen::VectorXd& th_h,
                     double tol, int max_iter) {
  double f = variance_loglik(ws, r, th_h);
  for (int it = 0; it < max_iter; ++it) {
    Eigen::ArrayXd logsig = (ws.xh * th_h).array();
    Eigen::ArrayXd q = r.square() * (-2.0 * logsig).exp();
    Eigen::VectorXd grad = ws.xh.transpose() * (q - 1.0).matrix();
    if (grad.lpNorm<Eigen::Infinity>() <= tol) return;
    Eigen::MatrixXd h = 2.0 * ws.xh.transpose() * q.matrix().asDiagonal() * ws.xh;
    Eigen::LLT<Eigen::MatrixXd> llt(h);
    if (llt.info() != Eigen::Success)
      throw NumericalError("log-sigma spline Hessian is not positive definite");
    Eigen::VectorXd delta = llt.solve(grad);
    double slope = grad.dot(delta);
    double step = 1.0;
    bool moved = false;
    while (step > 1e-14) {
      Eigen::VectorXd cand = th_h + step * delta;
      double fc = variance_loglik(ws, r, cand);
      if (fc >= f + 1e-4 * step * slope) {
        th_h = cand;
        f = fc;
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) return;
  }
}

struct AltState {
  Eigen::VectorXd th_mu, th_h;
  Eigen::ArrayXd logsig, w, r;
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
  bool converged = false;
  int iters = 0;
  double gnorm = 0.0;
};

Eigen::MatrixXd joint_hessian(const Workspace& ws, const Layout& ly, const AltState& st,
                              const Eigen::MatrixXd& k);

// Refreshes the state arrays for the current coefficients and returns the
// joint gradient; gnorm is set to its infinity norm.
Eigen::VectorXd eval_state(Workspace& ws, const Layout& ly, const Eigen::MatrixXd& k,
                           AltState& st) {
  compute_logsig(ws, st.th_h, st.logsig, st.w);
  aggregate(ws, st.w, st.logsig);
  build_normal_eq(ws, ly, st.a, st.b);
  st.r = residuals(ws, st.th_mu);
  Eigen::VectorXd g(ly.q_mean + ly.q_h);
  g.head(ly.q_mean) = st.b - (st.a + k) * st.th_mu;
  Eigen::ArrayXd q = st.r.square() * st.w;
  g.tail(ly.q_h) = ws.xh.transpose() * (q - 1.0).matrix();
  st.gnorm = g.lpNorm<Eigen::Infinity>();
  return g;
}

// Maximizes the penalized log likelihood over both coefficient blocks. Block
// ascent (exact weighted least squares on the mean block alternating with
// Newton steps on the variance block) is robust far from the mode but its
// linear rate degrades badly when the blocks are strongly coupled, so after a
// few sweeps the loop switches to damped Newton steps on the joint gradient.
// Steps are certified by decrease of the squared gradient norm, the standard
// merit function for Newton root finding: where the negative joint Hessian is
// positive definite the Newton direction both ascends the objective and
// descends the merit, and unlike objective differences the merit stays fully
// resolved in floating point near the mode.
AltState alternate(Workspace& ws, const Layout& ly, const Eigen::MatrixXd& k,
                   Eigen::VectorXd th_mu, Eigen::VectorXd th_h, const NewtonOptions& opt) {
  AltState st;
  st.th_mu = std::move(th_mu);
  st.th_h = std::move(th_h);
  // The summation roundoff floor grows with the record count; keep the
  // target above it.
  const double tol = opt.grad_tol * std::max(1.0, std::sqrt(double(ws.n_records)));
  constexpr int kBlockSweeps = 3;

  Eigen::VectorXd g;
  bool fresh = false;
  bool blocks_stalled = false;
  for (st.iters = 0; st.iters < opt.max_iter; ++st.iters) {
    if (!fresh) g = eval_state(ws, ly, k, st);
    fresh = false;
    if (st.gnorm <= tol) {
      st.converged = true;
      return st;
    }

    bool stepped = false;
    bool joint_tried = false;
    if (st.iters >= kBlockSweeps || blocks_stalled) {
      // The negative joint Hessian is positive definite near the mode; if the
      // factorization fails we are still in the global phase and fall back to
      // a block sweep.
      Eigen::LLT<Eigen::MatrixXd> llt(joint_hessian(ws, ly, st, k));
      if (llt.info() == Eigen::Success) {
        joint_tried = true;
        Eigen::VectorXd delta = llt.solve(g);
        Eigen::VectorXd mu_old = st.th_mu, h_old = st.th_h;
        double phi = g.squaredNorm();
        for (double step = 1.0; step > 2e-4 && !stepped; step *= 0.5) {
          st.th_mu = mu_old + step * delta.head(ly.q_mean);
          st.th_h = h_old + step * delta.tail(ly.q_h);
          Eigen::VectorXd gc = eval_state(ws, ly, k, st);
          if (gc.squaredNorm() <= (1.0 - 2e-4 * step) * phi) {
            g = std::move(gc);
            fresh = true;
            stepped = true;
          }
        }
        if (!stepped) {
          // No damping of the Newton step reduces the merit: the gradient is
          // at its roundoff floor. Restore the incumbent before deciding.
          st.th_mu = std::move(mu_old);
          st.th_h = std::move(h_old);
          g = eval_state(ws, ly, k, st);
        }
      }
    }
    if (!stepped) {
      Eigen::VectorXd mu_prev = st.th_mu, h_prev = st.th_h;
      Eigen::LLT<Eigen::MatrixXd> llt(st.a + k);
      if (llt.info() != Eigen::Success)
        throw NumericalError("mean-block normal equations are not positive definite");
      st.th_mu = llt.solve(st.b);
      st.r = residuals(ws, st.th_mu);
      variance_newton(ws, st.r, st.th_h, 0.1 * tol, 50);
      // The iteration is deterministic, so an unmoved state is a fixed point
      // and repeating the sweep cannot improve it. Bring the joint phase
      // online if it has not had a chance yet; otherwise every available move
      // is exhausted and the state sits at the roundoff floor.
      if (st.th_mu == mu_prev && st.th_h == h_prev) {
        if (joint_tried || blocks_stalled) break;
        blocks_stalled = true;
      }
    }
  }
  // Leave the state arrays consistent with the final coefficients.
  eval_state(ws, ly, k, st);
  st.converged = st.gnorm <= tol;
  return st;
}

// Joint negative Hessian of the penalized log likelihood at the mode.
Eigen::MatrixXd joint_hessian(const Workspace& ws, const Layout& ly, const AltState& st,
                              const Eigen::MatrixXd& k) {
  const int qm = ly.q_mean, qh = ly.q_h, q = qm + qh;
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(q, q);
  h.topLeftCorner(qm, qm) = st.a + k;
  Eigen::ArrayXd qi = st.r.square() * st.w;
  h.bottomRightCorner(qh, qh) = 2.0 * ws.xh.transpose() * qi.matrix().asDiagonal() * ws.xh;

  // Cross block 2 X' diag(w r) Xh, via per-group aggregates of w r h and w r y h.
  Eigen::MatrixXd t1 = Eigen::MatrixXd::Zero(2 * ws.n_cells, qh);
  Eigen::MatrixXd t2 = Eigen::MatrixXd::Zero(2 * ws.n_cells, qh);
  for (int i = 0; i < ws.n_records; ++i) {
    int g = ws.group[i];
    double wr = st.w[i] * st.r[i];
    t1.row(g) += wr * ws.xh.row(i);
    t2.row(g) += wr * ws.y[i] * ws.xh.row(i);
  }
  Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(qm, qh);
  for (int g : ws.active) {
    for (auto [c, v] : ws.gcols[g]) cross.row(c) += 2.0 * v * t1.row(g);
    cross.row(1) += 2.0 * t2.row(g);
  }
  h.topRightCorner(qm, qh) = cross;
  h.bottomLeftCorner(qh, qm) = cross.transpose();
  return h;
}

double penalized_loglik(const Workspace& ws, const AltState& st, const Eigen::MatrixXd& k,
                        double* loglik_out) {
  double wrss = (st.r.square() * st.w).sum();
  double ll = ws.const_w - 0.5 * wrss;
  if (loglik_out) *loglik_out = ll;
  return ll - 0.5 * st.th_mu.dot(k * st.th_mu);
}

// Exact Gaussian log marginal likelihood of the mean block under frozen
// weights, the workhorse of the smoothing-parameter scans.
double frozen_lml(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double swdd_sum,
                  double const_w, const Eigen::MatrixXd& k, double ldp_k) {
  Eigen::LLT<Eigen::MatrixXd> llt(a + k);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  Eigen::VectorXd beta = llt.solve(b);
  double wrss = swdd_sum - 2.0 * beta.dot(b) + beta.dot(a * beta);
  double ll = const_w - 0.5 * wrss;
  double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return ll - 0.5 * beta.dot(k * beta) + 0.5 * ldp_k - 0.5 * logdet;
}

// Penalty constructor plus its positive-part log determinant, as a function
// of the natural-scale hyperparameters.
struct PenaltyModel {
  Eigen::VectorXd log10_lo, log10_hi;
  std::vector<std::string> names;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> build;
  std::function<double(const Eigen::VectorXd&)> ldp;
  int n_hyper() const { return static_cast<int>(names.size()); }
};

}  // namespace

double logdet_positive_part(const Eigen::MatrixXd& k, int null_dim) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k);
  if (es.info() != Eigen::Success)
    throw NumericalError("logdet_positive_part: eigendecomposition failed");
  const Eigen::VectorXd& ev = es.eigenvalues();  // ascending
  if (null_dim < 0 || null_dim > ev.size())
    throw ConfigError("logdet_positive_part: invalid null-space dimension");
  double s = 0.0;
  for (Eigen::Index i = null_dim; i < ev.size(); ++i) {
    if (ev[i] <= 0.0)
      throw NumericalError("logdet_positive_part: nonpositive eigenvalue outside the null space");
    s += std::log(ev[i]);
  }
  return s;
}

std::string pooling_name(MhPooling p) {
  switch (p) {
    case MhPooling::complete: return "complete";
    case MhPooling::partial: return "partial";
    case MhPooling::tensor: return "tensor";
  }
  return "unknown";
}

MhPooling parse_pooling(const std::string& name) {
  if (name == "complete") return MhPooling::complete;
  if (name == "partial" || name == "partial_pool") return MhPooling::partial;
  if (name == "tensor") return MhPooling::tensor;
  throw ConfigError("unknown pooling '" + name + "' (expected complete, partial, tensor)");
}

std::string mh_form_name(MhForm f) {
  switch (f) {
    case MhForm::baseline: return "baseline";
    case MhForm::has_main: return "has_main";
    case MhForm::has_modified: return "has_modified";
  }
  return "unknown";
}

MhForm parse_mh_form(const std::string& name) {
  if (name == "baseline") return MhForm::baseline;
  if (name == "has_main") return MhForm::has_main;
  if (name == "has_modified") return MhForm::has_modified;
  throw ConfigError("unknown model form '" + name +
                    "' (expected baseline, has_main, has_modified)");
}

void MhModelSpec::validate() const {
  if (pooling == MhPooling::tensor) smooth.validate();
  if (var_df < 4) throw ConfigError("var_df must be at least 4 (cubic spline)");
  if (pooling == MhPooling::complete && form == MhForm::has_modified)
    throw ConfigError(
        "complete pooling has no cell terms to split by arm; has_modified needs partial or "
        "tensor pooling");
}

double MhFit::mu_at(const DomainCell& cell, double y_prev, int exposed,
                    const Eigen::VectorXd& th) const {
  double v = th[i_alpha] + th[i_beta1] * y_prev;
  if (i_beta2 >= 0 && exposed) v += th[i_beta2];
  if (dim_s == 0 && dim_s2 == 0) return v;
  int c = grid.index_of(cell.age, cell.year);
  if (spec.form == MhForm::has_modified) {
    if (exposed) {
      if (dim_s2 > 0) v += s2_cells.row(c).dot(th.segment(off_s2, dim_s2).transpose());
    } else {
      v += s_cells.row(c).dot(th.segment(off_s, dim_s).transpose());
    }
  } else if (dim_s > 0) {
    v += s_cells.row(c).dot(th.segment(off_s, dim_s).transpose());
  }
  return v;
}

double MhFit::log_sigma_at(double y_prev, const Eigen::VectorXd& th) const {
  double x = std::clamp(y_prev, h_basis.lo, h_basis.hi);
  return bspline_row(h_basis, x).dot(th.segment(q_mean, q_h).transpose());
}

bool MhFit::cell_effect_defined(const DomainCell& cell, int exposed) const {
  if (spec.pooling != MhPooling::partial) return true;
  int c = grid.index_of(cell.age, cell.year);
  if (spec.form == MhForm::has_modified && exposed) return level2_defined[c];
  return level_defined[c];
}

Eigen::MatrixXd MhFit::draw_theta(int n_draws, std::uint64_t seed) const {
  if (n_draws <= 0) throw ConfigError("draw_theta: n_draws must be positive");
  const int dim = q();
  Eigen::MatrixXd out(n_draws, dim);
  Rng rng(derive_seed(seed, 23));
  for (int s = 0; s < n_draws; ++s) {
    Eigen::VectorXd z = normal_vector(rng, dim);
    out.row(s) = (theta + precision->matrixU().solve(z)).transpose();
  }
  return out;
}

namespace {

MhFit fit_impl(const MhModelSpec& spec, const std::vector<DiffRecord>& records,
               const DomainGrid& grid, const Eigen::VectorXd* fixed_hyper) {
  spec.validate();
  grid.validate();
  if (records.empty()) throw DataError("mh model: no difference records");
  const int n = static_cast<int>(records.size());
  const int n_cells = grid.n_cells();

  double ymin = records[0].y_prev, ymax = records[0].y_prev;
  for (const auto& r : records) {
    if (!grid.contains(r.cell.age, r.cell.year))
      throw DataError("mh model: record outside the grid");
    ymin = std::min(ymin, r.y_prev);
    ymax = std::max(ymax, r.y_prev);
  }
  if (ymax - ymin < 1e-9)
    throw DataError("mh model: previous scores are constant; the log-sigma spline needs spread");

  MhFit fit;
  fit.grid = grid;
  fit.spec = spec;
  fit.h_basis = uniform_bspline(ymin, ymax, spec.var_df - 4, 3);
  fit.q_h = fit.h_basis.n_basis();

  // Workspace and record grouping.
  Workspace ws;
  ws.n_records = n;
  ws.n_cells = n_cells;
  ws.y.resize(n);
  ws.dy.resize(n);
  ws.group.resize(n);
  ws.xh.resize(n, fit.q_h);
  std::vector<long> group_count(2 * n_cells, 0);
  for (int i = 0; i < n; ++i) {
    const DiffRecord& r = records[i];
    ws.y[i] = r.y_prev;
    ws.dy[i] = r.dy;
    int arm = (spec.has_exposure() && r.exposed) ? 1 : 0;
    int g = grid.index_of(r.cell.age, r.cell.year) * 2 + arm;
    ws.group[i] = g;
    ++group_count[g];
    ws.xh.row(i) = bspline_row(fit.h_basis, r.y_prev);
  }
  for (int g = 0; g < 2 * n_cells; ++g)
    if (group_count[g] > 0) ws.active.push_back(g);

  // Mean-block layout and per-group static columns.
  Layout ly;
  ly.q_h = fit.q_h;
  int next = 2;  // alpha, beta1
  if (spec.has_exposure()) ly.i_beta2 = next++;
  const bool split = spec.form == MhForm::has_modified;

  Eigen::MatrixXd s_design;      // per-cell effect rows, tensor pooling
  Eigen::MatrixXd g_age, g_year; // unit-lambda penalty parts in the constrained space
  std::vector<int> level_of(2 * n_cells, -1);
  int null_dim = 0;
  if (spec.pooling == MhPooling::tensor) {
    BsplineBasis ab = uniform_bspline(grid.age_min, grid.age_max, spec.smooth.n_interior,
                                      spec.smooth.degree);
    BsplineBasis yb = uniform_bspline(grid.year_min, grid.year_max, spec.smooth.n_interior,
                                      spec.smooth.degree);
    Eigen::VectorXd ages(n_cells), years(n_cells);
    for (int c = 0; c < n_cells; ++c) {
      DomainCell cell = grid.cell_at(c);
      ages[c] = cell.age;
      years[c] = cell.year;
    }
    Eigen::MatrixXd raw = tensor_design(bspline_design(ab, ages), bspline_design(yb, years));
    ConstrainedBasis cb = apply_constraint(raw, Constraint::zero_mean);
    s_design = cb.basis;
    int na = ab.n_basis(), nt = yb.n_basis();
    Eigen::MatrixXd ka = tensor_penalty(na, nt, spec.smooth.penalty_order, 1.0, 0.0);
    Eigen::MatrixXd kt = tensor_penalty(na, nt, spec.smooth.penalty_order, 0.0, 1.0);
    g_age = cb.transform.transpose() * ka * cb.transform;
    g_year = cb.transform.transpose() * kt * cb.transform;
    null_dim = spec.smooth.penalty_order * spec.smooth.penalty_order - 1;

    ly.off_s = next;
    ly.dim_s = static_cast<int>(s_design.cols());
    next += ly.dim_s;
    if (split) {
      ly.off_s2 = next;
      ly.dim_s2 = ly.dim_s;
      next += ly.dim_s2;
    }
  } else if (spec.pooling == MhPooling::partial) {
    // Levels in ascending group order: arm 0 (or the shared effect) first.
    int n0 = 0, n1 = 0;
    for (int g : ws.active) {
      int arm = g % 2;
      if (!split) {
        int cell = g / 2;
        if (level_of[cell * 2] < 0) level_of[cell * 2] = n0++;
      } else if (arm == 0) {
        level_of[g] = n0++;
      } else {
        level_of[g] = n1++;
      }
    }
    ly.off_s = next;
    ly.dim_s = n0;
    next += n0;
    if (split) {
      ly.off_s2 = next;
      ly.dim_s2 = n1;
      next += n1;
    }
  }
  ly.q_mean = next;

  ws.gcols.resize(2 * n_cells);
  for (int g : ws.active) {
    auto& cols = ws.gcols[g];
    int cell = g / 2, arm = g % 2;
    cols.emplace_back(0, 1.0);
    if (ly.i_beta2 >= 0 && arm == 1) cols.emplace_back(ly.i_beta2, 1.0);
    if (spec.pooling == MhPooling::tensor) {
      int off = (split && arm == 1) ? ly.off_s2 : ly.off_s;
      for (int j = 0; j < ly.dim_s; ++j) {
        double v = s_design(cell, j);
        if (v != 0.0) cols.emplace_back(off + j, v);
      }
    } else if (spec.pooling == MhPooling::partial) {
      if (!split) {
        cols.emplace_back(ly.off_s + level_of[cell * 2], 1.0);
      } else if (arm == 0) {
        cols.emplace_back(ly.off_s + level_of[g], 1.0);
      } else {
        cols.emplace_back(ly.off_s2 + level_of[g], 1.0);
      }
    }
  }

  // Penalty model.
  PenaltyModel pm;
  const int qm = ly.q_mean;
  if (spec.pooling == MhPooling::partial) {
    pm.names = {"sigma_d"};
    pm.log10_lo = Eigen::VectorXd::Constant(1, -3.0);
    pm.log10_hi = Eigen::VectorXd::Constant(1, 1.0);
    int n_levels = ly.dim_s + ly.dim_s2;
    pm.build = [qm, &ly](const Eigen::VectorXd& h) {
      Eigen::MatrixXd k = Eigen::MatrixXd::Zero(qm, qm);
      double prec = 1.0 / (h[0] * h[0]);
      for (int j = 0; j < ly.dim_s; ++j) k(ly.off_s + j, ly.off_s + j) = prec;
      for (int j = 0; j < ly.dim_s2; ++j) k(ly.off_s2 + j, ly.off_s2 + j) = prec;
      return k;
    };
    pm.ldp = [n_levels](const Eigen::VectorXd& h) { return -2.0 * n_levels * std::log(h[0]); };
  } else if (spec.pooling == MhPooling::tensor) {
    // One (lambda_age, lambda_year) pair shared across the arm surfaces: both
    // live on the same basis and a joint scan keeps the search 2d.
    pm.names = {"lambda_age", "lambda_year"};
    pm.log10_lo = Eigen::VectorXd::Constant(2, -4.0);
    pm.log10_hi = Eigen::VectorXd::Constant(2, 6.0);
    int blocks = split ? 2 : 1;
    pm.build = [qm, &ly, &g_age, &g_year, split](const Eigen::VectorXd& h) {
      Eigen::MatrixXd ks = h[0] * g_age + h[1] * g_year;
      Eigen::MatrixXd k = Eigen::MatrixXd::Zero(qm, qm);
      k.block(ly.off_s, ly.off_s, ly.dim_s, ly.dim_s) = ks;
      if (split) k.block(ly.off_s2, ly.off_s2, ly.dim_s2, ly.dim_s2) = ks;
      return k;
    };
    pm.ldp = [&g_age, &g_year, null_dim, blocks](const Eigen::VectorXd& h) {
      Eigen::MatrixXd ks = h[0] * g_age + h[1] * g_year;
      return blocks * logdet_positive_part(ks, null_dim);
    };
  }

  // Initial values: zero mean coefficients, constant log sigma at the sample
  // spread of dy (the basis partitions unity, so a constant vector is exact).
  double dy_mean = ws.dy.mean();
  double dy_sd = std::sqrt((ws.dy - dy_mean).square().sum() / std::max(1, n - 1));
  if (!(dy_sd > 0.0)) throw DataError("mh model: score changes are constant");
  Eigen::VectorXd th_mu0 = Eigen::VectorXd::Zero(ly.q_mean);
  th_mu0[0] = dy_mean;
  Eigen::VectorXd th_h0 = Eigen::VectorXd::Constant(fit.q_h, std::log(dy_sd));

  Eigen::VectorXd hyper_nat;
  Eigen::MatrixXd k;
  AltState st;
  if (pm.n_hyper() == 0) {
    k = Eigen::MatrixXd::Zero(qm, qm);
    st = alternate(ws, ly, k, th_mu0, th_h0, spec.select.newton);
  } else if (fixed_hyper) {
    if (fixed_hyper->size() != pm.n_hyper())
      throw ConfigError("fixed hyperparameter vector has the wrong length");
    hyper_nat = *fixed_hyper;
    k = pm.build(hyper_nat);
    st = alternate(ws, ly, k, th_mu0, th_h0, spec.select.newton);
  } else {
    Eigen::VectorXd log10h = 0.5 * (pm.log10_lo + pm.log10_hi);
    st.th_mu = th_mu0;
    st.th_h = th_h0;
    hyper_nat.resize(log10h.size());
    for (int cycle = 0; cycle < 2; ++cycle) {
      for (int j = 0; j < log10h.size(); ++j) hyper_nat[j] = std::pow(10.0, log10h[j]);
      k = pm.build(hyper_nat);
      st = alternate(ws, ly, k, st.th_mu, st.th_h, spec.select.newton);
      double swdd_sum = ws.swdd.sum();
      auto eval = [&](const Eigen::VectorXd& lh) {
        Eigen::VectorXd hn(lh.size());
        for (int j = 0; j < lh.size(); ++j) hn[j] = std::pow(10.0, lh[j]);
        return frozen_lml(st.a, st.b, swdd_sum, ws.const_w, pm.build(hn), pm.ldp(hn));
      };
      Eigen::VectorXd picked = select_hyper(pm.log10_lo, pm.log10_hi, eval, spec.select);
      if ((picked - log10h).lpNorm<Eigen::Infinity>() < 1e-3) {
        log10h = picked;
        break;
      }
      log10h = picked;
    }
    for (int j = 0; j < log10h.size(); ++j) hyper_nat[j] = std::pow(10.0, log10h[j]);
    k = pm.build(hyper_nat);
    st = alternate(ws, ly, k, st.th_mu, st.th_h, spec.select.newton);
  }

  // Assemble the fit.
  fit.q_mean = ly.q_mean;
  fit.i_beta2 = ly.i_beta2;
  fit.off_s = ly.off_s;
  fit.dim_s = ly.dim_s;
  fit.off_s2 = ly.off_s2;
  fit.dim_s2 = ly.dim_s2;
  fit.theta.resize(fit.q());
  fit.theta << st.th_mu, st.th_h;
  fit.converged = st.converged;
  fit.iters = st.iters;
  fit.grad_norm = st.gnorm;
  fit.hyper = hyper_nat;
  fit.hyper_names = pm.names;
  if (spec.pooling == MhPooling::partial) fit.sigma_d = hyper_nat[0];

  if (spec.pooling == MhPooling::tensor) {
    fit.s_cells = s_design;
    fit.s2_cells = split ? s_design : Eigen::MatrixXd(n_cells, 0);
    fit.level_defined = BoolArray::Constant(n_cells, true);
    fit.level2_defined = BoolArray::Constant(n_cells, true);
  } else if (spec.pooling == MhPooling::partial) {
    fit.s_cells = Eigen::MatrixXd::Zero(n_cells, ly.dim_s);
    fit.s2_cells = Eigen::MatrixXd::Zero(n_cells, std::max(0, ly.dim_s2));
    fit.level_defined = BoolArray::Constant(n_cells, false);
    fit.level2_defined = BoolArray::Constant(n_cells, false);
    for (int c = 0; c < n_cells; ++c) {
      if (!split) {
        int lev = level_of[c * 2];
        if (lev >= 0) {
          fit.s_cells(c, lev) = 1.0;
          fit.level_defined[c] = true;
          fit.level2_defined[c] = true;
        }
      } else {
        int l0 = level_of[c * 2], l1 = level_of[c * 2 + 1];
        if (l0 >= 0) {
          fit.s_cells(c, l0) = 1.0;
          fit.level_defined[c] = true;
        }
        if (l1 >= 0) {
          fit.s2_cells(c, l1) = 1.0;
          fit.level2_defined[c] = true;
        }
      }
    }
  } else {
    fit.s_cells = Eigen::MatrixXd(n_cells, 0);
    fit.s2_cells = Eigen::MatrixXd(n_cells, 0);
    fit.level_defined = BoolArray::Constant(n_cells, true);
    fit.level2_defined = BoolArray::Constant(n_cells, true);
  }

  Eigen::MatrixXd h = joint_hessian(ws, ly, st, k);
  auto prec = std::make_shared<Eigen::LLT<Eigen::MatrixXd>>(h);
  if (prec->info() != Eigen::Success)
    throw NumericalError("mh model: joint posterior precision is not positive definite");
  fit.precision = prec;

  double loglik = 0.0;
  penalized_loglik(ws, st, k, &loglik);
  double ldp_k = (pm.n_hyper() > 0) ? pm.ldp(hyper_nat) : 0.0;
  double logdet_h = 2.0 * prec->matrixLLT().diagonal().array().log().sum();
  fit.lml = loglik - 0.5 * st.th_mu.dot(k * st.th_mu) + 0.5 * ldp_k - 0.5 * logdet_h;

  // Self-contained posterior density for the validation sampler.
  auto shared_ws = std::make_shared<Workspace>(std::move(ws));
  auto shared_k = std::make_shared<Eigen::MatrixXd>(std::move(k));
  int q_mean_c = fit.q_mean, q_h_c = fit.q_h;
  fit.log_posterior = [shared_ws, shared_k, q_mean_c, q_h_c](const Eigen::VectorXd& th) {
    Eigen::VectorXd th_mu = th.head(q_mean_c);
    Eigen::VectorXd th_h = th.tail(q_h_c);
    Eigen::ArrayXd logsig = (shared_ws->xh * th_h).array();
    Eigen::ArrayXd r = residuals(*shared_ws, th_mu);
    Eigen::ArrayXd q = r.square() * (-2.0 * logsig).exp();
    double ll = -logsig.sum() - 0.5 * kLogTwoPi * shared_ws->n_records - 0.5 * q.sum();
    double pen = 0.5 * th_mu.dot((*shared_k) * th_mu);
    double v = ll - pen;
    return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
  };
  return fit;
}

}  // namespace

MhFit fit_mh_model(const MhModelSpec& spec, const std::vector<DiffRecord>& records,
                   const DomainGrid& grid) {
  return fit_impl(spec, records, grid, nullptr);
}

MhFit fit_mh_model_fixed(const MhModelSpec& spec, const std::vector<DiffRecord>& records,
                         const DomainGrid& grid, const Eigen::VectorXd& hyper) {
  return fit_impl(spec, records, grid, &hyper);
}

}  // namespace sde
