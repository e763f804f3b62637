#include "sde/basis.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "sde/errors.hpp"

namespace sde {

BsplineBasis uniform_bspline(double lo, double hi, int n_interior, int degree) {
  if (!(hi > lo)) throw ConfigError("bspline: knot range must satisfy hi > lo");
  if (n_interior < 0 || degree < 0) throw ConfigError("bspline: n_interior and degree must be >= 0");
  double h = (hi - lo) / (n_interior + 1);
  int n_knots = n_interior + 2 + 2 * degree;
  BsplineBasis b;
  b.degree = degree;
  b.lo = lo;
  b.hi = hi;
  b.knots.resize(n_knots);
  for (int i = 0; i < n_knots; ++i) b.knots[i] = lo + h * (i - degree);
  // Pin the boundary knots exactly despite accumulated rounding.
  b.knots[degree] = lo;
  b.knots[n_knots - 1 - degree] = hi;
  return b;
}

Eigen::RowVectorXd bspline_row(const BsplineBasis& b, double x) {
  const int p = b.degree;
  const auto& t = b.knots;
  if (x < b.lo || x > b.hi)
    throw DataError("bspline evaluation at " + std::to_string(x) + " outside [" +
                    std::to_string(b.lo) + ", " + std::to_string(b.hi) + "]");
  // Interval index i with t[i] <= x < t[i+1]; the right boundary belongs to
  // the last non-degenerate interval.
  int i_max = static_cast<int>(t.size()) - p - 2;
  int i = p;
  while (i < i_max && x >= t[i + 1]) ++i;

  // de Boor triangular scheme for the p+1 non-zero functions at x.
  Eigen::VectorXd vals = Eigen::VectorXd::Zero(p + 1);
  Eigen::VectorXd left(p + 1), right(p + 1);
  vals[0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = x - t[i + 1 - j];
    right[j] = t[i + j] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      double temp = vals[r] / (right[r + 1] + left[j - r]);
      vals[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    vals[j] = saved;
  }

  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(b.n_basis());
  row.segment(i - p, p + 1) = vals.transpose();
  return row;
}

Eigen::MatrixXd bspline_design(const BsplineBasis& b, const Eigen::VectorXd& x) {
  Eigen::MatrixXd out(x.size(), b.n_basis());
  for (Eigen::Index r = 0; r < x.size(); ++r) out.row(r) = bspline_row(b, x[r]);
  return out;
}

Eigen::MatrixXd tensor_design(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows()) throw ConfigError("tensor_design: row counts differ");
  Eigen::MatrixXd out(a.rows(), a.cols() * b.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index i = 0; i < a.cols(); ++i)
      out.block(r, i * b.cols(), 1, b.cols()) = a(r, i) * b.row(r);
  return out;
}

Eigen::MatrixXd difference_matrix(int n, int order) {
  if (order < 1 || order >= n) throw ConfigError("difference_matrix: need 1 <= order < n");
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n - 1, n);
  for (int i = 0; i < n - 1; ++i) {
    d(i, i) = -1.0;
    d(i, i + 1) = 1.0;
  }
  for (int k = 2; k <= order; ++k) {
    Eigen::MatrixXd d1 = Eigen::MatrixXd::Zero(n - k, n - k + 1);
    for (int i = 0; i < n - k; ++i) {
      d1(i, i) = -1.0;
      d1(i, i + 1) = 1.0;
    }
    d = (d1 * d).eval();
  }
  return d;
}

Eigen::MatrixXd difference_penalty(int n, int order, double lambda) {
  if (lambda < 0.0) throw ConfigError("difference_penalty: lambda must be >= 0");
  Eigen::MatrixXd d = difference_matrix(n, order);
  return lambda * (d.transpose() * d);
}

Eigen::MatrixXd kronecker(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

Eigen::MatrixXd tensor_penalty(int na, int nb, int order, double lambda_a, double lambda_b) {
  if (lambda_a < 0.0 || lambda_b < 0.0) throw ConfigError("tensor_penalty: lambdas must be >= 0");
  Eigen::MatrixXd ka = difference_penalty(na, order, 1.0);
  Eigen::MatrixXd kb = difference_penalty(nb, order, 1.0);
  Eigen::MatrixXd ia = Eigen::MatrixXd::Identity(na, na);
  Eigen::MatrixXd ib = Eigen::MatrixXd::Identity(nb, nb);
  return lambda_a * kronecker(ka, ib) + lambda_b * kronecker(ia, kb);
}

ConstrainedBasis apply_constraint(const Eigen::MatrixXd& B, Constraint kind) {
  ConstrainedBasis out;
  if (kind == Constraint::none) {
    out.basis = B;
    out.transform = Eigen::MatrixXd::Identity(B.cols(), B.cols());
    out.offset = 0.0;
    return out;
  }
  // Null space of the row-mean functional c'theta, c = column means of B.
  Eigen::VectorXd c = B.colwise().mean().transpose();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(c);
  Eigen::MatrixXd q = qr.householderQ();
  out.transform = q.rightCols(B.cols() - 1);
  out.basis = B * out.transform;
  out.offset = (kind == Constraint::mean_one) ? 1.0 : 0.0;
  return out;
}

double wiggle(const Eigen::VectorXd& f, double spacing) {
  if (spacing <= 0.0) throw ConfigError("wiggle: spacing must be positive");
  Eigen::Index m = f.size();
  if (m < 3) return 0.0;
  Eigen::VectorXd d2(m - 2);
  for (Eigen::Index i = 1; i + 1 < m; ++i)
    d2[i - 1] = std::abs(f[i - 1] - 2.0 * f[i] + f[i + 1]) / (spacing * spacing);
  if (d2.size() == 1) return 0.0;  // trapezoid over a single point has no width
  double s = d2.sum() - 0.5 * (d2[0] + d2[d2.size() - 1]);
  return s * spacing;
}

SurfaceWiggle wiggle(const Eigen::MatrixXd& f, double row_spacing, double col_spacing) {
  SurfaceWiggle w;
  for (Eigen::Index j = 0; j < f.cols(); ++j) w.along_rows += wiggle(Eigen::VectorXd(f.col(j)), row_spacing);
  for (Eigen::Index i = 0; i < f.rows(); ++i)
    w.along_cols += wiggle(Eigen::VectorXd(f.row(i).transpose()), col_spacing);
  if (f.cols() > 0) w.along_rows /= static_cast<double>(f.cols());
  if (f.rows() > 0) w.along_cols /= static_cast<double>(f.rows());
  return w;
}

void SmoothSpec::validate() const {
  if (n_interior < 0) throw ConfigError("smooth: n_interior must be >= 0");
  if (degree < 0) throw ConfigError("smooth: degree must be >= 0");
  if (penalty_order >= 1 && n_basis_per_margin() <= penalty_order)
    throw ConfigError("smooth: need more basis functions than the penalty order");
}

}  // namespace sde
