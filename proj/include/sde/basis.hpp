#pragma once

#include <Eigen/Core>

namespace sde {

// B-spline basis on a uniform knot vector covering [lo, hi], extended by
// `degree` knots on each side so the basis spans the closed interval. The
// number of basis functions is n_interior + degree + 1.
struct BsplineBasis {
  Eigen::VectorXd knots;
  int degree = 3;
  double lo = 0.0;
  double hi = 1.0;

  int n_basis() const { return static_cast<int>(knots.size()) - degree - 1; }
};

BsplineBasis uniform_bspline(double lo, double hi, int n_interior, int degree);

// Cox-de Boor evaluation of all basis functions at x. Throws DataError when x
// lies outside [lo, hi]; x == hi is assigned to the last interval so rows at
// the right boundary still sum to one.
Eigen::RowVectorXd bspline_row(const BsplineBasis& b, double x);
Eigen::MatrixXd bspline_design(const BsplineBasis& b, const Eigen::VectorXd& x);

// Row-wise Kronecker product of two marginal design matrices evaluated at the
// same observations. Column (i, j) of the result is column i of a times
// column j of b, with the first margin as the outer (slow) index.
Eigen::MatrixXd tensor_design(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// Forward difference matrix of the given order, shape (n - order) x n.
Eigen::MatrixXd difference_matrix(int n, int order);

// lambda * D'D for a single margin.
Eigen::MatrixXd difference_penalty(int n, int order, double lambda);

// Anisotropic tensor penalty lambda_a * (Ka x I) + lambda_b * (I x Kb) where
// Ka, Kb are the marginal difference penalties and x is the Kronecker product,
// matching the column order of tensor_design.
Eigen::MatrixXd tensor_penalty(int na, int nb, int order, double lambda_a, double lambda_b);

Eigen::MatrixXd kronecker(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

enum class Constraint { none, zero_mean, mean_one };

// Reparameterized basis absorbing an identifiability constraint. The fitted
// function is offset + B * (transform * theta_c), so transform maps the
// reduced coefficients back to the full basis for prediction; the penalty for
// the reduced space is transform' * K * transform.
struct ConstrainedBasis {
  Eigen::MatrixXd basis;      // n x (q - rank of constraint)
  Eigen::MatrixXd transform;  // q x (q - rank)
  double offset = 0.0;
};

// zero_mean centers the fitted function over the rows of B (column centering
// plus removal of the direction spanned by the column means); mean_one is the
// same space shifted by a constant one.
ConstrainedBasis apply_constraint(const Eigen::MatrixXd& B, Constraint kind);

// Integrated absolute second derivative of a uniformly sampled function,
// approximated by central second differences and a trapezoid sum over the
// interior sample points. Exactly zero for affine inputs.
double wiggle(const Eigen::VectorXd& f, double spacing);

// Per-axis roughness of a sampled surface: the row-axis value averages the 1d
// wiggle of each column (variation along rows) and vice versa.
struct SurfaceWiggle {
  double along_rows = 0.0;
  double along_cols = 0.0;
};
SurfaceWiggle wiggle(const Eigen::MatrixXd& f, double row_spacing, double col_spacing);

// Configuration of one penalized tensor smooth.
struct SmoothSpec {
  int n_interior = 8;     // interior knots per margin
  int degree = 3;
  int penalty_order = 2;
  Constraint constraint = Constraint::none;

  int n_basis_per_margin() const { return n_interior + degree + 1; }
  void validate() const;  // throws ConfigError
};

}  // namespace sde
