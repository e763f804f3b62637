#include "sde/grid.hpp"

#include <string>

#include "sde/errors.hpp"

namespace sde {

std::vector<DomainCell> DomainGrid::cells() const {
  std::vector<DomainCell> out;
  out.reserve(static_cast<std::size_t>(n_cells()));
  for (int a = age_min; a <= age_max; ++a)
    for (int t = year_min; t <= year_max; ++t) out.push_back({a, t});
  return out;
}

void DomainGrid::validate() const {
  if (age_min > age_max || year_min > year_max)
    throw ConfigError("grid bounds inverted: ages [" + std::to_string(age_min) + "," +
                      std::to_string(age_max) + "], years [" + std::to_string(year_min) + "," +
                      std::to_string(year_max) + "]");
}

double QuadraticApcCoeffs::eval(double a, double p) const {
  double c = p - a;
  return alpha + beta1 * a + beta2 * a * a + gamma1 * p + gamma2 * p * p + delta1 * c +
         delta2 * c * c;
}

double QuadraticApCoeffs::eval(double a, double p) const {
  return c0 + a_lin * a + p_lin * p + a_quad * a * a + p_quad * p * p + ap * a * p;
}

QuadraticApCoeffs apc_reparameterize(const QuadraticApcCoeffs& q) {
  // c = p - a, c^2 = p^2 - 2ap + a^2.
  QuadraticApCoeffs out;
  out.c0 = q.alpha;
  out.a_lin = q.beta1 - q.delta1;
  out.p_lin = q.gamma1 + q.delta1;
  out.a_quad = q.beta2 + q.delta2;
  out.p_quad = q.gamma2 + q.delta2;
  out.ap = -2.0 * q.delta2;
  return out;
}

}  // namespace sde
