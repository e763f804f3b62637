#pragma once

#include <vector>

namespace sde {

// One age-by-year cell of the estimation domain. Cohort is implied by the
// age-period-cohort identity c = t - a.
struct DomainCell {
  int age = 0;
  int year = 0;
  int cohort() const { return year - age; }
};

inline bool operator==(const DomainCell& a, const DomainCell& b) {
  return a.age == b.age && a.year == b.year;
}

// Rectangular integer grid of domain cells, ages by calendar years, both
// bounds inclusive. Cell enumeration is row-major with age as the outer index.
struct DomainGrid {
  int age_min = 0;
  int age_max = 0;
  int year_min = 0;
  int year_max = 0;

  int n_ages() const { return age_max - age_min + 1; }
  int n_years() const { return year_max - year_min + 1; }
  int n_cells() const { return n_ages() * n_years(); }

  bool contains(int age, int year) const {
    return age >= age_min && age <= age_max && year >= year_min && year <= year_max;
  }

  int index_of(int age, int year) const {
    return (age - age_min) * n_years() + (year - year_min);
  }

  DomainCell cell_at(int index) const {
    return {age_min + index / n_years(), year_min + index % n_years()};
  }

  std::vector<DomainCell> cells() const;

  void validate() const;  // throws ConfigError on inverted bounds
};

// Quadratic age-period predictor with an explicit cohort part:
//   alpha + beta1*a + beta2*a^2 + gamma1*p + gamma2*p^2 + delta1*c + delta2*c^2,
// where c = p - a.
struct QuadraticApcCoeffs {
  double alpha = 0, beta1 = 0, beta2 = 0, gamma1 = 0, gamma2 = 0, delta1 = 0, delta2 = 0;
  double eval(double a, double p) const;
};

// Equivalent pure age-period quadratic with an age*period interaction:
//   c0 + a_lin*a + p_lin*p + a_quad*a^2 + p_quad*p^2 + ap*a*p.
struct QuadraticApCoeffs {
  double c0 = 0, a_lin = 0, p_lin = 0, a_quad = 0, p_quad = 0, ap = 0;
  double eval(double a, double p) const;
};

// Rewrites the cohort terms through c = p - a. The two forms evaluate
// identically for every (a, p).
QuadraticApCoeffs apc_reparameterize(const QuadraticApcCoeffs& q);

}  // namespace sde
