#pragma once

#include <span>

namespace b3d {

// Regularised upper incomplete gamma Q(a, x).
double gamma_q(double a, double x);

// P(X >= x) for X ~ chi-square with `dof` degrees of freedom.
inline double chi_square_sf(double x, double dof) { return gamma_q(0.5 * dof, 0.5 * x); }

// Pearson statistic of observed counts against expected probabilities.
double chi_square_statistic(std::span<const double> observed, std::span<const double> probabilities);

}  // namespace b3d
