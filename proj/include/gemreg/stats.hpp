// SPDX-License-Identifier: Apache-2.0
//
// Chi-square quantiles via the regularized lower incomplete gamma function
// and its inverse (series + continued fraction, then safeguarded Newton).

#pragma once

#include "gemreg/core.hpp"

#include <cmath>
#include <limits>

namespace gemreg {
namespace detail {

/// Regularized lower incomplete gamma P(a, x) = gamma(a, x) / Gamma(a).
inline double gamma_p(double a, double x) {
  if (x < 0 || a <= 0) throw std::invalid_argument("gamma_p: domain");
  if (x == 0) return 0.0;
  const double lg = std::lgamma(a);
  if (x < a + 1.0) {
    // series representation
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int i = 0; i < 500; ++i) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - lg);
  }
  // continued fraction for Q(a, x), Lentz's method
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) break;
  }
  const double q = std::exp(-x + a * std::log(x) - lg) * h;
  return 1.0 - q;
}

/// Inverse of P(a, .) by bisection refined with Newton steps.
inline double gamma_p_inverse(double a, double p) {
  if (p <= 0) return 0.0;
  if (p >= 1) throw std::invalid_argument("gamma_p_inverse: p must be in (0,1)");
  double lo = 0.0, hi = a;
  while (gamma_p(a, hi) < p) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e8) break;
  }
  double x = 0.5 * (lo + hi);
  const double lg = std::lgamma(a);
  for (int it = 0; it < 200; ++it) {
    const double f = gamma_p(a, x) - p;
    if (f > 0)
      hi = x;
    else
      lo = x;
    const double pdf = std::exp(-x + (a - 1.0) * std::log(x) - lg);
    double nx = (pdf > 0) ? x - f / pdf : 0.5 * (lo + hi);
    if (!(nx > lo && nx < hi)) nx = 0.5 * (lo + hi);
    if (std::abs(nx - x) <= 1e-15 * std::max(1.0, x)) {
      x = nx;
      break;
    }
    x = nx;
  }
  return x;
}

}  // namespace detail

/// 3-DoF chi-square value whose upper-tail probability is p, i.e. the
/// quantile at CDF 1-p. chi2_quantile(0.05) == 7.8147.
inline double chi2_quantile(double tail_probability) {
  if (!(tail_probability > 0.0 && tail_probability < 1.0))
    throw std::invalid_argument("chi2_quantile: tail probability must be in (0,1)");
  return 2.0 * detail::gamma_p_inverse(1.5, 1.0 - tail_probability);
}

/// CDF of the 3-DoF chi-square distribution.
inline double chi2_cdf(double x) { return x <= 0 ? 0.0 : detail::gamma_p(1.5, 0.5 * x); }

}  // namespace gemreg
