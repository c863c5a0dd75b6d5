#pragma once

#include <cmath>
#include <limits>

#include "coxstream/errors.hpp"

namespace coxstream {

namespace detail {

// Lanczos approximation (g = 7, n = 9), good to ~1e-14 relative for x > 0.
inline double log_gamma(double x) {
  static constexpr double kCoeff[9] = {
      0.99999999999980993,     676.5203681218851,     -1259.1392167224028,
      771.32342877765313,      -176.61502916214059,   12.507343278686905,
      -0.13857109526572012,    9.9843695780195716e-6, 1.5056327351493116e-7};
  if (x < 0.5) {
    // Reflection formula
    return std::log(M_PI / std::sin(M_PI * x)) - log_gamma(1.0 - x);
  }
  x -= 1.0;
  double a = kCoeff[0];
  for (int i = 1; i < 9; ++i) a += kCoeff[i] / (x + i);
  const double t = x + 7.5;
  return 0.5 * std::log(2.0 * M_PI) + (x + 0.5) * std::log(t) - t + std::log(a);
}

// Lower regularized incomplete gamma P(a, x) by its power series; requires x < a + 1.
inline double gamma_p_series(double a, double x) {
  if (x <= 0.0) return 0.0;
  double term = 1.0 / a;
  double sum = term;
  for (int n = 1; n < 10000; ++n) {
    term *= x / (a + n);
    sum += term;
    if (std::fabs(term) < std::fabs(sum) * 1e-16) break;
  }
  return sum * std::exp(-x + a * std::log(x) - log_gamma(a));
}

// Upper regularized incomplete gamma Q(a, x) by modified Lentz continued
// fraction; requires x >= a + 1.
inline double gamma_q_cf(double a, double x) {
  constexpr double kTiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  for (int n = 1; n < 10000; ++n) {
    const double an = -n * (n - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < 1e-16) break;
  }
  return h * std::exp(-x + a * std::log(x) - log_gamma(a));
}

}  // namespace detail

/// Lower regularized incomplete gamma P(a, x) = gamma(a, x) / Gamma(a).
inline double reg_gamma_p(double a, double x) {
  if (!(a > 0.0) || !(x >= 0.0) || !std::isfinite(a) || !std::isfinite(x))
    throw invalid_input_error("reg_gamma_p: need a > 0 and x >= 0");
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) return detail::gamma_p_series(a, x);
  return 1.0 - detail::gamma_q_cf(a, x);
}

/// Upper regularized incomplete gamma Q(a, x) = 1 - P(a, x).
inline double reg_gamma_q(double a, double x) {
  if (!(a > 0.0) || !(x >= 0.0) || !std::isfinite(a) || !std::isfinite(x))
    throw invalid_input_error("reg_gamma_q: need a > 0 and x >= 0");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - detail::gamma_p_series(a, x);
  return detail::gamma_q_cf(a, x);
}

/// Survival function of the chi-squared distribution: P(X > x) for X ~ chi2(df).
inline double chisq_sf(double x, int df) {
  if (df < 1) throw invalid_input_error("chisq_sf: df must be >= 1");
  if (!(x >= 0.0) || !std::isfinite(x))
    throw invalid_input_error("chisq_sf: x must be finite and >= 0");
  return reg_gamma_q(0.5 * df, 0.5 * x);
}

/// CDF of the chi-squared distribution.
inline double chisq_cdf(double x, int df) {
  if (df < 1) throw invalid_input_error("chisq_cdf: df must be >= 1");
  if (!(x >= 0.0) || !std::isfinite(x))
    throw invalid_input_error("chisq_cdf: x must be finite and >= 0");
  return reg_gamma_p(0.5 * df, 0.5 * x);
}

/// Quantile of the chi-squared distribution, by bisection on the CDF.
/// chisq_quantile(0, df) = 0; prob = 1 returns +infinity.
inline double chisq_quantile(double prob, int df) {
  if (df < 1) throw invalid_input_error("chisq_quantile: df must be >= 1");
  if (!(prob >= 0.0 && prob <= 1.0))
    throw invalid_input_error("chisq_quantile: prob must be in [0, 1]");
  if (prob == 0.0) return 0.0;
  if (prob == 1.0) return std::numeric_limits<double>::infinity();
  double lo = 0.0;
  double hi = 1.0;
  while (chisq_cdf(hi, df) < prob) hi *= 2.0;
  for (int it = 0; it < 200 && (hi - lo) > 1e-13 * (1.0 + hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    (chisq_cdf(mid, df) < prob ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace coxstream
