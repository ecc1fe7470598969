#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ccmpc {

/// Standard normal CDF.
inline double std_normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

inline double std_normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

/**
 * Standard normal quantile Phi^{-1}(gamma) for gamma in (0, 1).
 *
 * Rational approximation (Acklam) refined by one Halley step on the erfc
 * based CDF, which brings the result to about machine precision.
 */
inline double std_normal_quantile(double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0))
    throw std::domain_error("std_normal_quantile: gamma must lie in (0, 1)");
  if (gamma == 0.5) return 0.0;

  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double low = 0.02425;

  double x;
  if (gamma < low) {
    const double q = std::sqrt(-2.0 * std::log(gamma));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (gamma <= 1.0 - low) {
    const double q = gamma - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-gamma));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // Halley refinement; the upper tail works on the complement for accuracy.
  for (int it = 0; it < 2; ++it) {
    const double e = x <= 0.0 ? std_normal_cdf(x) - gamma
                              : (1.0 - gamma) - 0.5 * std::erfc(x / std::numbers::sqrt2);
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    x = x - u / (1.0 + 0.5 * x * u);
  }
  return x;
}

/// Tightening quantile used by the chance constraints. gamma = 1 maps to
/// the 3-sigma edge of the disturbance support, and larger quantiles are
/// capped there so the factor stays monotone in gamma.
inline constexpr double kMaxTighteningQuantile = 3.0;

inline double tightening_quantile(double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0))
    throw std::domain_error("tightening_quantile: gamma must lie in (0, 1]");
  if (gamma == 1.0) return kMaxTighteningQuantile;
  return std::min(std_normal_quantile(gamma), kMaxTighteningQuantile);
}

}  // namespace ccmpc
