#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "greedydml/types.hpp"

namespace greedydml {

inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

/// Standard normal quantile. Acklam's rational approximation polished by
/// one Halley step, which brings the absolute error near machine epsilon
/// (well inside the 1e-9 budget the confidence intervals assume).
inline double normal_quantile(double prob) {
  if (!(prob > 0.0 && prob < 1.0))
    throw DegenerateSize("normal_quantile: probability outside (0,1)");

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
  constexpr double plow = 0.02425;

  double x;
  if (prob < plow) {
    const double q = std::sqrt(-2.0 * std::log(prob));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (prob <= 1.0 - plow) {
    const double q = prob - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - prob));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // Halley refinement against the erfc-based CDF.
  const double e = normal_cdf(x) - prob;
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
  x = x - u / (1.0 + x * u / 2.0);
  return x;
}

/// Median with the even-length convention (average of the two middle
/// order statistics). Copies its input.
inline double median(std::vector<double> values) {
  if (values.empty()) throw EmptyList("median: empty list");
  std::sort(values.begin(), values.end());
  const size_t m = values.size() / 2;
  if (values.size() % 2 == 1) return values[m];
  return 0.5 * (values[m - 1] + values[m]);
}

}  // namespace greedydml
