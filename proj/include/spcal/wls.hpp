#pragma once

// Closed-form weighted linear least squares for y = intercept + slope * x
// with per-point standard deviations. Centered in x for conditioning.

#include <cmath>
#include <span>
#include <stdexcept>

namespace spcal {

struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
  double intercept_err = 0.0;
  double slope_err = 0.0;
  double cov_intercept_slope = 0.0;
  double chi2 = 0.0;
  int dof = 0;
};

inline LineFit weighted_line_fit(std::span<const double> x,
                                 std::span<const double> y,
                                 std::span<const double> sigma) {
  const std::size_t n = x.size();
  if (y.size() != n || sigma.size() != n)
    throw std::invalid_argument("weighted_line_fit: size mismatch");
  if (n < 2) throw std::invalid_argument("weighted_line_fit: need >= 2 points");

  double sw = 0.0, swx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(sigma[i] > 0.0))
      throw std::invalid_argument("weighted_line_fit: sigma must be > 0");
    double w = 1.0 / (sigma[i] * sigma[i]);
    sw += w;
    swx += w * x[i];
  }
  const double xbar = swx / sw;

  double sxx = 0.0, sxy = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double w = 1.0 / (sigma[i] * sigma[i]);
    double xc = x[i] - xbar;
    sxx += w * xc * xc;
    sxy += w * xc * y[i];
    sy += w * y[i];
  }
  if (!(sxx > 0.0))
    throw std::invalid_argument("weighted_line_fit: singular design (all x equal)");

  LineFit fit;
  fit.slope = sxy / sxx;
  const double a0 = sy / sw;  // intercept in the centered frame
  fit.intercept = a0 - fit.slope * xbar;
  const double var_slope = 1.0 / sxx;
  fit.slope_err = std::sqrt(var_slope);
  fit.intercept_err = std::sqrt(1.0 / sw + xbar * xbar * var_slope);
  fit.cov_intercept_slope = -xbar * var_slope;
  for (std::size_t i = 0; i < n; ++i) {
    double r = (y[i] - fit.intercept - fit.slope * x[i]) / sigma[i];
    fit.chi2 += r * r;
  }
  fit.dof = static_cast<int>(n) - 2;
  return fit;
}

}  // namespace spcal
