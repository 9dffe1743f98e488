#pragma once

// Small dense Levenberg-Marquardt for curve fits with a handful of
// parameters. The model callback fills the predicted value and the gradient
// for one data point. Chi-square is sum((y_i - f_i)^2 / sigma_i^2); the
// damping uses the Marquardt diagonal scaling, steps that raise chi-square
// (or leave the feasible region) are rejected and the damping increased.
// Parameter covariance is the inverse of J^T W J at the accepted minimum.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace spcal {

struct LevMarOptions {
  int max_iterations = 200;
  double param_tol = 1e-10;  // relative parameter change
  // chi-square change threshold; applied relative to max(1, chi2) so it stays
  // meaningful above machine precision for large chi-square values
  double chi2_tol = 1e-12;
  double lambda_init = 1e-3;
  double lambda_grow = 10.0;
  double lambda_shrink = 0.1;
  double lambda_max = 1e14;
};

struct LevMarResult {
  std::vector<double> params;
  std::vector<double> covariance;  // row-major n_params x n_params
  double chi2 = 0.0;
  int iterations = 0;
  bool converged = false;
};

namespace levmar_detail {

// Cholesky solve of A x = b for a small symmetric positive-definite matrix.
// Returns false if A is not positive definite.
inline bool cholesky_solve(std::vector<double> a, std::vector<double> b,
                           std::size_t n, std::vector<double>& x) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      if (i == j) {
        if (!(s > 0.0)) return false;
        a[i * n + i] = std::sqrt(s);
      } else {
        a[i * n + j] = s / (a[j * n + j]);
      }
    }
  }
  // forward then back substitution
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * b[k];
    b[i] = s / a[i * n + i];
  }
  x.assign(n, 0.0);
  for (std::size_t ii = n; ii-- > 0;) {
    double s = b[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= a[k * n + ii] * x[k];
    x[ii] = s / a[ii * n + ii];
  }
  return true;
}

inline bool invert_spd(const std::vector<double>& a, std::size_t n,
                       std::vector<double>& inv) {
  inv.assign(n * n, 0.0);
  std::vector<double> e(n, 0.0), col;
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(e.begin(), e.end(), 0.0);
    e[j] = 1.0;
    if (!cholesky_solve(a, e, n, col)) return false;
    for (std::size_t i = 0; i < n; ++i) inv[i * n + j] = col[i];
  }
  return true;
}

}  // namespace levmar_detail

// model(params, i, grad): returns f_i and writes df_i/dparam_j into grad.
// feasible(params): trial points violating it are rejected like uphill steps.
inline LevMarResult levmar_fit(
    const std::function<double(const std::vector<double>&, std::size_t,
                               double*)>& model,
    std::span<const double> y, std::span<const double> sigma,
    std::vector<double> initial,
    const std::function<bool(const std::vector<double>&)>& feasible = nullptr,
    const LevMarOptions& opt = {}) {
  const std::size_t n = y.size();
  const std::size_t np = initial.size();
  if (sigma.size() != n) throw std::invalid_argument("levmar: size mismatch");
  if (n <= np) throw std::invalid_argument("levmar: need more points than parameters");
  for (std::size_t i = 0; i < n; ++i)
    if (!(sigma[i] > 0.0)) throw std::invalid_argument("levmar: sigma must be > 0");
  if (feasible && !feasible(initial))
    throw std::invalid_argument("levmar: infeasible initial guess");

  std::vector<double> grad(np), jtj(np * np), jtr(np), step, trial;

  auto chi2_of = [&](const std::vector<double>& p) {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double f = model(p, i, nullptr);
      double r = (y[i] - f) / sigma[i];
      c += r * r;
    }
    return c;
  };

  auto build_normal = [&](const std::vector<double>& p) {
    std::fill(jtj.begin(), jtj.end(), 0.0);
    std::fill(jtr.begin(), jtr.end(), 0.0);
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double f = model(p, i, grad.data());
      double w = 1.0 / (sigma[i] * sigma[i]);
      double r = y[i] - f;
      c += w * r * r;
      for (std::size_t a = 0; a < np; ++a) {
        jtr[a] += w * grad[a] * r;
        for (std::size_t b = 0; b <= a; ++b) jtj[a * np + b] += w * grad[a] * grad[b];
      }
    }
    for (std::size_t a = 0; a < np; ++a)
      for (std::size_t b = a + 1; b < np; ++b) jtj[a * np + b] = jtj[b * np + a];
    return c;
  };

  LevMarResult res;
  res.params = std::move(initial);
  res.chi2 = build_normal(res.params);
  double lambda = opt.lambda_init;

  for (res.iterations = 1; res.iterations <= opt.max_iterations;
       ++res.iterations) {
    // damped normal equations with Marquardt scaling
    std::vector<double> damped = jtj;
    for (std::size_t a = 0; a < np; ++a) {
      double d = jtj[a * np + a];
      damped[a * np + a] = d + lambda * (d > 0.0 ? d : 1.0);
    }
    bool solved = levmar_detail::cholesky_solve(damped, jtr, np, step);
    bool accepted = false;
    if (solved) {
      trial = res.params;
      double max_rel = 0.0;
      for (std::size_t a = 0; a < np; ++a) {
        trial[a] += step[a];
        double rel = std::abs(step[a]) / (std::abs(trial[a]) + 1e-300);
        max_rel = std::max(max_rel, rel);
      }
      if (!feasible || feasible(trial)) {
        double trial_chi2 = chi2_of(trial);
        if (std::isfinite(trial_chi2) && trial_chi2 <= res.chi2) {
          double dchi2 = res.chi2 - trial_chi2;
          res.params = trial;
          res.chi2 = build_normal(res.params);
          lambda = std::max(lambda * opt.lambda_shrink, 1e-14);
          accepted = true;
          if (max_rel < opt.param_tol ||
              dchi2 < opt.chi2_tol * std::max(1.0, res.chi2)) {
            res.converged = true;
            break;
          }
        }
      }
      if (!accepted && max_rel < opt.param_tol) {
        // the solver cannot propose a meaningful move: we are at the minimum
        res.converged = true;
        break;
      }
    }
    if (!accepted) {
      lambda *= opt.lambda_grow;
      if (lambda > opt.lambda_max) break;  // stuck; converged stays false
    }
  }

  if (!levmar_detail::invert_spd(jtj, np, res.covariance))
    res.covariance.assign(np * np, std::numeric_limits<double>::quiet_NaN());
  return res;
}

}  // namespace spcal
