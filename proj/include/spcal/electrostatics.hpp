#pragma once

// Sphere-plate electrostatics: the proximity-force-approximation (PFA) force
// law and the exact bispherical image-charge series for capacitance and force.
//
// Sign convention used throughout: attractive forces are negative.
//
// The exact solution is the classical image-charge series
//     C(d) = 4 pi eps0 R sinh(u) sum_{n>=1} 1/sinh(n u),  cosh(u) = 1 + d/R,
// and its term-wise analytic derivative gives the force at fixed voltage
//     F(d) = 2 pi eps0 (V+V0)^2 sum_{n>=1} [coth(u) - n coth(n u)]/sinh(n u).

#include <cmath>
#include <limits>
#include <string>

#include "spcal/constants.hpp"
#include "spcal/errors.hpp"

namespace spcal {

struct Geometry {
  double sphere_radius_m = 0.0;
  double separation_m = 0.0;

  double aspect_ratio() const { return separation_m / sphere_radius_m; }

  void validate() const {
    if (!(sphere_radius_m > 0.0) || !std::isfinite(sphere_radius_m))
      throw std::invalid_argument("Geometry: sphere radius must be positive");
    if (!(separation_m > 0.0) || !std::isfinite(separation_m))
      throw std::invalid_argument("Geometry: separation must be positive");
  }
};

struct Potentials {
  double applied_v = 0.0;  // V
  double contact_v = 0.0;  // V0

  // The force depends on the surfaces only through this sum.
  double total_v() const { return applied_v + contact_v; }

  void validate() const {
    if (!std::isfinite(applied_v) || !std::isfinite(contact_v))
      throw std::invalid_argument("Potentials: values must be finite");
  }
};

enum class ForceModelKind { pfa, exact_series };

struct ForceModel {
  ForceModelKind variant = ForceModelKind::pfa;
  double series_rel_tolerance = 1e-9;  // exact_series only

  void validate() const {
    if (variant == ForceModelKind::exact_series &&
        !(series_rel_tolerance > 0.0 && series_rel_tolerance <= 1e-3))
      throw std::invalid_argument(
          "ForceModel: series_rel_tolerance must be in (0, 1e-3]");
  }
};

namespace series_detail {

// u with cosh(u) = 1 + x, stable for small x where acosh(1+x) cancels.
inline double bispherical_u(double x) {
  return std::log1p(x + std::sqrt(x * (x + 2.0)));
}

// 1/sinh and coth without overflow and without small-x cancellation.
inline double csch(double x) {
  double e = std::exp(-x);
  return 2.0 * e / (-std::expm1(-2.0 * x));
}

inline double coth(double x) {
  return (1.0 + std::exp(-2.0 * x)) / (-std::expm1(-2.0 * x));
}

inline constexpr long k_term_cap = 1000000;

// sum_{n>=1} 1/sinh(n u), truncated when the geometric tail bound
// term * r/(1-r) with r = e^-u drops below tol * sum.
inline double csch_sum(double u, double tol) {
  const double r = std::exp(-u);
  const double tail_factor = r / (1.0 - r);
  double sum = 0.0;
  for (long n = 1; n <= k_term_cap; ++n) {
    double term = csch(static_cast<double>(n) * u);
    sum += term;
    if (term * tail_factor <= tol * sum) return sum;
  }
  throw SeriesConvergenceError(
      "capacitance series exceeded " + std::to_string(k_term_cap) +
      " terms; separation too small for tolerance " + std::to_string(tol));
}

// sum_{n>=1} [coth(u) - n coth(n u)]/sinh(n u)  (negative; n=1 term vanishes).
// Terms grow like n u/3 * csch(n u) before decaying, so the geometric stop is
// valid only once n exceeds ~2 coth(u).
inline double force_sum(double u, double tol) {
  const double cu = coth(u);
  const double r0 = std::exp(-u);
  const long n_safe = static_cast<long>(2.0 * cu) + 2;
  double sum = 0.0;
  for (long n = 1; n <= k_term_cap; ++n) {
    double nd = static_cast<double>(n);
    double term = (cu - nd * coth(nd * u)) * csch(nd * u);
    sum += term;
    if (n >= n_safe) {
      double r = (1.0 + 1.0 / (nd - cu)) * r0;
      if (r < 1.0 && std::abs(term) * r / (1.0 - r) <= tol * std::abs(sum))
        return sum;
    }
  }
  throw SeriesConvergenceError(
      "force series exceeded " + std::to_string(k_term_cap) +
      " terms; separation too small for tolerance " + std::to_string(tol));
}

}  // namespace series_detail

// Eq.-of-record PFA force: F = -eps0 pi R (V+V0)^2 / d. Intended for d << R;
// the regime is not enforced here.
inline double pfa_force(const Geometry& g, const Potentials& pot) {
  g.validate();
  pot.validate();
  double v = pot.total_v();
  return -k_vacuum_permittivity * k_pi * g.sphere_radius_m * v * v /
         g.separation_m;
}

// Exact sphere-plate capacitance (farads). Strictly decreasing in d and
// greater than the isolated-sphere value 4 pi eps0 R for all finite d.
inline double exact_capacitance(const Geometry& g, double tol) {
  g.validate();
  if (!(tol > 0.0 && tol <= 1e-3))
    throw std::invalid_argument("series tolerance must be in (0, 1e-3]");
  double u = series_detail::bispherical_u(g.aspect_ratio());
  return 4.0 * k_pi * k_vacuum_permittivity * g.sphere_radius_m *
         std::sinh(u) * series_detail::csch_sum(u, tol);
}

// Exact force F = (V+V0)^2/2 * dC/dd with dC/dd from term-wise analytic
// differentiation of the series. Negative (attractive) for nonzero voltage.
inline double exact_force(const Geometry& g, const Potentials& pot,
                          double tol) {
  g.validate();
  pot.validate();
  if (!(tol > 0.0 && tol <= 1e-3))
    throw std::invalid_argument("series tolerance must be in (0, 1e-3]");
  double v = pot.total_v();
  if (v == 0.0) return 0.0;
  double u = series_detail::bispherical_u(g.aspect_ratio());
  return 2.0 * k_pi * k_vacuum_permittivity * v * v *
         series_detail::force_sum(u, tol);
}

// Curvature coefficient alpha = S_2w / V_AC^2 (V per V^2): the peak-to-peak
// photodetector signal at 2w per squared drive amplitude. For a force
// F = 1/2 (V+V0)^2 C'(d), alpha = gain * |C'(d)| / (2 k).
inline double alpha_theoretical(const Geometry& g, double spring_n_per_m,
                                double gain_v_per_m, const ForceModel& model) {
  g.validate();
  model.validate();
  if (!(spring_n_per_m > 0.0))
    throw std::invalid_argument("spring constant must be positive");
  if (!(gain_v_per_m > 0.0))
    throw std::invalid_argument("optical gain must be positive");
  if (model.variant == ForceModelKind::pfa) {
    return gain_v_per_m * k_vacuum_permittivity * k_pi * g.sphere_radius_m /
           (spring_n_per_m * g.separation_m);
  }
  double u = series_detail::bispherical_u(g.aspect_ratio());
  double s = series_detail::force_sum(u, model.series_rel_tolerance);
  return gain_v_per_m * 2.0 * k_pi * k_vacuum_permittivity * (-s) /
         spring_n_per_m;
}

}  // namespace spcal
