#pragma once

// The statistical pipeline applied to recorded runs: error estimation from a
// fixed-position series, masked chi-square power-law fits with free or fixed
// exponent, the linearized 1/alpha fit, campaign-level chi-square statistics,
// the beyond-PFA residual oracle, and the V_DC(d) logarithmic fit.
//
// Weighting convention: every alpha point carries the same relative error
// sigma_rel, so sigma_i = sigma_rel * alpha_i (equivalently constant relative
// weights on 1/alpha).

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spcal/electrostatics.hpp"
#include "spcal/errors.hpp"
#include "spcal/levmar.hpp"
#include "spcal/records.hpp"
#include "spcal/stats.hpp"
#include "spcal/wls.hpp"

namespace spcal {

// ---------------------------------------------------------------------------
// masks

enum class MaskKind { all, keep_farthest_k, exclude_below_separation, indices };

struct Mask {
  MaskKind kind = MaskKind::all;
  int keep_k = 0;            // keep_farthest_k
  double min_separation_m = 0.0;  // exclude_below_separation
  std::vector<int> indices;  // explicit index set

  static Mask all() { return {}; }
  static Mask keep_farthest(int k) {
    Mask m;
    m.kind = MaskKind::keep_farthest_k;
    m.keep_k = k;
    return m;
  }
  static Mask exclude_below(double min_separation_m) {
    Mask m;
    m.kind = MaskKind::exclude_below_separation;
    m.min_separation_m = min_separation_m;
    return m;
  }
  static Mask explicit_indices(std::vector<int> idx) {
    Mask m;
    m.kind = MaskKind::indices;
    m.indices = std::move(idx);
    return m;
  }

  std::string label() const {
    switch (kind) {
      case MaskKind::all:
        return "all";
      case MaskKind::keep_farthest_k:
        return "keep_farthest:" + std::to_string(keep_k);
      case MaskKind::exclude_below_separation:
        return "min_sep_nm:" + std::to_string(min_separation_m * 1e9);
      case MaskKind::indices:
        return "indices:" + std::to_string(indices.size());
    }
    return "?";
  }
};

struct MaskedRecords {
  std::vector<RunRecord> records;  // order preserved
  int excluded = 0;
  std::string label;
};

// Order-preserving subset selection. The farthest points are those with the
// smallest stage extension; exclude_below_separation needs a d0 estimate to
// turn extensions into separations (take it from a provisional p = 1 fit).
inline MaskedRecords apply_mask(const std::vector<RunRecord>& records,
                                const Mask& mask,
                                double d0_for_separation_m = 0.0) {
  MaskedRecords out;
  out.label = mask.label();
  switch (mask.kind) {
    case MaskKind::all:
      out.records = records;
      break;
    case MaskKind::keep_farthest_k: {
      if (mask.keep_k < 1) throw DataSelectionError("mask: keep_k must be >= 1");
      if (static_cast<std::size_t>(mask.keep_k) >= records.size()) {
        out.records = records;  // identity
        break;
      }
      // threshold at the k-th smallest extension
      std::vector<double> ext;
      ext.reserve(records.size());
      for (const auto& r : records) ext.push_back(r.d_pz_m);
      std::nth_element(ext.begin(), ext.begin() + mask.keep_k - 1, ext.end());
      double threshold = ext[static_cast<std::size_t>(mask.keep_k - 1)];
      int kept = 0;
      for (const auto& r : records)
        if (r.d_pz_m <= threshold && kept < mask.keep_k) {
          out.records.push_back(r);
          ++kept;
        }
      break;
    }
    case MaskKind::exclude_below_separation: {
      if (!(d0_for_separation_m > 0.0))
        throw DataSelectionError(
            "mask: exclude_below_separation needs a d0 estimate");
      for (const auto& r : records)
        if (d0_for_separation_m - r.d_pz_m >= mask.min_separation_m)
          out.records.push_back(r);
      break;
    }
    case MaskKind::indices: {
      for (const auto& r : records)
        if (std::find(mask.indices.begin(), mask.indices.end(), r.step) !=
            mask.indices.end())
          out.records.push_back(r);
      break;
    }
  }
  out.excluded = static_cast<int>(records.size() - out.records.size());
  if (out.records.empty()) throw DataSelectionError("mask: empty selection");
  return out;
}

// ---------------------------------------------------------------------------
// fit results

struct FitResult {
  double kappa = 0.0;       // V m^p / V^2
  double kappa_err = 0.0;
  double d0_m = 0.0;
  double d0_err_m = 0.0;
  double p = 1.0;
  double p_err = 0.0;       // zero when the exponent was fixed
  bool p_free = false;
  double chi2_red = 0.0;
  int dof = 0;
  int n_used = 0;
  std::vector<double> rel_residuals;  // (alpha - model)/model, masked order
  std::string mask_label;
  int iterations = 0;
};

struct PMode {
  bool free = false;
  double fixed_p = 1.0;

  static PMode free_exponent() { return {true, 1.0}; }
  static PMode fixed(double p) { return {false, p}; }
};

namespace fit_detail {

struct XY {
  std::vector<double> d_pz_m;
  std::vector<double> alpha;
};

inline XY extract(const std::vector<RunRecord>& records) {
  XY xy;
  xy.d_pz_m.reserve(records.size());
  xy.alpha.reserve(records.size());
  for (const auto& r : records) {
    xy.d_pz_m.push_back(r.d_pz_m);
    xy.alpha.push_back(r.alpha());
  }
  return xy;
}

}  // namespace fit_detail

// Closed-form weighted fit of 1/alpha = (d0 - d_pz)/kappa with constant
// relative errors; the linearized route for a fixed exponent of one.
inline FitResult fit_linear_inverse_xy(std::span<const double> d_pz_m,
                                       std::span<const double> alpha,
                                       double sigma_rel) {
  const std::size_t n = d_pz_m.size();
  if (alpha.size() != n) throw std::invalid_argument("fit: size mismatch");
  if (n < 3) throw DataSelectionError("fit: need at least 3 points");
  if (!(sigma_rel > 0.0))
    throw std::invalid_argument("fit: sigma_rel must be positive");

  std::vector<double> y(n), sig(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(alpha[i] > 0.0))
      throw std::invalid_argument("fit: alpha must be positive");
    y[i] = 1.0 / alpha[i];
    sig[i] = sigma_rel * y[i];
  }
  LineFit line = weighted_line_fit(d_pz_m, y, sig);
  if (!(line.slope < 0.0))
    throw FitError("linear inverse fit: nonphysical slope (alpha must fall with extension)");

  FitResult fit;
  fit.kappa = -1.0 / line.slope;
  fit.d0_m = line.intercept * fit.kappa;
  // error propagation through kappa = -1/b1, d0 = -b0/b1
  double inv_b1_sq = 1.0 / (line.slope * line.slope);
  fit.kappa_err = line.slope_err * inv_b1_sq;
  double dd0_db0 = -1.0 / line.slope;
  double dd0_db1 = line.intercept * inv_b1_sq;
  fit.d0_err_m = std::sqrt(
      dd0_db0 * dd0_db0 * line.intercept_err * line.intercept_err +
      dd0_db1 * dd0_db1 * line.slope_err * line.slope_err +
      2.0 * dd0_db0 * dd0_db1 * line.cov_intercept_slope);
  fit.p = 1.0;
  fit.p_free = false;
  fit.dof = line.dof;
  fit.n_used = static_cast<int>(n);
  fit.chi2_red = line.chi2 / line.dof;
  fit.rel_residuals.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double model = fit.kappa / (fit.d0_m - d_pz_m[i]);
    fit.rel_residuals[i] = alpha[i] / model - 1.0;
  }
  return fit;
}

// Chi-square minimization of alpha = kappa/(d0 - d_pz)^p with sigma_i =
// sigma_rel * alpha_i. Internally parametrized as A (d_ref/(d0-d_pz))^p with
// d_ref the geometric mean separation, which keeps the normal equations well
// conditioned when p floats. Standard errors come from the local quadratic
// expansion of chi-square at the minimum.
inline FitResult fit_power_law_xy(std::span<const double> d_pz_m,
                                  std::span<const double> alpha,
                                  double sigma_rel, PMode mode) {
  const std::size_t n = d_pz_m.size();
  if (alpha.size() != n) throw std::invalid_argument("fit: size mismatch");
  const std::size_t np = mode.free ? 3 : 2;
  if (n < np + 1) throw DataSelectionError("fit: need more points than parameters");
  if (!(sigma_rel > 0.0))
    throw std::invalid_argument("fit: sigma_rel must be positive");

  // warm start from the linearized route
  FitResult warm = fit_linear_inverse_xy(d_pz_m, alpha, sigma_rel);
  const double max_dpz = *std::max_element(d_pz_m.begin(), d_pz_m.end());

  double log_dref = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    log_dref += std::log(warm.d0_m - d_pz_m[i]);
  const double d_ref = std::exp(log_dref / static_cast<double>(n));

  const double p0 = mode.free ? 1.0 : mode.fixed_p;
  std::vector<double> init;
  if (mode.free)
    init = {warm.kappa / d_ref, warm.d0_m, 1.0};
  else
    init = {warm.kappa / std::pow(d_ref, p0), warm.d0_m};

  std::vector<double> xv(d_pz_m.begin(), d_pz_m.end());
  auto model = [&xv, d_ref, mode, p0](const std::vector<double>& q,
                                      std::size_t i, double* grad) {
    double a = q[0];
    double d0 = q[1];
    double p = mode.free ? q[2] : p0;
    double base = d_ref / (d0 - xv[i]);
    double pw = std::pow(base, p);
    double f = a * pw;
    if (grad) {
      grad[0] = pw;
      grad[1] = -p * f / (d0 - xv[i]);
      if (mode.free) grad[2] = f * std::log(base);
    }
    return f;
  };
  auto feasible = [max_dpz](const std::vector<double>& q) {
    return q[0] > 0.0 && q[1] > max_dpz;
  };

  std::vector<double> sig(n);
  for (std::size_t i = 0; i < n; ++i) sig[i] = sigma_rel * alpha[i];

  LevMarResult lm = levmar_fit(model, alpha, sig, init, feasible);
  if (!lm.converged)
    throw FitError("power-law fit did not converge within the iteration cap");
  if (!(lm.params[1] > max_dpz))
    throw FitError("power-law fit: d0 estimate does not exceed max extension");

  FitResult fit;
  const double a_hat = lm.params[0];
  const double p_hat = mode.free ? lm.params[2] : p0;
  fit.d0_m = lm.params[1];
  fit.p = p_hat;
  fit.p_free = mode.free;
  fit.kappa = a_hat * std::pow(d_ref, p_hat);
  fit.iterations = lm.iterations;
  fit.n_used = static_cast<int>(n);
  fit.dof = static_cast<int>(n - np);
  fit.chi2_red = lm.chi2 / fit.dof;

  // transform covariance from (A, d0[, p]) to (kappa, d0[, p])
  auto cov = [&lm, np](std::size_t i, std::size_t j) {
    return lm.covariance[i * np + j];
  };
  const double dk_da = std::pow(d_ref, p_hat);
  fit.d0_err_m = std::sqrt(std::max(0.0, cov(1, 1)));
  if (mode.free) {
    const double dk_dp = fit.kappa * std::log(d_ref);
    double var_kappa = dk_da * dk_da * cov(0, 0) + dk_dp * dk_dp * cov(2, 2) +
                       2.0 * dk_da * dk_dp * cov(0, 2);
    fit.kappa_err = std::sqrt(std::max(0.0, var_kappa));
    fit.p_err = std::sqrt(std::max(0.0, cov(2, 2)));
  } else {
    fit.kappa_err = dk_da * std::sqrt(std::max(0.0, cov(0, 0)));
    fit.p_err = 0.0;
  }

  fit.rel_residuals.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double m = fit.kappa / std::pow(fit.d0_m - d_pz_m[i], p_hat);
    fit.rel_residuals[i] = alpha[i] / m - 1.0;
  }
  return fit;
}

// Resolve a mask against a run. A separation-based rule needs d0, which is
// not observable, so it is taken from a provisional p = 1 linear fit on all
// points; the masked data are then refit.
inline MaskedRecords resolve_mask(const std::vector<RunRecord>& records,
                                  const Mask& mask, double sigma_rel) {
  if (mask.kind != MaskKind::exclude_below_separation)
    return apply_mask(records, mask);
  fit_detail::XY xy = fit_detail::extract(records);
  FitResult provisional = fit_linear_inverse_xy(xy.d_pz_m, xy.alpha, sigma_rel);
  return apply_mask(records, mask, provisional.d0_m);
}

inline FitResult fit_power_law(const std::vector<RunRecord>& records,
                               const Mask& mask, double sigma_rel,
                               PMode mode) {
  MaskedRecords sel = resolve_mask(records, mask, sigma_rel);
  fit_detail::XY xy = fit_detail::extract(sel.records);
  FitResult fit = fit_power_law_xy(xy.d_pz_m, xy.alpha, sigma_rel, mode);
  fit.mask_label = sel.label;
  return fit;
}

inline FitResult fit_linear_inverse(const std::vector<RunRecord>& records,
                                    const Mask& mask, double sigma_rel) {
  MaskedRecords sel = resolve_mask(records, mask, sigma_rel);
  fit_detail::XY xy = fit_detail::extract(sel.records);
  FitResult fit = fit_linear_inverse_xy(xy.d_pz_m, xy.alpha, sigma_rel);
  fit.mask_label = sel.label;
  return fit;
}

// ---------------------------------------------------------------------------
// error budget

struct ErrorEstimate {
  double sigma_rel = 0.0;       // Gaussian-fit width of the relative deviations
  double sample_std = 0.0;      // plain standard deviation of the deviations
  int smoothing_window = 0;
  Histogram histogram;
  GaussianFit gaussian;
  NormalityCheck normality;
  std::vector<double> deviations;
};

// Smooth the series with a centered moving average (window 5% of the length,
// at least 5 points, odd), take relative deviations from the smooth curve,
// and fit a Gaussian to their histogram.
inline ErrorEstimate estimate_relative_error(
    std::span<const double> alpha_series) {
  const std::size_t n = alpha_series.size();
  if (n < 100)
    throw DataSelectionError(
        "estimate_relative_error: need at least 100 samples");
  int window = static_cast<int>(
      std::lround(0.05 * static_cast<double>(n)));
  window = std::max(window, 5);
  if (window % 2 == 0) ++window;

  std::vector<double> smooth = moving_average_centered(alpha_series, window);
  ErrorEstimate est;
  est.smoothing_window = window;
  est.deviations.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(smooth[i] != 0.0))
      throw std::invalid_argument("estimate_relative_error: degenerate smooth");
    est.deviations[i] = alpha_series[i] / smooth[i] - 1.0;
  }
  est.sample_std = sample_std(est.deviations);
  int bins = std::clamp(static_cast<int>(std::lround(std::sqrt(
                 static_cast<double>(n)))), 10, 80);
  est.histogram = make_histogram(est.deviations, bins);
  est.gaussian = fit_gaussian_to_histogram(est.histogram);
  est.sigma_rel = est.gaussian.converged ? est.gaussian.sigma : est.sample_std;
  est.normality = jarque_bera(est.deviations);
  return est;
}

// ---------------------------------------------------------------------------
// beyond-PFA residual oracle

struct PfaResidualCurve {
  std::vector<double> separation_m;
  std::vector<double> rel_residual;  // of the linear-inverse fit

  double max_abs() const {
    double m = 0.0;
    for (double r : rel_residual) m = std::max(m, std::abs(r));
    return m;
  }
};

// Generate noiseless alpha on a geometric separation grid from the chosen
// model, fit the linearized form with kappa and d0 free, and return the
// relative residuals: the systematic error left by assuming the PFA law.
inline PfaResidualCurve expected_pfa_residuals(
    double sphere_radius_m, double sep_min_m, double sep_max_m, int points,
    double series_tol, ForceModelKind generator = ForceModelKind::exact_series) {
  if (!(0.0 < sep_min_m && sep_min_m < sep_max_m))
    throw std::invalid_argument("pfa residuals: require 0 < min < max");
  if (points < 4) throw std::invalid_argument("pfa residuals: need >= 4 points");

  ForceModel model;
  model.variant = generator;
  model.series_rel_tolerance = series_tol;

  PfaResidualCurve curve;
  curve.separation_m.resize(static_cast<std::size_t>(points));
  std::vector<double> alpha(static_cast<std::size_t>(points));
  double ratio =
      std::pow(sep_min_m / sep_max_m, 1.0 / static_cast<double>(points - 1));
  double sep = sep_max_m;
  for (int i = 0; i < points; ++i) {
    curve.separation_m[static_cast<std::size_t>(i)] = sep;
    Geometry g{sphere_radius_m, sep};
    alpha[static_cast<std::size_t>(i)] =
        alpha_theoretical(g, 1.0, 1.0, model);
    sep *= ratio;
  }
  std::vector<double> d_pz(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i)
    d_pz[static_cast<std::size_t>(i)] =
        sep_max_m - curve.separation_m[static_cast<std::size_t>(i)];
  FitResult fit = fit_linear_inverse_xy(d_pz, alpha, 0.0056);
  curve.rel_residual = fit.rel_residuals;
  return curve;
}

// ---------------------------------------------------------------------------
// V_DC(d) fit

struct LogVoltageFit {
  double a_v = 0.0;
  double a_err_v = 0.0;
  double b_v = 0.0;
  double b_err_v = 0.0;
  double chi2_red = 0.0;
  int dof = 0;
};

// Weighted linear least squares of V_DC against log(d/1nm).
inline LogVoltageFit fit_log_voltage(std::span<const double> separation_m,
                                     std::span<const double> v_dc_v,
                                     std::span<const double> sigma_v,
                                     LogBase base = LogBase::natural) {
  const std::size_t n = separation_m.size();
  if (v_dc_v.size() != n || sigma_v.size() != n)
    throw std::invalid_argument("fit_log_voltage: size mismatch");
  if (n < 3) throw DataSelectionError("fit_log_voltage: need >= 3 points");
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(separation_m[i] > 0.0))
      throw std::invalid_argument("fit_log_voltage: separations must be > 0");
    x[i] = base == LogBase::natural ? std::log(separation_m[i] * 1e9)
                                    : std::log10(separation_m[i] * 1e9);
  }
  LineFit line = weighted_line_fit(x, v_dc_v, sigma_v);
  LogVoltageFit out;
  out.a_v = line.slope;
  out.a_err_v = line.slope_err;
  out.b_v = line.intercept;
  out.b_err_v = line.intercept_err;
  out.dof = line.dof;
  out.chi2_red = line.chi2 / line.dof;
  return out;
}

// ---------------------------------------------------------------------------
// campaign statistics

struct RunFitPoint {
  int run_id = 0;
  double t_min = 0.0;
  FitResult fit;
};

struct CampaignStatistics {
  double chi2_mean_all = 0.0;
  double chi2_std_all = 0.0;
  double chi2_mean = 0.0;  // after outlier removal
  double chi2_std = 0.0;
  std::vector<int> outlier_runs;
  std::vector<double> run_t_min;
  std::vector<double> d0_by_run_m;
  std::vector<double> kappa_by_run;
  double d0_drift_m_per_min = 0.0;
  double kappa_drift_rel_per_min = 0.0;
};

// Mean/std of the per-run reduced chi-square, with runs above mean + 5 std
// flagged as outliers and the summary recomputed on the remainder. Also
// returns the fitted d0 and kappa trajectories and their drift slopes.
inline CampaignStatistics campaign_statistics(
    const std::vector<RunFitPoint>& fits) {
  if (fits.size() < 2)
    throw std::invalid_argument("campaign_statistics: need >= 2 runs");
  CampaignStatistics st;
  std::vector<double> chi2;
  for (const auto& f : fits) {
    chi2.push_back(f.fit.chi2_red);
    st.run_t_min.push_back(f.t_min);
    st.d0_by_run_m.push_back(f.fit.d0_m);
    st.kappa_by_run.push_back(f.fit.kappa);
  }
  st.chi2_mean_all = mean_of(chi2);
  st.chi2_std_all = sample_std(chi2);
  double cut = st.chi2_mean_all + 5.0 * st.chi2_std_all;
  std::vector<double> kept;
  for (std::size_t i = 0; i < fits.size(); ++i) {
    if (chi2[i] > cut)
      st.outlier_runs.push_back(fits[i].run_id);
    else
      kept.push_back(chi2[i]);
  }
  st.chi2_mean = mean_of(kept);
  st.chi2_std = sample_std(kept);

  // unweighted drift slopes of the fitted trajectories; the kappa drift is
  // relative to the trajectory's own t = 0 value
  std::vector<double> ones(fits.size(), 1.0);
  LineFit d0_line = weighted_line_fit(st.run_t_min, st.d0_by_run_m, ones);
  st.d0_drift_m_per_min = d0_line.slope;
  LineFit kappa_line = weighted_line_fit(st.run_t_min, st.kappa_by_run, ones);
  st.kappa_drift_rel_per_min = kappa_line.slope / kappa_line.intercept;
  return st;
}

}  // namespace spcal
