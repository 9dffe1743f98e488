#pragma once

// The simulated experiment: stage stepping against a drifting initial
// separation, distance-dependent contact potential compensated by a Kelvin
// feedback loop, adaptive V_AC scheduling against a 2w setpoint, and
// multiplicative measurement noise. A (config, seed) pair fully determines
// every record; per-run streams are derived from (seed, run id) so runs can
// be replayed independently.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "spcal/constants.hpp"
#include "spcal/electrostatics.hpp"
#include "spcal/errors.hpp"
#include "spcal/records.hpp"
#include "spcal/rng.hpp"
#include "spcal/wls.hpp"

namespace spcal {

// V0(d) = -(a log(d/1nm) + b): the compensating V_DC = -V0 then follows the
// a log d + b curve.
struct ContactPotentialModel {
  double a_v = -4.4e-3;   // per decade or per e-fold of d in nm
  double b_v = 4.3e-3;
  LogBase base = LogBase::natural;
};

inline double contact_potential(double d_m, const ContactPotentialModel& m) {
  if (!(d_m > 0.0))
    throw std::invalid_argument("contact_potential: separation must be > 0");
  double d_nm = d_m * 1e9;
  return -(m.a_v * apply_log(d_nm, m.base) + m.b_v);
}

// Loop gain grows toward small separation: G(d) = g_ref (d_ref/d)^exponent.
struct LoopGainModel {
  double g_ref = 1.0e3;
  double d_ref_m = 2.0e-6;
  double exponent = 0.769;  // ~1e3 at 2 um -> ~1e4 at 100 nm

  double at(double d_m) const {
    return g_ref * std::pow(d_ref_m / d_m, exponent);
  }
};

struct NoiseModel {
  double s2w_relative = 0.0056;  // multiplicative Gaussian noise on S_2w
  // Per-point scatter of the compensation voltage. Modeled as part of the
  // instantaneous contact potential, so the loop tracks it and the settled
  // V_DC still satisfies the feedback bound record by record.
  double v_dc_volts = 0.5e-3;
};

struct DriftModel {
  double d0_m_per_min = 40e-12;
  double kappa_rel_per_min = 1e-5;
  double v_dc_walk_bound_v_per_run = 40e-6;  // per-run step bound
};

struct StageSchedule {
  std::vector<double> d_pz_m;  // ascending stage extensions

  // Geometric spacing of the nominal separations d0 - d_pz from far to near.
  static StageSchedule geometric(double d0_m, double sep_max_m,
                                 double sep_min_m, int points) {
    if (points < 2) throw std::invalid_argument("schedule: need >= 2 points");
    if (!(0.0 < sep_min_m && sep_min_m < sep_max_m && sep_max_m < d0_m))
      throw std::invalid_argument("schedule: require 0 < min < max < d0");
    StageSchedule s;
    s.d_pz_m.resize(points);
    double ratio = std::pow(sep_min_m / sep_max_m,
                            1.0 / static_cast<double>(points - 1));
    double sep = sep_max_m;
    for (int j = 0; j < points; ++j) {
      s.d_pz_m[static_cast<std::size_t>(j)] = d0_m - sep;
      sep *= ratio;
    }
    return s;
  }

  // Repeated extension for fixed-position error-budget series.
  static StageSchedule fixed(double d_pz_m, int points) {
    if (points < 1) throw std::invalid_argument("schedule: need >= 1 point");
    StageSchedule s;
    s.d_pz_m.assign(static_cast<std::size_t>(points), d_pz_m);
    return s;
  }
};

struct RigConfig {
  // geometry and sensor
  double sphere_radius_m = 100e-6;
  double spring_n_per_m = 0.9;
  double gain_v_per_m = 1e7;
  double resonance_hz = 1650.0;
  double drive_hz = 72.2;

  // protocol
  double d0_m = 2.102e-6;
  StageSchedule schedule =
      StageSchedule::geometric(2.102e-6, 2.05e-6, 5.2e-8, 55);
  double s2w_setpoint_v = 3.0e-3;  // = gain * 0.3 nm peak-to-peak
  double v_ac_min_v = 0.01;
  double v_ac_max_v = 2.0;
  double v_ac_initial_v = 0.446;
  double run_minutes = 5.707;
  int default_runs = 184;

  double p_true = 1.0;
  ContactPotentialModel contact;
  LoopGainModel loop_gain;
  NoiseModel noise;
  DriftModel drift;
  bool contaminant_enabled = false;
  ForceModel force_model;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(sphere_radius_m > 0.0) || !(spring_n_per_m > 0.0) ||
        !(gain_v_per_m > 0.0) || !(resonance_hz > 0.0) || !(drive_hz > 0.0))
      throw ConfigError("rig: geometry/sensor parameters must be positive");
    if (drive_hz > resonance_hz / 4.0)
      throw ConfigError("rig: drive frequency violates the quasi-static regime");
    if (schedule.d_pz_m.empty())
      throw ConfigError("rig: stage schedule is empty");
    double max_ext = *std::max_element(schedule.d_pz_m.begin(),
                                       schedule.d_pz_m.end());
    double min_ext = *std::min_element(schedule.d_pz_m.begin(),
                                       schedule.d_pz_m.end());
    if (min_ext < 0.0) throw ConfigError("rig: negative stage extension");
    if (!(d0_m > max_ext))
      throw ConfigError("rig: d0 must exceed the maximum stage extension");
    if (!(s2w_setpoint_v > 0.0))
      throw ConfigError("rig: S_2w setpoint must be positive");
    if (!(v_ac_min_v > 0.0 && v_ac_min_v < v_ac_max_v))
      throw ConfigError("rig: V_AC bounds must be positive and ordered");
    if (!(v_ac_initial_v >= v_ac_min_v && v_ac_initial_v <= v_ac_max_v))
      throw ConfigError("rig: initial V_AC outside bounds");
    if (!(run_minutes > 0.0)) throw ConfigError("rig: run duration must be > 0");
    if (default_runs < 1) throw ConfigError("rig: runs must be >= 1");
    if (!(p_true > 0.0)) throw ConfigError("rig: p_true must be positive");
    if (noise.s2w_relative < 0.0 || noise.v_dc_volts < 0.0)
      throw ConfigError("rig: noise fractions must be >= 0");
    if (!(loop_gain.g_ref >= 1.0))
      throw ConfigError("rig: loop gain reference must be >= 1");
    if (force_model.variant == ForceModelKind::exact_series)
      force_model.validate();
  }
};

struct KelvinResult {
  double v_dc_v = 0.0;
  double residual_v = 0.0;  // V0 + V_DC = V0/(G+1)
};

// Negative feedback at the w harmonic: V_DC = -G/(G+1) V0.
inline KelvinResult kelvin_settle(double v0_v, double gain) {
  if (!std::isfinite(v0_v) || !std::isfinite(gain))
    throw std::invalid_argument("kelvin_settle: non-finite input");
  if (!(gain >= 1.0))
    throw std::invalid_argument("kelvin_settle: loop gain must be >= 1");
  KelvinResult r;
  r.v_dc_v = -gain / (gain + 1.0) * v0_v;
  r.residual_v = v0_v / (gain + 1.0);
  return r;
}

// Ideal-conductor sphere-plate attraction pi^3 hbar c R/(360 d^3) divided by
// the spring constant: the extra bending that invalidates d = d0 - d_pz at
// close approach.
inline double near_contact_contaminant(double d_m, double sphere_radius_m,
                                       double spring_n_per_m) {
  if (!(d_m > 0.0))
    throw std::invalid_argument("near_contact_contaminant: separation <= 0");
  double force = k_pi * k_pi * k_pi * k_hbar * k_speed_of_light *
                 sphere_radius_m / (360.0 * d_m * d_m * d_m);
  return force / spring_n_per_m;
}

struct ScheduledDrive {
  double v_ac_v = 0.0;
  bool clamped = false;
};

// Predict alpha at the next stage position by weighted linear extrapolation
// of 1/alpha versus d_pz over the run so far, then choose
// V_AC = sqrt(setpoint / alpha_pred) clamped to the configured bounds.
// With fewer than two prior records the initial V_AC is used unchanged.
inline ScheduledDrive schedule_vac(const std::vector<RunRecord>& history,
                                   double next_d_pz_m, double setpoint_v,
                                   double v_ac_min_v, double v_ac_max_v,
                                   double v_ac_initial_v) {
  ScheduledDrive out;
  if (history.size() < 2) {
    out.v_ac_v = v_ac_initial_v;
    return out;
  }
  std::vector<double> x, y, sig;
  x.reserve(history.size());
  for (const auto& rec : history) {
    double inv_alpha = 1.0 / rec.alpha();
    x.push_back(rec.d_pz_m);
    y.push_back(inv_alpha);
    sig.push_back(std::abs(inv_alpha));  // constant relative weights
  }
  double x_lo = *std::min_element(x.begin(), x.end());
  double x_hi = *std::max_element(x.begin(), x.end());
  double y_pred;
  if (x_hi - x_lo < 1e-15 * (std::abs(x_hi) + 1e-30)) {
    // fixed-position series: no trend information, use the weighted mean
    double sw = 0.0, swy = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      double w = 1.0 / (sig[i] * sig[i]);
      sw += w;
      swy += w * y[i];
    }
    y_pred = swy / sw;
  } else {
    LineFit fit = weighted_line_fit(x, y, sig);
    y_pred = fit.intercept + fit.slope * next_d_pz_m;
  }
  if (!(y_pred > 0.0)) {
    // extrapolation past apparent contact
    out.v_ac_v = v_ac_min_v;
    out.clamped = true;
    return out;
  }
  double v = std::sqrt(setpoint_v * y_pred);
  out.v_ac_v = std::clamp(v, v_ac_min_v, v_ac_max_v);
  out.clamped = out.v_ac_v != v;
  return out;
}

namespace rig_detail {

inline constexpr std::uint64_t k_tag_run = 0x72756e00ULL;    // per-point noise
inline constexpr std::uint64_t k_tag_walk = 0x77616c6bULL;   // V_DC walk steps

// True separation including the optional contaminant deflection, solved by
// fixed-point iteration of d = gap - defl(d).
inline double true_separation(double gap_m, const RigConfig& cfg, int run_id,
                              int step) {
  if (!(gap_m > 0.0))
    throw ContactError(run_id, step,
                       "contact: separation underflow in run " +
                           std::to_string(run_id) + " at step " +
                           std::to_string(step));
  if (!cfg.contaminant_enabled) return gap_m;
  double d = gap_m;
  for (int it = 0; it < 50; ++it) {
    double defl =
        near_contact_contaminant(d, cfg.sphere_radius_m, cfg.spring_n_per_m);
    double next = gap_m - defl;
    if (!(next > 0.0))
      throw ContactError(run_id, step,
                         "contact: contaminant deflection closed the gap in run " +
                             std::to_string(run_id));
    if (std::abs(next - d) <= 1e-15 * d) return next;
    d = next;
  }
  return d;
}

// alpha before drift scaling, from the configured force model.
inline double base_alpha(double d_m, const RigConfig& cfg) {
  if (cfg.force_model.variant == ForceModelKind::pfa) {
    double kappa0 = cfg.gain_v_per_m * k_vacuum_permittivity * k_pi *
                    cfg.sphere_radius_m / cfg.spring_n_per_m;
    return kappa0 / std::pow(d_m, cfg.p_true);
  }
  Geometry g{cfg.sphere_radius_m, d_m};
  return alpha_theoretical(g, cfg.spring_n_per_m, cfg.gain_v_per_m,
                           cfg.force_model);
}

}  // namespace rig_detail

// One approach run. t_start_min and v_dc_walk_v carry the campaign state;
// the defaults give a standalone run at campaign time zero.
inline RunDataset execute_run(const RigConfig& cfg, int run_id = 0,
                              double t_start_min = 0.0,
                              double v_dc_walk_v = 0.0) {
  cfg.validate();
  RandomStream noise_stream(cfg.seed, static_cast<std::uint64_t>(run_id),
                            rig_detail::k_tag_run);
  RunDataset out;
  out.run_id = run_id;
  out.start_min = t_start_min;
  const auto n_points = cfg.schedule.d_pz_m.size();
  const double dwell_min = cfg.run_minutes / static_cast<double>(n_points);
  out.records.reserve(n_points);

  for (std::size_t j = 0; j < n_points; ++j) {
    RunRecord rec;
    rec.run_id = run_id;
    rec.step = static_cast<int>(j);
    rec.t_min = t_start_min + static_cast<double>(j) * dwell_min;
    rec.d_pz_m = cfg.schedule.d_pz_m[j];

    const double d0_t = cfg.d0_m + cfg.drift.d0_m_per_min * rec.t_min;
    const double kappa_factor = 1.0 + cfg.drift.kappa_rel_per_min * rec.t_min;
    rec.d_true_m = rig_detail::true_separation(d0_t - rec.d_pz_m, cfg, run_id,
                                               rec.step);

    // instantaneous contact potential: model curve + campaign walk + patch noise
    rec.v0_true_v = contact_potential(rec.d_true_m, cfg.contact) + v_dc_walk_v +
                    cfg.noise.v_dc_volts * noise_stream.gaussian();
    rec.loop_gain = cfg.loop_gain.at(rec.d_true_m);
    rec.v_dc_v = kelvin_settle(rec.v0_true_v, rec.loop_gain).v_dc_v;

    ScheduledDrive drive =
        schedule_vac(out.records, rec.d_pz_m, cfg.s2w_setpoint_v,
                     cfg.v_ac_min_v, cfg.v_ac_max_v, cfg.v_ac_initial_v);
    rec.v_ac_v = drive.v_ac_v;
    rec.v_ac_clamped = drive.clamped;

    double alpha_true = kappa_factor * rig_detail::base_alpha(rec.d_true_m, cfg);
    double s2w_true = alpha_true * rec.v_ac_v * rec.v_ac_v;
    rec.s2w_v =
        s2w_true * (1.0 + cfg.noise.s2w_relative * noise_stream.gaussian());

    out.records.push_back(rec);
  }
  return out;
}

// Sequential runs against the shared drifting state. The V_DC walk advances
// by one bounded step per run.
inline Campaign execute_campaign(const RigConfig& cfg, int n_runs) {
  cfg.validate();
  if (n_runs < 1) throw std::invalid_argument("execute_campaign: n_runs >= 1");
  Campaign campaign;
  campaign.runs.reserve(static_cast<std::size_t>(n_runs));
  double walk = 0.0;
  for (int r = 0; r < n_runs; ++r) {
    RandomStream walk_stream(cfg.seed, static_cast<std::uint64_t>(r),
                             rig_detail::k_tag_walk);
    walk += walk_stream.uniform(-cfg.drift.v_dc_walk_bound_v_per_run,
                                cfg.drift.v_dc_walk_bound_v_per_run);
    double t_start = static_cast<double>(r) * cfg.run_minutes;
    campaign.d0_start_m.push_back(cfg.d0_m + cfg.drift.d0_m_per_min * t_start);
    campaign.kappa_factor_start.push_back(
        1.0 + cfg.drift.kappa_rel_per_min * t_start);
    campaign.runs.push_back(execute_run(cfg, r, t_start, walk));
  }
  return campaign;
}

}  // namespace spcal
