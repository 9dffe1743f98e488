#pragma once

// Harmonic decomposition of the photodetector signal for a drive
// V = V_DC + V_AC sin(wt) against a contact potential V0, plus a time-domain
// synthesis and dual-phase lock-in demodulation path that cross-validates it.
//
// Quasi-static regime: the mechanical response is the flat gain 1/k, valid
// while the drive frequency stays well below the cantilever resonance.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "spcal/constants.hpp"
#include "spcal/electrostatics.hpp"

namespace spcal {

struct Excitation {
  double v_dc_v = 0.0;
  double v_ac_v = 0.0;           // amplitude
  double omega_rad_s = 0.0;      // angular drive frequency

  void validate() const {
    if (!(v_ac_v >= 0.0)) throw std::invalid_argument("Excitation: V_AC >= 0");
    if (!(omega_rad_s > 0.0))
      throw std::invalid_argument("Excitation: omega must be positive");
  }
};

struct SensorParams {
  double spring_n_per_m = 0.0;
  double gain_v_per_m = 0.0;     // deflection-to-signal conversion
  double resonance_hz = 0.0;

  void validate(double drive_hz = 0.0) const {
    if (!(spring_n_per_m > 0.0))
      throw std::invalid_argument("SensorParams: spring constant > 0 required");
    if (!(gain_v_per_m > 0.0))
      throw std::invalid_argument("SensorParams: optical gain > 0 required");
    if (!(resonance_hz > 0.0))
      throw std::invalid_argument("SensorParams: resonance > 0 required");
    // quasi-static check: drive must sit far below resonance
    if (drive_hz > 0.0 && drive_hz > resonance_hz / 4.0)
      throw std::invalid_argument(
          "SensorParams: drive frequency violates the quasi-static regime");
  }
};

// Magnitudes of the four signal terms. The physical signal of an attractive
// force is negative; magnitudes are reported here and signs handled by the
// time-domain synthesis.
struct HarmonicComponents {
  double static_v = 0.0;            // DC signal level
  double omega_amplitude_v = 0.0;   // amplitude of the w component
  double two_omega_pp_v = 0.0;      // peak-to-peak of the 2w component
  double static_deflection_m = 0.0;
};

struct LockinConfig {
  int reference_multiple = 2;   // 1 -> L1 at w, 2 -> L2 at 2w
  int lowpass_poles = 4;        // 24 dB/octave
  double rc_s = 1.0;
  double integration_s = 5.0;

  void validate() const {
    if (reference_multiple != 1 && reference_multiple != 2)
      throw std::invalid_argument("LockinConfig: reference multiple is 1 or 2");
    if (lowpass_poles < 1)
      throw std::invalid_argument("LockinConfig: need >= 1 pole");
    if (!(rc_s > 0.0)) throw std::invalid_argument("LockinConfig: RC > 0");
    if (!(integration_s >= rc_s))
      throw std::invalid_argument("LockinConfig: integration >= RC");
  }
};

struct DemodResult {
  double amplitude_v = 0.0;     // amplitude of the selected component
  double peak_to_peak_v = 0.0;  // 2 * amplitude
  double phase_rad = 0.0;
};

// The four terms of the photodetector signal with a generalized exponent p on
// the separation:
//   prefactor = gain eps0 pi R / (k d^p)
//   static    = prefactor [ (V0+V_DC)^2 + V_AC^2/2 ]
//   at w      = prefactor 2 (V0+V_DC) V_AC
//   at 2w pp  = prefactor V_AC^2          (= alpha V_AC^2)
inline HarmonicComponents harmonic_components(const Geometry& g,
                                              const SensorParams& s,
                                              const Excitation& exc,
                                              double contact_v,
                                              double exponent_p = 1.0) {
  g.validate();
  s.validate(exc.omega_rad_s / (2.0 * k_pi));
  exc.validate();
  double prefactor = s.gain_v_per_m * k_vacuum_permittivity * k_pi *
                     g.sphere_radius_m /
                     (s.spring_n_per_m * std::pow(g.separation_m, exponent_p));
  double offset = contact_v + exc.v_dc_v;
  HarmonicComponents h;
  h.static_v = prefactor * (offset * offset + 0.5 * exc.v_ac_v * exc.v_ac_v);
  h.omega_amplitude_v = prefactor * std::abs(2.0 * offset * exc.v_ac_v);
  h.two_omega_pp_v = prefactor * exc.v_ac_v * exc.v_ac_v;
  h.static_deflection_m = h.static_v / s.gain_v_per_m;
  return h;
}

struct SampledSignal {
  double sample_rate_hz = 0.0;
  std::vector<double> samples_v;

  double duration_s() const {
    return static_cast<double>(samples_v.size()) / sample_rate_hz;
  }
};

// Sample the full signal, signs included:
//   S(t) = -prefactor [ (V0+V_DC)^2 + V_AC^2/2
//                       + 2 (V0+V_DC) V_AC sin(wt) - V_AC^2 cos(2wt)/2 ]
inline SampledSignal synthesize_timeseries(const Geometry& g,
                                           const SensorParams& s,
                                           const Excitation& exc,
                                           double contact_v, double exponent_p,
                                           double sample_rate_hz,
                                           double duration_s,
                                           double start_phase_rad = 0.0) {
  g.validate();
  s.validate(exc.omega_rad_s / (2.0 * k_pi));
  exc.validate();
  double two_omega_hz = 2.0 * exc.omega_rad_s / (2.0 * k_pi);
  if (!(sample_rate_hz >= 20.0 * two_omega_hz))
    throw std::invalid_argument(
        "synthesize_timeseries: sample rate below 20x the 2w frequency");
  if (!(duration_s > 0.0))
    throw std::invalid_argument("synthesize_timeseries: duration must be > 0");

  double prefactor = s.gain_v_per_m * k_vacuum_permittivity * k_pi *
                     g.sphere_radius_m /
                     (s.spring_n_per_m * std::pow(g.separation_m, exponent_p));
  double offset = contact_v + exc.v_dc_v;
  double dc = offset * offset + 0.5 * exc.v_ac_v * exc.v_ac_v;

  SampledSignal out;
  out.sample_rate_hz = sample_rate_hz;
  auto n = static_cast<std::size_t>(duration_s * sample_rate_hz);
  out.samples_v.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double wt = exc.omega_rad_s * static_cast<double>(i) / sample_rate_hz +
                start_phase_rad;
    out.samples_v[i] =
        -prefactor * (dc + 2.0 * offset * exc.v_ac_v * std::sin(wt) -
                      0.5 * exc.v_ac_v * exc.v_ac_v * std::cos(2.0 * wt));
  }
  return out;
}

// Dual-phase demodulation at reference_multiple * omega: mix with quadrature
// references and run each branch through `lowpass_poles` cascaded one-pole RC
// stages. This is an offline instrument working on a recorded trace, so the
// filter states are settled with a priming pass over the whole signal before
// the measuring pass; the first 5 RC of output are then discarded and the
// final integration window averaged.
inline DemodResult lockin_demodulate(const SampledSignal& signal,
                                     const LockinConfig& cfg,
                                     double omega_rad_s) {
  cfg.validate();
  if (!(omega_rad_s > 0.0))
    throw std::invalid_argument("lockin_demodulate: omega must be positive");
  double ref = cfg.reference_multiple * omega_rad_s;
  double ref_hz = ref / (2.0 * k_pi);
  if (!(ref_hz < 0.5 * signal.sample_rate_hz))
    throw std::invalid_argument(
        "lockin_demodulate: reference frequency above Nyquist");
  if (!(signal.duration_s() >= cfg.integration_s))
    throw std::invalid_argument(
        "lockin_demodulate: signal shorter than integration time");

  const double dt = 1.0 / signal.sample_rate_hz;
  const double decay = std::exp(-dt / cfg.rc_s);
  const std::size_t n = signal.samples_v.size();
  const auto poles = static_cast<std::size_t>(cfg.lowpass_poles);
  std::vector<double> in_phase(poles, 0.0);
  std::vector<double> quadrature(poles, 0.0);

  const auto n_avg =
      static_cast<std::size_t>(cfg.integration_s * signal.sample_rate_hz);
  const std::size_t avg_start = n > n_avg ? n - n_avg : 0;
  const auto n_discard =
      static_cast<std::size_t>(5.0 * cfg.rc_s * signal.sample_rate_hz);
  std::size_t start = avg_start;
  if (n_discard < n) start = std::max(start, n_discard);

  double sum_i = 0.0, sum_q = 0.0;
  std::size_t count = 0;
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t i = 0; i < n; ++i) {
      double t = static_cast<double>(i) * dt;
      double x = signal.samples_v[i];
      double mi = x * std::sin(ref * t);
      double mq = x * std::cos(ref * t);
      for (std::size_t pole = 0; pole < poles; ++pole) {
        in_phase[pole] = decay * in_phase[pole] + (1.0 - decay) * mi;
        quadrature[pole] = decay * quadrature[pole] + (1.0 - decay) * mq;
        mi = in_phase[pole];
        mq = quadrature[pole];
      }
      if (pass == 1 && i >= start) {
        sum_i += mi;
        sum_q += mq;
        ++count;
      }
    }
  }
  double ibar = sum_i / static_cast<double>(count);
  double qbar = sum_q / static_cast<double>(count);

  DemodResult r;
  r.amplitude_v = 2.0 * std::hypot(ibar, qbar);
  r.peak_to_peak_v = 2.0 * r.amplitude_v;
  r.phase_rad = std::atan2(qbar, ibar);
  return r;
}

}  // namespace spcal
