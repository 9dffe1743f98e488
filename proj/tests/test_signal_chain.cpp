#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "spcal/signal_chain.hpp"

using namespace spcal;
using Catch::Approx;

namespace {

constexpr double k_radius = 100e-6;
const SensorParams k_sensor{0.9, 1e7, 1650.0};
constexpr double k_omega = 2.0 * k_pi * 72.2;  // paper drive frequency

LockinConfig lockin_at(int multiple) {
  LockinConfig cfg;
  cfg.reference_multiple = multiple;
  cfg.rc_s = 1.0;
  cfg.integration_s = 5.0;
  return cfg;
}

}  // namespace

TEST_CASE("harmonic components at the compensated point", "[signal]") {
  Geometry g{k_radius, 2e-6};
  double v0 = -0.0123;
  Excitation exc{-v0, 0.45, k_omega};  // V_DC = -V0

  HarmonicComponents h = harmonic_components(g, k_sensor, exc, v0);
  CHECK(h.omega_amplitude_v == 0.0);

  // static deflection at V_DC = -V0 with the 0.3 nm setpoint drive:
  // half the 2w peak-to-peak, roughly 0.15 nm
  CHECK(h.static_deflection_m == Approx(0.15646641e-9).epsilon(1e-6));
  CHECK(h.static_deflection_m == Approx(0.15e-9).epsilon(0.08));
  CHECK(h.static_deflection_m < 0.2e-9);  // "always smaller than 0.2 nm"

  // 2w peak-to-peak equals alpha V_AC^2 and quadruples with doubled drive
  Excitation exc2 = exc;
  exc2.v_ac_v *= 2.0;
  HarmonicComponents h2 = harmonic_components(g, k_sensor, exc2, v0);
  CHECK(h2.two_omega_pp_v == Approx(4.0 * h.two_omega_pp_v).epsilon(1e-12));
}

TEST_CASE("harmonic components expose the generalized exponent", "[signal]") {
  Geometry g{k_radius, 500e-9};
  Excitation exc{0.01, 0.2, k_omega};
  HarmonicComponents h1 = harmonic_components(g, k_sensor, exc, 0.0, 1.0);
  HarmonicComponents h7 = harmonic_components(g, k_sensor, exc, 0.0, 0.7);
  double expected = std::pow(500e-9, 1.0 - 0.7);
  CHECK(h7.two_omega_pp_v / h1.two_omega_pp_v == Approx(expected).epsilon(1e-12));
}

TEST_CASE("quasi-static precondition", "[signal]") {
  Geometry g{k_radius, 1e-6};
  Excitation fast{0.0, 0.1, 2.0 * k_pi * 900.0};  // 900 Hz vs 1.65 kHz
  CHECK_THROWS_AS(harmonic_components(g, k_sensor, fast, 0.0),
                  std::invalid_argument);
}

TEST_CASE("synthesis edge cases", "[signal]") {
  Geometry g{k_radius, 1e-6};
  double v0 = 0.005;
  Excitation exc{-v0, 0.0, k_omega};  // compensated, no drive

  SampledSignal s = synthesize_timeseries(g, k_sensor, exc, v0, 1.0, 4000.0, 0.5);
  for (double v : s.samples_v) CHECK(v == 0.0);

  CHECK_THROWS_AS(
      synthesize_timeseries(g, k_sensor, {0.0, 0.1, k_omega}, v0, 1.0,
                            1000.0, 0.5),  // < 20x the 2w frequency
      std::invalid_argument);
}

TEST_CASE("lock-in recovers a pure tone", "[signal][lockin]") {
  const double rate = 4000.0;
  const double amp = 0.37;
  SampledSignal s;
  s.sample_rate_hz = rate;
  s.samples_v.resize(static_cast<std::size_t>(16.0 * rate));
  for (std::size_t i = 0; i < s.samples_v.size(); ++i)
    s.samples_v[i] = amp * std::sin(k_omega * static_cast<double>(i) / rate);

  DemodResult r = lockin_demodulate(s, lockin_at(1), k_omega);
  CHECK(r.amplitude_v == Approx(amp).epsilon(1e-3));
  CHECK(r.peak_to_peak_v == Approx(2.0 * amp).epsilon(1e-3));

  // the same tone demodulated at 2w: the mixing products sit at w and 3w,
  // where four RC poles at 1 s attenuate by (1 + (w RC)^2)^-2 ~ 2e-11
  DemodResult rej = lockin_demodulate(s, lockin_at(2), k_omega);
  CHECK(rej.amplitude_v < 1e-3 * amp);
  CHECK(rej.amplitude_v < 1e-4 * amp);
}

TEST_CASE("lock-in amplitude is phase invariant", "[signal][lockin]") {
  const double rate = 4000.0;
  DemodResult ref;
  for (int k = 0; k < 5; ++k) {
    double phase = 2.0 * k_pi * k / 5.0 + 0.3;
    SampledSignal s;
    s.sample_rate_hz = rate;
    s.samples_v.resize(static_cast<std::size_t>(16.0 * rate));
    for (std::size_t i = 0; i < s.samples_v.size(); ++i)
      s.samples_v[i] =
          0.21 * std::sin(k_omega * static_cast<double>(i) / rate + phase);
    DemodResult r = lockin_demodulate(s, lockin_at(1), k_omega);
    if (k == 0)
      ref = r;
    else
      CHECK(r.amplitude_v == Approx(ref.amplitude_v).epsilon(1e-4));
  }
}

TEST_CASE("lock-in preconditions", "[signal][lockin]") {
  SampledSignal s;
  s.sample_rate_hz = 100.0;
  s.samples_v.assign(1000, 0.0);
  CHECK_THROWS_AS(lockin_demodulate(s, lockin_at(2), 2.0 * k_pi * 40.0),
                  std::invalid_argument);  // 80 Hz reference vs 50 Hz Nyquist
  SampledSignal brief;
  brief.sample_rate_hz = 4000.0;
  brief.samples_v.assign(4000, 0.0);  // 1 s < 5 s integration
  CHECK_THROWS_AS(lockin_demodulate(brief, lockin_at(1), k_omega),
                  std::invalid_argument);
  LockinConfig bad = lockin_at(1);
  bad.integration_s = 0.5;  // < RC
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("demodulated spectrum matches the analytic decomposition",
          "[signal][lockin][oracle]") {
  // paper operating point
  Geometry g{k_radius, 2e-6};
  double v0 = 0.0123;
  Excitation exc{-v0 + 0.002, 0.45, k_omega};  // slightly uncompensated

  HarmonicComponents h = harmonic_components(g, k_sensor, exc, v0);
  SampledSignal s =
      synthesize_timeseries(g, k_sensor, exc, v0, 1.0, 4000.0, 16.0);

  DemodResult l1 = lockin_demodulate(s, lockin_at(1), k_omega);
  DemodResult l2 = lockin_demodulate(s, lockin_at(2), k_omega);
  CHECK(l1.amplitude_v == Approx(h.omega_amplitude_v).epsilon(2e-3));
  CHECK(l2.peak_to_peak_v == Approx(h.two_omega_pp_v).epsilon(2e-3));

  // S_2w = alpha V_AC^2 convention: L2 amplitude is half the peak-to-peak
  CHECK(l2.amplitude_v == Approx(0.5 * h.two_omega_pp_v).epsilon(2e-3));
}

TEST_CASE("synthesis + demodulation agree with the analytic components",
          "[signal][lockin][property]") {
  std::mt19937_64 gen(42);
  std::uniform_real_distribution<double> dsep(150e-9, 2e-6);
  std::uniform_real_distribution<double> dvdc(-0.03, 0.03);
  std::uniform_real_distribution<double> dvac(0.05, 0.5);
  std::uniform_real_distribution<double> dv0(-0.03, 0.03);

  for (int trial = 0; trial < 12; ++trial) {
    Geometry g{k_radius, dsep(gen)};
    double v0 = dv0(gen);
    Excitation exc{dvdc(gen), dvac(gen), k_omega};

    HarmonicComponents h = harmonic_components(g, k_sensor, exc, v0);
    SampledSignal s =
        synthesize_timeseries(g, k_sensor, exc, v0, 1.0, 4000.0, 16.0);
    DemodResult l1 = lockin_demodulate(s, lockin_at(1), k_omega);
    DemodResult l2 = lockin_demodulate(s, lockin_at(2), k_omega);

    // integration (5 s) >= 5 RC: agreement within 0.2%
    if (h.omega_amplitude_v > 1e-6)
      CHECK(l1.amplitude_v == Approx(h.omega_amplitude_v).epsilon(2e-3));
    CHECK(l2.peak_to_peak_v == Approx(h.two_omega_pp_v).epsilon(2e-3));
  }
}

TEST_CASE("w channel is linear in the residual offset", "[signal][lockin]") {
  Geometry g{k_radius, 800e-9};
  double v0 = 0.011;
  for (double offset : {4e-3, 1e-3}) {
    Excitation exc{-v0 + offset, 0.3, k_omega};
    Excitation exc_half{-v0 + 0.5 * offset, 0.3, k_omega};
    SampledSignal s1 =
        synthesize_timeseries(g, k_sensor, exc, v0, 1.0, 4000.0, 16.0);
    SampledSignal s2 =
        synthesize_timeseries(g, k_sensor, exc_half, v0, 1.0, 4000.0, 16.0);
    double a1 = lockin_demodulate(s1, lockin_at(1), k_omega).amplitude_v;
    double a2 = lockin_demodulate(s2, lockin_at(1), k_omega).amplitude_v;
    CHECK(a2 == Approx(0.5 * a1).epsilon(5e-3));
  }
}
