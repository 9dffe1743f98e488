#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "spcal/analysis.hpp"
#include "spcal/virtual_rig.hpp"

using namespace spcal;
using Catch::Approx;

namespace {

RigConfig quiet_config() {
  RigConfig cfg;
  cfg.noise.s2w_relative = 0.0;
  cfg.noise.v_dc_volts = 0.0;
  cfg.drift.d0_m_per_min = 0.0;
  cfg.drift.kappa_rel_per_min = 0.0;
  cfg.drift.v_dc_walk_bound_v_per_run = 0.0;
  cfg.contaminant_enabled = false;
  return cfg;
}

double kappa0(const RigConfig& cfg) {
  return cfg.gain_v_per_m * k_vacuum_permittivity * k_pi *
         cfg.sphere_radius_m / cfg.spring_n_per_m;
}

}  // namespace

TEST_CASE("contact potential model", "[rig]") {
  // a = -4.4 mV, b = 4.3 mV, d = 275 nm with base-10 logs: the compensating
  // V_DC = a log10(d/nm) + b = -6.433 mV, so V0 is its negative
  ContactPotentialModel m{-4.4e-3, 4.3e-3, LogBase::base10};
  double v0 = contact_potential(275e-9, m);
  CHECK(-v0 == Approx(-6.433063853e-3).epsilon(1e-8));

  // a = 0: constant V0 = -b
  ContactPotentialModel flat{0.0, 4.3e-3, LogBase::natural};
  CHECK(contact_potential(100e-9, flat) == Approx(-4.3e-3));
  CHECK(contact_potential(2e-6, flat) == Approx(-4.3e-3));

  // default model: |V_DC| < 50 mV over the full range, for both bases
  for (LogBase base : {LogBase::natural, LogBase::base10}) {
    ContactPotentialModel dflt;
    dflt.base = base;
    for (double d = 50e-9; d <= 2.1e-6; d *= 1.3) {
      double vdc = -contact_potential(d, dflt);
      CHECK(std::abs(vdc) < 50e-3);
    }
  }

  CHECK_THROWS_AS(contact_potential(0.0, m), std::invalid_argument);
}

TEST_CASE("kelvin feedback settling", "[rig]") {
  // V0 = 50 mV at G = 1e3 leaves a residual just below 50 uV
  KelvinResult r = kelvin_settle(50e-3, 1e3);
  CHECK(r.residual_v == Approx(4.995004995e-5).epsilon(1e-10));
  CHECK(r.residual_v < 50e-6);
  CHECK(r.v_dc_v + 50e-3 == Approx(r.residual_v).margin(1e-18));

  // V0 = 10 mV at G = 1e4
  CHECK(kelvin_settle(10e-3, 1e4).residual_v == Approx(9.9990001e-7).epsilon(1e-10));

  // infinite-gain limit
  CHECK(std::abs(kelvin_settle(0.04, 1e12).residual_v) < 1e-13);

  CHECK_THROWS_AS(kelvin_settle(0.01, 0.5), std::invalid_argument);
}

TEST_CASE("near-contact contaminant magnitudes", "[rig]") {
  // R = 100 um, k = 0.9 N/m: 0.3 nm of bending at 100 nm, negligible at 1 um
  CHECK(near_contact_contaminant(100e-9, 100e-6, 0.9) ==
        Approx(3.0255300559e-10).epsilon(1e-9));
  CHECK(near_contact_contaminant(1e-6, 100e-6, 0.9) ==
        Approx(3.0255300559e-13).epsilon(1e-9));

  RigConfig cfg = quiet_config();
  cfg.contaminant_enabled = false;
  RunDataset run = execute_run(cfg);
  for (const auto& rec : run.records)
    CHECK(rec.d_true_m == cfg.d0_m - rec.d_pz_m);  // toggle off: exact identity

  cfg.contaminant_enabled = true;
  RunDataset bent = execute_run(cfg);
  for (std::size_t i = 0; i < bent.records.size(); ++i) {
    double gap = cfg.d0_m - bent.records[i].d_pz_m;
    CHECK(bent.records[i].d_true_m < gap);
    double defl = near_contact_contaminant(bent.records[i].d_true_m,
                                           cfg.sphere_radius_m,
                                           cfg.spring_n_per_m);
    CHECK(bent.records[i].d_true_m == Approx(gap - defl).epsilon(1e-12));
  }
}

TEST_CASE("scheduler hits the setpoint exactly on noiseless 1/d data",
          "[rig][scheduler]") {
  RigConfig cfg = quiet_config();
  RunDataset run = execute_run(cfg);
  REQUIRE(run.records.size() == cfg.schedule.d_pz_m.size());

  // first two points use the configured initial drive
  CHECK(run.records[0].v_ac_v == cfg.v_ac_initial_v);
  CHECK(run.records[1].v_ac_v == cfg.v_ac_initial_v);

  // 1/alpha is exactly linear in d_pz, so every scheduled point lands on the
  // setpoint
  for (std::size_t i = 2; i < run.records.size(); ++i)
    CHECK(run.records[i].s2w_v == Approx(cfg.s2w_setpoint_v).epsilon(1e-10));
}

TEST_CASE("scheduler flags extrapolation past apparent contact",
          "[rig][scheduler]") {
  // fabricate a run whose 1/alpha line hits zero before the next extension
  std::vector<RunRecord> history;
  for (int i = 0; i < 4; ++i) {
    RunRecord r;
    r.d_pz_m = 1e-6 + 0.1e-6 * i;
    double inv_alpha = 1.0 - 0.3 * i;  // zero crossing at d_pz ~ 1.33 um
    r.v_ac_v = 1.0;
    r.s2w_v = 1.0 / inv_alpha;
    history.push_back(r);
  }
  ScheduledDrive d = schedule_vac(history, 1.5e-6, 3e-3, 0.01, 2.0, 0.446);
  CHECK(d.clamped);
  CHECK(d.v_ac_v == 0.01);
}

TEST_CASE("scheduler handles a fixed-position series", "[rig][scheduler]") {
  RigConfig cfg = quiet_config();
  cfg.schedule = StageSchedule::fixed(cfg.d0_m - 150e-9, 40);
  RunDataset run = execute_run(cfg);
  for (std::size_t i = 2; i < run.records.size(); ++i)
    CHECK(run.records[i].s2w_v == Approx(cfg.s2w_setpoint_v).epsilon(1e-10));
}

TEST_CASE("scheduler tracks the setpoint within 5% under default noise",
          "[rig][scheduler]") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL}) {
    RigConfig cfg;  // default noise, contaminant off
    cfg.seed = seed;
    RunDataset run = execute_run(cfg);
    for (std::size_t i = 2; i < run.records.size(); ++i)
      CHECK(std::abs(run.records[i].s2w_v / cfg.s2w_setpoint_v - 1.0) < 0.05);
  }
}

TEST_CASE("noiseless PFA records obey the generative identity", "[rig]") {
  RigConfig cfg = quiet_config();
  RunDataset run = execute_run(cfg);
  double k0 = kappa0(cfg);
  for (const auto& rec : run.records) {
    double alpha = rec.s2w_v / (rec.v_ac_v * rec.v_ac_v);
    CHECK(alpha == Approx(k0 / (cfg.d0_m - rec.d_pz_m)).epsilon(1e-12));
  }
}

TEST_CASE("identical seeds give bit-identical datasets", "[rig]") {
  RigConfig cfg;  // default noise on
  cfg.seed = 777;
  Campaign a = execute_campaign(cfg, 3);
  Campaign b = execute_campaign(cfg, 3);
  REQUIRE(a.runs.size() == b.runs.size());
  for (std::size_t r = 0; r < a.runs.size(); ++r) {
    REQUIRE(a.runs[r].records.size() == b.runs[r].records.size());
    for (std::size_t i = 0; i < a.runs[r].records.size(); ++i) {
      const RunRecord& x = a.runs[r].records[i];
      const RunRecord& y = b.runs[r].records[i];
      CHECK(x.s2w_v == y.s2w_v);
      CHECK(x.v_ac_v == y.v_ac_v);
      CHECK(x.v_dc_v == y.v_dc_v);
      CHECK(x.t_min == y.t_min);
      CHECK(x.d_true_m == y.d_true_m);
    }
  }
  RigConfig other = cfg;
  other.seed = 778;
  Campaign c = execute_campaign(other, 3);
  CHECK(c.runs[0].records[5].s2w_v != a.runs[0].records[5].s2w_v);
}

TEST_CASE("default noise produces the configured relative scatter", "[rig]") {
  RigConfig cfg;  // 0.56% on S_2w
  cfg.seed = 99;
  Campaign campaign = execute_campaign(cfg, 30);
  double k0 = kappa0(cfg);
  std::vector<double> rel;
  for (std::size_t r = 0; r < campaign.runs.size(); ++r) {
    for (const auto& rec : campaign.runs[r].records) {
      double kappa_t = k0 * (1.0 + cfg.drift.kappa_rel_per_min * rec.t_min);
      double truth = kappa_t / rec.d_true_m;
      rel.push_back(rec.alpha() / truth - 1.0);
    }
  }
  CHECK(mean_of(rel) == Approx(0.0).margin(5e-4));
  CHECK(sample_std(rel) == Approx(0.0056).epsilon(0.10));
}

TEST_CASE("campaign drift bookkeeping", "[rig]") {
  RigConfig cfg;
  cfg.seed = 5;
  const int n_runs = 184;
  Campaign campaign = execute_campaign(cfg, n_runs);

  // d0(t) affine, kappa drift ~1.05% over 1050 minutes, monotone time
  double span_min = cfg.run_minutes * n_runs;
  CHECK(span_min == Approx(1050.1).epsilon(1e-3));
  for (int r = 0; r < n_runs; ++r) {
    double t = r * cfg.run_minutes;
    CHECK(campaign.d0_start_m[r] ==
          Approx(cfg.d0_m + cfg.drift.d0_m_per_min * t).margin(1e-18));
    CHECK(campaign.kappa_factor_start[r] ==
          Approx(1.0 + cfg.drift.kappa_rel_per_min * t).margin(1e-15));
  }
  double total_d0_drift = campaign.d0_start_m.back() - campaign.d0_start_m.front();
  CHECK(total_d0_drift == Approx(40e-12 * (n_runs - 1) * cfg.run_minutes).epsilon(1e-12));
  CHECK(total_d0_drift > 40e-9);
  CHECK(total_d0_drift < 50e-9);
  double kappa_total =
      campaign.kappa_factor_start.back() / campaign.kappa_factor_start.front() - 1.0;
  CHECK(kappa_total == Approx(0.0104).epsilon(0.01));

  double prev_t = -1.0;
  for (const auto& run : campaign.runs)
    for (const auto& rec : run.records) {
      CHECK(rec.t_min > prev_t);
      prev_t = rec.t_min;
    }

  // zero drift: same step in different runs is identical without noise
  RigConfig still = quiet_config();
  Campaign frozen = execute_campaign(still, 4);
  for (std::size_t r = 1; r < frozen.runs.size(); ++r)
    for (std::size_t i = 0; i < frozen.runs[r].records.size(); ++i)
      CHECK(frozen.runs[r].records[i].s2w_v ==
            Approx(frozen.runs[0].records[i].s2w_v).epsilon(1e-14));
}

TEST_CASE("kelvin bound holds for every record", "[rig][property]") {
  RandomStream shuffle(2024);
  for (int trial = 0; trial < 25; ++trial) {
    RigConfig cfg;
    cfg.seed = 1000 + static_cast<std::uint64_t>(trial);
    cfg.sphere_radius_m = shuffle.uniform(20e-6, 300e-6);
    cfg.spring_n_per_m = shuffle.uniform(0.2, 5.0);
    cfg.contact.a_v = shuffle.uniform(-8e-3, 8e-3);
    cfg.contact.b_v = shuffle.uniform(-20e-3, 20e-3);
    cfg.contact.base = trial % 2 ? LogBase::natural : LogBase::base10;
    cfg.loop_gain.g_ref = shuffle.uniform(1e3, 2e4);
    cfg.loop_gain.exponent = shuffle.uniform(0.0, 1.0);
    cfg.noise.v_dc_volts = shuffle.uniform(0.0, 1e-3);
    cfg.contaminant_enabled = trial % 3 == 0;
    RunDataset run;
    try {
      run = execute_run(cfg, trial);
    } catch (const ContactError&) {
      continue;  // soft cantilever snapped to contact: nothing recorded
    }
    for (const auto& rec : run.records) {
      double residual = rec.v_dc_v + rec.v0_true_v;
      double bound = std::abs(rec.v0_true_v) / (rec.loop_gain + 1.0);
      CHECK(std::abs(residual) <= bound + 1e-15 * std::abs(rec.v0_true_v) + 1e-21);
    }
  }
}

TEST_CASE("V_DC walk steps stay within the per-run bound", "[rig]") {
  // isolate the walk: no patch noise, no d0/kappa drift
  RigConfig cfg = quiet_config();
  cfg.drift.v_dc_walk_bound_v_per_run = 40e-6;
  cfg.seed = 321;
  Campaign campaign = execute_campaign(cfg, 30);
  bool moved = false;
  for (std::size_t r = 1; r < campaign.runs.size(); ++r) {
    for (std::size_t j = 0; j < campaign.runs[r].records.size(); j += 7) {
      const RunRecord& now = campaign.runs[r].records[j];
      const RunRecord& before = campaign.runs[r - 1].records[j];
      // the loop passes -G/(G+1) of the walk step through to V_DC
      double step = std::abs(now.v_dc_v - before.v_dc_v);
      CHECK(step <= 40e-6 * (1.0 + 1e-12));
      if (step > 1e-6) moved = true;
    }
  }
  CHECK(moved);
}

TEST_CASE("contact aborts the run", "[rig]") {
  RigConfig cfg = quiet_config();
  cfg.drift.d0_m_per_min = -2e-9;  // plate creeps in; late runs touch
  CHECK_THROWS_AS(execute_campaign(cfg, 40), ContactError);

  try {
    execute_campaign(cfg, 40);
  } catch (const ContactError& e) {
    CHECK(e.run_id() > 0);
  }
}

TEST_CASE("config invariants are enforced", "[rig]") {
  RigConfig cfg;
  cfg.d0_m = 1e-6;  // below the max stage extension
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  RigConfig bounds;
  bounds.v_ac_min_v = 0.5;
  bounds.v_ac_max_v = 0.1;
  CHECK_THROWS_AS(bounds.validate(), ConfigError);

  RigConfig fast;
  fast.drive_hz = 1000.0;  // violates quasi-static against 1.65 kHz
  CHECK_THROWS_AS(fast.validate(), ConfigError);

  RigConfig setp;
  setp.s2w_setpoint_v = 0.0;
  CHECK_THROWS_AS(setp.validate(), ConfigError);
}

TEST_CASE("round trip: noiseless simulation is recovered exactly",
          "[rig][analysis]") {
  RigConfig cfg = quiet_config();
  RunDataset run = execute_run(cfg);
  double k0 = kappa0(cfg);

  FitResult lin = fit_linear_inverse(run.records, Mask::all(), 0.0056);
  CHECK(lin.kappa == Approx(k0).epsilon(1e-10));
  CHECK(lin.d0_m == Approx(cfg.d0_m).epsilon(1e-10));
  CHECK(lin.chi2_red < 1e-15);

  FitResult free_p = fit_power_law(run.records, Mask::all(), 0.0056,
                                   PMode::free_exponent());
  CHECK(free_p.p == Approx(1.0).margin(1e-7));
  CHECK(free_p.kappa == Approx(k0).epsilon(1e-6));
  CHECK(free_p.d0_m == Approx(cfg.d0_m).epsilon(1e-7));
}

TEST_CASE("exact-series generator shifts alpha below the PFA value", "[rig]") {
  RigConfig cfg = quiet_config();
  cfg.force_model.variant = ForceModelKind::exact_series;
  cfg.force_model.series_rel_tolerance = 1e-9;
  RunDataset run = execute_run(cfg);
  double k0 = kappa0(cfg);
  for (std::size_t i = 0; i < run.records.size(); i += 9) {
    const auto& rec = run.records[i];
    double ratio = rec.alpha() / (k0 / rec.d_true_m);
    CHECK(ratio < 1.0);
    CHECK(ratio > 0.9);
  }
}
