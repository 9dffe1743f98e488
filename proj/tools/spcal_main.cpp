// spcal: simulate a sphere-plate electrostatic calibration rig and run the
// full analysis pipeline on the recorded data.
//
// Subcommands:
//   default-config  write the built-in configuration as JSON
//   simulate        run the virtual rig, write a record table
//   analyze         fit recorded runs, write a report with figure tables
//   pfa-oracle      residual curve left by fitting the 1/d law to exact data
//   error-budget    relative-error estimate from a fixed-position series
//
// Exit codes: 0 ok, 1 usage or internal error, 2 config/format violation,
// 3 contact during simulation, 4 empty selection or too few samples,
// 5 series convergence failure.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spcal/analysis.hpp"
#include "spcal/io.hpp"
#include "spcal/virtual_rig.hpp"

namespace {

using namespace spcal;

constexpr const char* k_seed_env = "SPCAL_SEED";

std::optional<std::uint64_t> seed_from_env() {
  const char* s = std::getenv(k_seed_env);
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  unsigned long long v = std::strtoull(s, &end, 10);
  if (end == s || *end != '\0')
    throw ConfigError(std::string(k_seed_env) + " is not an integer: " + s);
  return static_cast<std::uint64_t>(v);
}

Mask parse_mask(const std::string& spec) {
  try {
    if (spec == "all") return Mask::all();
    auto colon = spec.find(':');
    std::string kind = spec.substr(0, colon);
    std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
    if (kind == "keep-farthest") return Mask::keep_farthest(std::stoi(arg));
    if (kind == "min-sep-nm") return Mask::exclude_below(std::stod(arg) * 1e-9);
    if (kind == "indices") {
      std::vector<int> idx;
      std::istringstream ss(arg);
      std::string tok;
      while (std::getline(ss, tok, ',')) idx.push_back(std::stoi(tok));
      return Mask::explicit_indices(std::move(idx));
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("bad mask argument in '" + spec + "'");
  }
  throw ConfigError("unknown mask rule '" + spec +
                    "' (use all, keep-farthest:K, min-sep-nm:X, indices:i,j)");
}

std::vector<PMode> parse_p_modes(const std::vector<std::string>& specs) {
  std::vector<PMode> modes;
  for (const auto& s : specs) {
    if (s == "free") {
      modes.push_back(PMode::free_exponent());
    } else {
      try {
        modes.push_back(PMode::fixed(std::stod(s)));
      } catch (const std::exception&) {
        throw ConfigError("bad p-mode '" + s + "' (use free or an exponent)");
      }
    }
  }
  if (modes.empty()) throw ConfigError("no p-modes requested");
  return modes;
}

std::string p_mode_name(const PMode& m) {
  if (m.free) return "free";
  std::ostringstream os;
  os << "p=" << m.fixed_p;
  return os.str();
}

// ---------------------------------------------------------------------------

int cmd_default_config(const std::string& out_path) {
  ConfigFile cfg;
  if (out_path.empty())
    std::cout << config_to_json(cfg).dump(2) << "\n";
  else
    save_config(out_path, cfg);
  return 0;
}

int cmd_simulate(const std::string& config_path, const std::string& out_path,
                 int runs_override, std::int64_t seed_override) {
  ConfigFile cfg = load_config(config_path);
  if (runs_override > 0) cfg.rig.default_runs = runs_override;
  if (seed_override >= 0)
    cfg.rig.seed = static_cast<std::uint64_t>(seed_override);
  else if (auto env = seed_from_env())
    cfg.rig.seed = *env;
  cfg.rig.validate();

  Campaign campaign = execute_campaign(cfg.rig, cfg.rig.default_runs);

  TableMetadata meta;
  meta.seed = cfg.rig.seed;
  meta.config_hash = config_hash(cfg);
  meta.runs = static_cast<int>(campaign.runs.size());
  meta.span_minutes = cfg.rig.run_minutes * meta.runs;
  write_records(out_path, campaign.runs, meta);
  std::cout << "wrote " << out_path << " (" << meta.runs << " runs, "
            << fmt_fixed(meta.span_minutes, 1) << " simulated minutes, seed "
            << meta.seed << ", config " << meta.config_hash << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct RunAnalysis {
  int run_id = 0;
  double t_min = 0.0;
  std::map<std::string, FitResult> by_mode;  // power-law fits per p-mode
  FitResult linear;                          // linearized route, masked
};

int cmd_analyze(const std::string& records_path, const std::string& report_path,
                const std::string& mask_spec,
                const std::vector<std::string>& p_mode_specs, double sigma_rel,
                double vdc_sigma_v, int fig_run, const std::string& log_base_s) {
  RecordFile rf = read_records(records_path);
  Mask mask = parse_mask(mask_spec);
  std::vector<PMode> modes = parse_p_modes(p_mode_specs);
  LogBase base = io_detail::parse_log_base(log_base_s);

  std::vector<RunAnalysis> runs;
  std::vector<RunFitPoint> linear_fits;
  for (const auto& run : rf.runs) {
    RunAnalysis ra;
    ra.run_id = run.run_id;
    ra.t_min = run.start_min;
    for (const auto& m : modes)
      ra.by_mode[p_mode_name(m)] = fit_power_law(run.records, mask, sigma_rel, m);
    ra.linear = fit_linear_inverse(run.records, mask, sigma_rel);
    linear_fits.push_back({run.run_id, run.start_min, ra.linear});
    runs.push_back(std::move(ra));
  }

  std::ostringstream out;
  out << "# spcal analysis report\n";
  out << "# schema: " << rf.meta.schema << "\n";
  out << "# seed: " << rf.meta.seed << "\n";
  out << "# config_hash: " << rf.meta.config_hash << "\n";
  out << "# records: " << records_path << "\n";
  out << "# sigma_rel: " << fmt_double(sigma_rel) << "\n";
  out << "# mask: " << mask_spec << "\n";

  out << "\n[fits]\n";
  out << "run,p_mode,n_used,kappa_v_m_p,kappa_err,d0_nm,d0_err_nm,p,p_err,"
         "chi2_red,dof\n";
  for (const auto& ra : runs) {
    for (const auto& [name, fit] : ra.by_mode) {
      out << ra.run_id << ',' << name << ',' << fit.n_used << ','
          << fmt_double(fit.kappa) << ',' << fmt_double(fit.kappa_err) << ','
          << fmt_double(fit.d0_m * 1e9) << ','
          << fmt_double(fit.d0_err_m * 1e9) << ',' << fmt_double(fit.p) << ','
          << fmt_double(fit.p_err) << ',' << fmt_double(fit.chi2_red) << ','
          << fit.dof << '\n';
    }
  }

  if (runs.size() >= 2) {
    CampaignStatistics st = campaign_statistics(linear_fits);
    out << "\n[campaign]  (linearized 1/alpha fits, masked)\n";
    out << "runs " << runs.size() << "\n";
    out << "chi2_mean_all " << fmt_double(st.chi2_mean_all, 6) << "\n";
    out << "chi2_std_all " << fmt_double(st.chi2_std_all, 6) << "\n";
    out << "chi2_mean " << fmt_double(st.chi2_mean, 6) << "\n";
    out << "chi2_std " << fmt_double(st.chi2_std, 6) << "\n";
    out << "outliers";
    if (st.outlier_runs.empty()) out << " none";
    for (int r : st.outlier_runs) out << " run=" << r;
    out << "\n";
    out << "d0_drift_m_per_min " << fmt_double(st.d0_drift_m_per_min, 6) << "\n";
    out << "kappa_drift_rel_per_min "
        << fmt_double(st.kappa_drift_rel_per_min, 6) << "\n";
  }

  // figure tables ----------------------------------------------------------
  std::size_t fig_idx = 0;
  if (fig_run >= 0) {
    for (std::size_t i = 0; i < runs.size(); ++i)
      if (runs[i].run_id == fig_run) fig_idx = i;
  } else {
    fig_idx = runs.size() / 2;
  }
  const RunDataset& fig_ds = rf.runs[fig_idx];
  const RunAnalysis& fig_ra = runs[fig_idx];

  out << "\n[fig2]  alpha vs stage extension, run " << fig_ra.run_id << "\n";
  out << "d_pz_nm,alpha_v_per_v2";
  for (const auto& m : modes) out << ",fit_" << p_mode_name(m);
  out << ",used\n";
  {
    MaskedRecords masked = resolve_mask(fig_ds.records, mask, sigma_rel);
    for (const auto& rec : fig_ds.records) {
      out << fmt_double(rec.d_pz_m * 1e9) << ',' << fmt_double(rec.alpha());
      for (const auto& m : modes) {
        const FitResult& fit = fig_ra.by_mode.at(p_mode_name(m));
        double model =
            fit.kappa / std::pow(fit.d0_m - rec.d_pz_m, fit.p);
        out << ',' << fmt_double(model);
      }
      bool used = false;
      for (const auto& kept : masked.records)
        if (kept.step == rec.step) used = true;
      out << ',' << (used ? 1 : 0) << '\n';
    }
  }

  out << "\n[fig3]  standardized residuals of fixed-p=1 fits, all runs\n";
  {
    std::vector<double> z;
    for (const auto& ra : runs)
      for (double r : ra.linear.rel_residuals) z.push_back(r / sigma_rel);
    out << "n " << z.size() << "\n";
    out << "mean " << fmt_double(mean_of(z), 6) << "\n";
    out << "std " << fmt_double(sample_std(z), 6) << "\n";
    if (z.size() >= 50) {
      Histogram h = make_histogram(
          z, std::clamp(static_cast<int>(std::lround(std::sqrt(
                 static_cast<double>(z.size())))), 10, 80));
      out << "bin_center,count\n";
      for (std::size_t i = 0; i < h.counts.size(); ++i)
        out << fmt_double(h.center(i), 6) << ',' << h.counts[i] << '\n';
    }
  }

  out << "\n[fig4]  relative residuals vs separation, fixed-p=1 fits\n";
  out << "d_nm,rel_residual\n";
  {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const FitResult& fit = runs[i].linear;
      MaskedRecords masked = resolve_mask(rf.runs[i].records, mask, sigma_rel);
      for (std::size_t jj = 0; jj < masked.records.size(); ++jj) {
        double d = fit.d0_m - masked.records[jj].d_pz_m;
        pts.emplace_back(d, fit.rel_residuals[jj]);
      }
    }
    std::sort(pts.begin(), pts.end());
    for (const auto& [d, r] : pts)
      out << fmt_double(d * 1e9) << ',' << fmt_double(r, 6) << '\n';
  }

  out << "\n[fig5]  compensation voltage vs separation, run " << fig_ra.run_id
      << "\n";
  {
    // error bars: cross-run std of V_DC at each step when available
    std::size_t n_steps = fig_ds.records.size();
    std::vector<double> sig(n_steps, vdc_sigma_v);
    bool uniform = true;
    for (const auto& run : rf.runs)
      if (run.records.size() != n_steps) uniform = false;
    if (uniform && rf.runs.size() >= 3) {
      for (std::size_t jstep = 0; jstep < n_steps; ++jstep) {
        std::vector<double> v;
        v.reserve(rf.runs.size());
        for (const auto& run : rf.runs) v.push_back(run.records[jstep].v_dc_v);
        sig[jstep] = sample_std(v);
        if (!(sig[jstep] > 0.0)) sig[jstep] = vdc_sigma_v > 0.0 ? vdc_sigma_v : 1e-9;
      }
    }
    std::vector<double> d(n_steps), v(n_steps);
    double d0_fit = fig_ra.linear.d0_m;
    for (std::size_t jstep = 0; jstep < n_steps; ++jstep) {
      d[jstep] = d0_fit - fig_ds.records[jstep].d_pz_m;
      v[jstep] = fig_ds.records[jstep].v_dc_v;
    }
    LogVoltageFit lf = fit_log_voltage(d, v, sig, base);
    out << "log_base " << log_base_s << "\n";
    out << "a_mV " << fmt_double(lf.a_v * 1e3, 6) << "\n";
    out << "a_err_mV " << fmt_double(lf.a_err_v * 1e3, 6) << "\n";
    out << "b_mV " << fmt_double(lf.b_v * 1e3, 6) << "\n";
    out << "b_err_mV " << fmt_double(lf.b_err_v * 1e3, 6) << "\n";
    out << "chi2_red " << fmt_double(lf.chi2_red, 6) << "\n";
    out << "d_nm,v_dc_mV,sigma_mV,fit_mV\n";
    for (std::size_t jstep = 0; jstep < n_steps; ++jstep) {
      double x = base == LogBase::natural ? std::log(d[jstep] * 1e9)
                                          : std::log10(d[jstep] * 1e9);
      out << fmt_double(d[jstep] * 1e9) << ',' << fmt_double(v[jstep] * 1e3)
          << ',' << fmt_double(sig[jstep] * 1e3) << ','
          << fmt_double((lf.a_v * x + lf.b_v) * 1e3) << '\n';
    }
  }

  atomic_write_file(report_path, out.str());
  std::cout << "wrote " << report_path << " (" << runs.size() << " runs)\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_pfa_oracle(double radius_um, double d_min_nm, double d_max_nm,
                   int points, double tol, const std::string& model,
                   const std::string& out_path) {
  if (!(d_min_nm > 0.0 && d_min_nm < d_max_nm))
    throw ConfigError("pfa-oracle: require 0 < d-min < d-max");
  ForceModelKind kind =
      model == "pfa" ? ForceModelKind::pfa : ForceModelKind::exact_series;
  if (model != "pfa" && model != "exact")
    throw ConfigError("pfa-oracle: model must be 'exact' or 'pfa'");
  PfaResidualCurve curve =
      expected_pfa_residuals(radius_um * 1e-6, d_min_nm * 1e-9, d_max_nm * 1e-9,
                             points, tol, kind);
  std::ostringstream out;
  out << "# spcal pfa residual table\n";
  out << "# model: " << model << "\n";
  out << "# radius_um: " << fmt_double(radius_um, 6) << "\n";
  out << "# points: " << points << "\n";
  out << "# series_tol: " << fmt_double(tol, 3) << "\n";
  out << "# max_abs_residual: " << fmt_double(curve.max_abs(), 6) << "\n";
  out << "d_nm,rel_residual\n";
  for (std::size_t i = 0; i < curve.separation_m.size(); ++i)
    out << fmt_double(curve.separation_m[i] * 1e9) << ','
        << fmt_double(curve.rel_residual[i], 8) << '\n';
  atomic_write_file(out_path, out.str());
  std::cout << "wrote " << out_path << " (max |residual| "
            << fmt_double(curve.max_abs(), 4) << ")\n";
  return 0;
}

int cmd_error_budget(const std::string& records_path,
                     const std::string& report_path) {
  RecordFile rf = read_records(records_path);
  // use the first run; it must be a fixed-position series
  const RunDataset& run = rf.runs.front();
  for (const auto& rec : run.records)
    if (rec.d_pz_m != run.records.front().d_pz_m)
      throw DataSelectionError(
          "error-budget: run 0 is not a fixed-position series");
  std::vector<double> alpha;
  alpha.reserve(run.records.size());
  for (const auto& rec : run.records) alpha.push_back(rec.alpha());

  ErrorEstimate est = estimate_relative_error(alpha);

  std::ostringstream out;
  out << "# spcal error budget\n";
  out << "# schema: " << rf.meta.schema << "\n";
  out << "# seed: " << rf.meta.seed << "\n";
  out << "# config_hash: " << rf.meta.config_hash << "\n";
  out << "n_samples " << alpha.size() << "\n";
  out << "sigma_rel " << fmt_double(est.sigma_rel, 6) << "\n";
  out << "sample_std " << fmt_double(est.sample_std, 6) << "\n";
  out << "smoothing_window " << est.smoothing_window << "\n";
  out << "gaussian_amplitude " << fmt_double(est.gaussian.amplitude, 6) << "\n";
  out << "gaussian_mean " << fmt_double(est.gaussian.mean, 6) << "\n";
  out << "gaussian_sigma " << fmt_double(est.gaussian.sigma, 6) << "\n";
  out << "jb_statistic " << fmt_double(est.normality.statistic, 6) << "\n";
  out << "jb_p_value " << fmt_double(est.normality.p_value, 6) << "\n";
  out << "bin_center,count\n";
  for (std::size_t i = 0; i < est.histogram.counts.size(); ++i)
    out << fmt_double(est.histogram.center(i), 6) << ','
        << est.histogram.counts[i] << '\n';
  atomic_write_file(report_path, out.str());
  std::cout << "wrote " << report_path << " (sigma_rel "
            << fmt_double(est.sigma_rel, 4) << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sphere-plate electrostatic calibration: virtual rig and analysis"};
  app.require_subcommand(1);

  // default-config
  auto* dc = app.add_subcommand("default-config",
                                "write the built-in configuration as JSON");
  std::string dc_out;
  dc->add_option("-o,--output", dc_out, "output path (stdout if omitted)");

  // simulate
  auto* sim = app.add_subcommand("simulate", "run the virtual rig");
  std::string sim_config, sim_out;
  int sim_runs = 0;
  std::int64_t sim_seed = -1;
  sim->add_option("-c,--config", sim_config, "rig configuration (JSON)")
      ->required();
  sim->add_option("-o,--output", sim_out, "record table output path")
      ->required();
  sim->add_option("--runs", sim_runs, "override the number of runs");
  sim->add_option("--seed", sim_seed,
                  "override the RNG seed (also honors SPCAL_SEED)");

  // analyze
  auto* an = app.add_subcommand("analyze", "fit recorded runs, write a report");
  std::string an_records, an_report, an_mask = "keep-farthest:41";
  std::string an_pmodes = "free,1,0.7", an_base = "ln", an_config;
  double an_sigma = 0.0056, an_vdc_sigma = 0.5e-3;
  int an_fig_run = -1;
  an->add_option("-r,--records", an_records, "record table path")->required();
  an->add_option("-o,--report", an_report, "report output path")->required();
  an->add_option("-c,--config", an_config,
                 "optional config whose analysis block sets the defaults");
  an->add_option("--mask", an_mask,
                 "mask rule: all | keep-farthest:K | min-sep-nm:X | indices:i,j");
  an->add_option("--p-modes", an_pmodes, "comma list: free and/or exponents");
  an->add_option("--sigma-rel", an_sigma, "relative error of alpha");
  an->add_option("--vdc-sigma", an_vdc_sigma,
                 "fallback V_DC sigma (V) when cross-run spread is unavailable");
  an->add_option("--fig-run", an_fig_run,
                 "run id for the figure tables (default: middle run)");
  an->add_option("--log-base", an_base, "V_DC fit log base: ln | log10");

  // pfa-oracle
  auto* po = app.add_subcommand(
      "pfa-oracle", "systematic residuals of the 1/d fit to exact-series data");
  double po_radius = 100.0, po_dmin = 100.0, po_dmax = 2000.0, po_tol = 1e-9;
  int po_points = 60;
  std::string po_model = "exact", po_out;
  po->add_option("--radius-um", po_radius, "sphere radius (um)");
  po->add_option("--d-min-nm", po_dmin, "smallest separation (nm)");
  po->add_option("--d-max-nm", po_dmax, "largest separation (nm)");
  po->add_option("--points", po_points, "grid points");
  po->add_option("--tol", po_tol, "series relative tolerance");
  po->add_option("--model", po_model, "generator: exact | pfa");
  po->add_option("-o,--output", po_out, "residual table output path")
      ->required();

  // error-budget
  auto* eb = app.add_subcommand("error-budget",
                                "relative error from a fixed-position series");
  std::string eb_records, eb_report;
  eb->add_option("-r,--records", eb_records, "record table path")->required();
  eb->add_option("-o,--report", eb_report, "report output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (dc->parsed()) return cmd_default_config(dc_out);
    if (sim->parsed()) return cmd_simulate(sim_config, sim_out, sim_runs, sim_seed);
    if (an->parsed()) {
      if (!an_config.empty()) {
        ConfigFile cfg = load_config(an_config);
        // flags still win: only take values the user left at their defaults
        if (an->count("--mask") == 0) an_mask = cfg.analysis.mask;
        if (an->count("--sigma-rel") == 0) an_sigma = cfg.analysis.sigma_rel;
        if (an->count("--p-modes") == 0) {
          an_pmodes.clear();
          for (const auto& m : cfg.analysis.p_modes) {
            if (!an_pmodes.empty()) an_pmodes += ',';
            an_pmodes += m;
          }
        }
        if (an->count("--log-base") == 0)
          an_base = io_detail::log_base_name(cfg.rig.contact.base);
      }
      std::vector<std::string> modes;
      std::istringstream ss(an_pmodes);
      std::string tok;
      while (std::getline(ss, tok, ',')) modes.push_back(tok);
      return cmd_analyze(an_records, an_report, an_mask, modes, an_sigma,
                         an_vdc_sigma, an_fig_run, an_base);
    }
    if (po->parsed())
      return cmd_pfa_oracle(po_radius, po_dmin, po_dmax, po_points, po_tol,
                            po_model, po_out);
    if (eb->parsed()) return cmd_error_budget(eb_records, eb_report);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ContactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const DataSelectionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const SeriesConvergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
