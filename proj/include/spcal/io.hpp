#pragma once

// File formats tying the rig to the analysis:
//   - JSON configuration with a checked schema version and unknown keys
//     rejected at every level
//   - the record table: comma-delimited text, one record per row, units in
//     the column names, >= 9 significant digits, LF line endings, rows
//     sorted by (run_id, step); '#' metadata lines carry seed and config hash
//   - atomic writes (temp file + rename) so failed commands leave nothing
//     behind
// Numbers are formatted with snprintf in the C locale; computation is SI.

#include <cerrno>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spcal/errors.hpp"
#include "spcal/records.hpp"
#include "spcal/virtual_rig.hpp"

namespace spcal {

// ---------------------------------------------------------------------------
// formatting helpers

inline std::string fmt_double(double v, int sig_digits = 12) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*e", sig_digits - 1, v);
  return buf;
}

inline std::string fmt_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

// ---------------------------------------------------------------------------
// atomic file write

inline void atomic_write_file(const std::filesystem::path& path,
                              const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string());
    out << content;
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw std::runtime_error("write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw std::runtime_error("rename failed for " + path.string());
  }
}

// ---------------------------------------------------------------------------
// config schema

inline constexpr int k_config_schema_version = 1;

struct AnalysisOptions {
  std::string mask = "keep-farthest:41";
  std::vector<std::string> p_modes = {"free", "1", "0.7"};
  double sigma_rel = 0.0056;
};

struct ConfigFile {
  RigConfig rig;
  AnalysisOptions analysis;
};

namespace io_detail {

using json = nlohmann::json;

inline void require_keys(const json& obj, const std::string& section,
                         std::initializer_list<const char*> allowed) {
  if (!obj.is_object())
    throw ConfigError("config: section '" + section + "' must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok)
      throw ConfigError("config: unknown key '" + it.key() + "' in '" +
                        section + "'");
  }
}

inline double get_num(const json& obj, const char* key, double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number())
    throw ConfigError(std::string("config: '") + key + "' must be a number");
  return obj[key].get<double>();
}

inline LogBase parse_log_base(const std::string& s) {
  if (s == "ln" || s == "natural") return LogBase::natural;
  if (s == "log10") return LogBase::base10;
  throw ConfigError("config: log base must be 'ln' or 'log10'");
}

inline const char* log_base_name(LogBase b) {
  return b == LogBase::natural ? "ln" : "log10";
}

}  // namespace io_detail

inline nlohmann::json config_to_json(const ConfigFile& cfg) {
  using nlohmann::json;
  const RigConfig& r = cfg.rig;
  json j;
  j["schema_version"] = k_config_schema_version;
  j["geometry"] = {{"sphere_radius_m", r.sphere_radius_m}};
  j["sensor"] = {{"spring_constant_n_per_m", r.spring_n_per_m},
                 {"optical_gain_v_per_m", r.gain_v_per_m},
                 {"resonance_hz", r.resonance_hz},
                 {"drive_hz", r.drive_hz}};
  j["protocol"] = {{"d0_m", r.d0_m},
                   {"s2w_setpoint_v", r.s2w_setpoint_v},
                   {"v_ac_min_v", r.v_ac_min_v},
                   {"v_ac_max_v", r.v_ac_max_v},
                   {"v_ac_initial_v", r.v_ac_initial_v},
                   {"run_minutes", r.run_minutes},
                   {"runs", r.default_runs},
                   {"stage_schedule_d_pz_m", r.schedule.d_pz_m}};
  j["contact_potential"] = {{"a_v", r.contact.a_v},
                            {"b_v", r.contact.b_v},
                            {"log_base", io_detail::log_base_name(r.contact.base)}};
  j["loop_gain"] = {{"g_ref", r.loop_gain.g_ref},
                    {"d_ref_m", r.loop_gain.d_ref_m},
                    {"exponent", r.loop_gain.exponent}};
  j["noise"] = {{"s2w_relative", r.noise.s2w_relative},
                {"v_dc_volts", r.noise.v_dc_volts}};
  j["drift"] = {{"d0_m_per_min", r.drift.d0_m_per_min},
                {"kappa_rel_per_min", r.drift.kappa_rel_per_min},
                {"v_dc_walk_bound_v_per_run", r.drift.v_dc_walk_bound_v_per_run}};
  j["contaminant"] = {{"enabled", r.contaminant_enabled}};
  j["force_model"] = {
      {"variant",
       r.force_model.variant == ForceModelKind::pfa ? "pfa" : "exact_series"},
      {"series_rel_tolerance", r.force_model.series_rel_tolerance}};
  j["p_true"] = r.p_true;
  j["seed"] = r.seed;
  j["analysis"] = {{"mask", cfg.analysis.mask},
                   {"p_modes", cfg.analysis.p_modes},
                   {"sigma_rel", cfg.analysis.sigma_rel}};
  return j;
}

inline ConfigFile config_from_json(const nlohmann::json& j) {
  using io_detail::get_num;
  using io_detail::require_keys;

  require_keys(j, "root",
               {"schema_version", "geometry", "sensor", "protocol",
                "contact_potential", "loop_gain", "noise", "drift",
                "contaminant", "force_model", "p_true", "seed", "analysis"});
  if (!j.contains("schema_version") || !j["schema_version"].is_number_integer())
    throw ConfigError("config: missing integer schema_version");
  if (j["schema_version"].get<int>() != k_config_schema_version)
    throw ConfigError("config: unsupported schema_version " +
                      j["schema_version"].dump() + " (expected " +
                      std::to_string(k_config_schema_version) + ")");

  ConfigFile cfg;  // defaults
  RigConfig& r = cfg.rig;

  if (j.contains("geometry")) {
    const auto& g = j["geometry"];
    require_keys(g, "geometry", {"sphere_radius_m"});
    r.sphere_radius_m = get_num(g, "sphere_radius_m", r.sphere_radius_m);
  }
  if (j.contains("sensor")) {
    const auto& s = j["sensor"];
    require_keys(s, "sensor",
                 {"spring_constant_n_per_m", "optical_gain_v_per_m",
                  "resonance_hz", "drive_hz"});
    r.spring_n_per_m = get_num(s, "spring_constant_n_per_m", r.spring_n_per_m);
    r.gain_v_per_m = get_num(s, "optical_gain_v_per_m", r.gain_v_per_m);
    r.resonance_hz = get_num(s, "resonance_hz", r.resonance_hz);
    r.drive_hz = get_num(s, "drive_hz", r.drive_hz);
  }
  if (j.contains("protocol")) {
    const auto& p = j["protocol"];
    require_keys(p, "protocol",
                 {"d0_m", "s2w_setpoint_v", "v_ac_min_v", "v_ac_max_v",
                  "v_ac_initial_v", "run_minutes", "runs",
                  "stage_schedule_d_pz_m", "stage_schedule_geometric",
                  "stage_schedule_fixed"});
    r.d0_m = get_num(p, "d0_m", r.d0_m);
    r.s2w_setpoint_v = get_num(p, "s2w_setpoint_v", r.s2w_setpoint_v);
    r.v_ac_min_v = get_num(p, "v_ac_min_v", r.v_ac_min_v);
    r.v_ac_max_v = get_num(p, "v_ac_max_v", r.v_ac_max_v);
    r.v_ac_initial_v = get_num(p, "v_ac_initial_v", r.v_ac_initial_v);
    r.run_minutes = get_num(p, "run_minutes", r.run_minutes);
    if (p.contains("runs")) {
      if (!p["runs"].is_number_integer())
        throw ConfigError("config: 'runs' must be an integer");
      r.default_runs = p["runs"].get<int>();
    }
    int schedule_specs = 0;
    if (p.contains("stage_schedule_d_pz_m")) {
      ++schedule_specs;
      if (!p["stage_schedule_d_pz_m"].is_array())
        throw ConfigError("config: stage_schedule_d_pz_m must be an array");
      r.schedule.d_pz_m =
          p["stage_schedule_d_pz_m"].get<std::vector<double>>();
    }
    if (p.contains("stage_schedule_geometric")) {
      ++schedule_specs;
      const auto& gs = p["stage_schedule_geometric"];
      require_keys(gs, "stage_schedule_geometric",
                   {"sep_min_m", "sep_max_m", "points"});
      if (!gs.contains("sep_min_m") || !gs.contains("sep_max_m") ||
          !gs.contains("points"))
        throw ConfigError(
            "config: stage_schedule_geometric needs sep_min_m, sep_max_m, points");
      try {
        r.schedule = StageSchedule::geometric(r.d0_m,
                                              gs["sep_max_m"].get<double>(),
                                              gs["sep_min_m"].get<double>(),
                                              gs["points"].get<int>());
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
      }
    }
    if (p.contains("stage_schedule_fixed")) {
      ++schedule_specs;
      const auto& fs = p["stage_schedule_fixed"];
      require_keys(fs, "stage_schedule_fixed", {"d_pz_m", "points"});
      if (!fs.contains("d_pz_m") || !fs.contains("points"))
        throw ConfigError("config: stage_schedule_fixed needs d_pz_m, points");
      try {
        r.schedule = StageSchedule::fixed(fs["d_pz_m"].get<double>(),
                                          fs["points"].get<int>());
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
      }
    }
    if (schedule_specs > 1)
      throw ConfigError("config: give at most one stage schedule form");
  }
  if (j.contains("contact_potential")) {
    const auto& c = j["contact_potential"];
    require_keys(c, "contact_potential", {"a_v", "b_v", "log_base"});
    r.contact.a_v = get_num(c, "a_v", r.contact.a_v);
    r.contact.b_v = get_num(c, "b_v", r.contact.b_v);
    if (c.contains("log_base"))
      r.contact.base =
          io_detail::parse_log_base(c["log_base"].get<std::string>());
  }
  if (j.contains("loop_gain")) {
    const auto& g = j["loop_gain"];
    require_keys(g, "loop_gain", {"g_ref", "d_ref_m", "exponent"});
    r.loop_gain.g_ref = get_num(g, "g_ref", r.loop_gain.g_ref);
    r.loop_gain.d_ref_m = get_num(g, "d_ref_m", r.loop_gain.d_ref_m);
    r.loop_gain.exponent = get_num(g, "exponent", r.loop_gain.exponent);
  }
  if (j.contains("noise")) {
    const auto& n = j["noise"];
    require_keys(n, "noise", {"s2w_relative", "v_dc_volts"});
    r.noise.s2w_relative = get_num(n, "s2w_relative", r.noise.s2w_relative);
    r.noise.v_dc_volts = get_num(n, "v_dc_volts", r.noise.v_dc_volts);
  }
  if (j.contains("drift")) {
    const auto& d = j["drift"];
    require_keys(d, "drift",
                 {"d0_m_per_min", "kappa_rel_per_min",
                  "v_dc_walk_bound_v_per_run"});
    r.drift.d0_m_per_min = get_num(d, "d0_m_per_min", r.drift.d0_m_per_min);
    r.drift.kappa_rel_per_min =
        get_num(d, "kappa_rel_per_min", r.drift.kappa_rel_per_min);
    r.drift.v_dc_walk_bound_v_per_run = get_num(
        d, "v_dc_walk_bound_v_per_run", r.drift.v_dc_walk_bound_v_per_run);
  }
  if (j.contains("contaminant")) {
    const auto& c = j["contaminant"];
    require_keys(c, "contaminant", {"enabled"});
    if (c.contains("enabled")) {
      if (!c["enabled"].is_boolean())
        throw ConfigError("config: contaminant.enabled must be a boolean");
      r.contaminant_enabled = c["enabled"].get<bool>();
    }
  }
  if (j.contains("force_model")) {
    const auto& f = j["force_model"];
    require_keys(f, "force_model", {"variant", "series_rel_tolerance"});
    if (f.contains("variant")) {
      std::string v = f["variant"].get<std::string>();
      if (v == "pfa")
        r.force_model.variant = ForceModelKind::pfa;
      else if (v == "exact_series")
        r.force_model.variant = ForceModelKind::exact_series;
      else
        throw ConfigError("config: force_model.variant must be 'pfa' or 'exact_series'");
    }
    r.force_model.series_rel_tolerance = get_num(
        f, "series_rel_tolerance", r.force_model.series_rel_tolerance);
  }
  r.p_true = get_num(j, "p_true", r.p_true);
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer())
      throw ConfigError("config: seed must be an integer");
    r.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("analysis")) {
    const auto& a = j["analysis"];
    require_keys(a, "analysis", {"mask", "p_modes", "sigma_rel"});
    if (a.contains("mask")) cfg.analysis.mask = a["mask"].get<std::string>();
    if (a.contains("p_modes"))
      cfg.analysis.p_modes = a["p_modes"].get<std::vector<std::string>>();
    cfg.analysis.sigma_rel = get_num(a, "sigma_rel", cfg.analysis.sigma_rel);
  }

  try {
    r.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!(cfg.analysis.sigma_rel > 0.0))
    throw ConfigError("config: analysis.sigma_rel must be positive");
  return cfg;
}

inline ConfigFile load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse error in " + path.string() + ": " +
                      e.what());
  }
  return config_from_json(j);
}

inline void save_config(const std::filesystem::path& path,
                        const ConfigFile& cfg) {
  atomic_write_file(path, config_to_json(cfg).dump(2) + "\n");
}

// FNV-1a over the canonical (sorted-key) JSON dump; embedded in every output
// so tables are traceable to exact parameters.
inline std::string config_hash(const ConfigFile& cfg) {
  std::string dump = config_to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

// ---------------------------------------------------------------------------
// record table

struct TableMetadata {
  std::uint64_t seed = 0;
  std::string config_hash;
  int schema = 1;
  int runs = 0;
  double span_minutes = 0.0;
};

inline constexpr const char* k_record_header =
    "run_id,step,t_min,d_pz_nm,v_ac_mV,s_2w_uV,v_dc_mV,loop_gain";

inline std::string serialize_records(const std::vector<RunDataset>& runs,
                                     const TableMetadata& meta) {
  std::string out;
  out += "# spcal record table\n";
  out += "# schema: " + std::to_string(meta.schema) + "\n";
  out += "# seed: " + std::to_string(meta.seed) + "\n";
  out += "# config_hash: " + meta.config_hash + "\n";
  out += "# runs: " + std::to_string(meta.runs) + "\n";
  out += "# span_minutes: " + fmt_double(meta.span_minutes) + "\n";
  out += std::string(k_record_header) + "\n";
  for (const auto& run : runs) {
    for (const auto& r : run.records) {
      out += std::to_string(r.run_id);
      out += ',';
      out += std::to_string(r.step);
      out += ',';
      out += fmt_double(r.t_min);
      out += ',';
      out += fmt_double(r.d_pz_m * 1e9);
      out += ',';
      out += fmt_double(r.v_ac_v * 1e3);
      out += ',';
      out += fmt_double(r.s2w_v * 1e6);
      out += ',';
      out += fmt_double(r.v_dc_v * 1e3);
      out += ',';
      out += fmt_double(r.loop_gain);
      out += '\n';
    }
  }
  return out;
}

inline void write_records(const std::filesystem::path& path,
                          const std::vector<RunDataset>& runs,
                          const TableMetadata& meta) {
  atomic_write_file(path, serialize_records(runs, meta));
}

struct RecordFile {
  std::vector<RunDataset> runs;
  TableMetadata meta;
};

namespace io_detail {

inline double parse_field(const std::string& field, std::size_t line_no,
                          const char* name) {
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(field.c_str(), &end);
  if (end == field.c_str() || *end != '\0' || errno == ERANGE)
    throw FormatError(line_no, std::string("bad numeric field '") + field +
                                   "' for " + name);
  return v;
}

}  // namespace io_detail

inline RecordFile parse_records(std::istream& in) {
  RecordFile out;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  int last_run = -1, last_step = -1;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ls(line.substr(1));
      std::string key;
      ls >> key;
      if (key == "schema:") ls >> out.meta.schema;
      else if (key == "seed:") ls >> out.meta.seed;
      else if (key == "config_hash:") ls >> out.meta.config_hash;
      else if (key == "runs:") ls >> out.meta.runs;
      else if (key == "span_minutes:") ls >> out.meta.span_minutes;
      continue;
    }
    if (!header_seen) {
      if (line != k_record_header)
        throw FormatError(line_no, "unexpected header row '" + line + "'");
      header_seen = true;
      continue;
    }
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t comma = line.find(',', start);
      fields.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (fields.size() != 8)
      throw FormatError(line_no, "expected 8 fields, found " +
                                     std::to_string(fields.size()));
    RunRecord r;
    r.run_id = static_cast<int>(
        io_detail::parse_field(fields[0], line_no, "run_id"));
    r.step =
        static_cast<int>(io_detail::parse_field(fields[1], line_no, "step"));
    r.t_min = io_detail::parse_field(fields[2], line_no, "t_min");
    r.d_pz_m = io_detail::parse_field(fields[3], line_no, "d_pz_nm") * 1e-9;
    r.v_ac_v = io_detail::parse_field(fields[4], line_no, "v_ac_mV") * 1e-3;
    r.s2w_v = io_detail::parse_field(fields[5], line_no, "s_2w_uV") * 1e-6;
    r.v_dc_v = io_detail::parse_field(fields[6], line_no, "v_dc_mV") * 1e-3;
    r.loop_gain = io_detail::parse_field(fields[7], line_no, "loop_gain");

    if (r.run_id < last_run ||
        (r.run_id == last_run && r.step <= last_step))
      throw FormatError(line_no, "rows not sorted by (run_id, step)");
    if (r.run_id != last_run) {
      out.runs.emplace_back();
      out.runs.back().run_id = r.run_id;
      out.runs.back().start_min = r.t_min;
    }
    last_run = r.run_id;
    last_step = r.step;
    out.runs.back().records.push_back(r);
  }
  if (!header_seen) throw FormatError(line_no, "missing header row");
  if (out.runs.empty()) throw FormatError(line_no, "no data rows");
  return out;
}

inline RecordFile read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open records file " + path.string());
  return parse_records(in);
}

}  // namespace spcal
