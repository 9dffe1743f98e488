#pragma once

// The measurement tuple shared by the rig, the analysis, and the file format.
// Fields marked "simulation truth" never leave the process: the record table
// on disk carries only what a real instrument would log.

#include <cmath>
#include <vector>

namespace spcal {

// Logarithm convention for the contact-potential model V_DC = a log d + b;
// the configuration records which base generated the data so fits stay
// base-consistent.
enum class LogBase { natural, base10 };

inline double apply_log(double x, LogBase base) {
  return base == LogBase::natural ? std::log(x) : std::log10(x);
}

struct RunRecord {
  int run_id = 0;
  int step = 0;
  double t_min = 0.0;       // elapsed time since campaign start, minutes
  double d_pz_m = 0.0;      // stage extension
  double v_ac_v = 0.0;      // applied drive amplitude
  double s2w_v = 0.0;       // demodulated 2w peak-to-peak signal
  double v_dc_v = 0.0;      // settled compensation voltage
  double loop_gain = 0.0;

  // simulation truth, excluded from analysis inputs and from serialization
  double d_true_m = 0.0;
  double v0_true_v = 0.0;
  bool v_ac_clamped = false;

  // curvature coefficient alpha = S_2w / V_AC^2
  double alpha() const { return s2w_v / (v_ac_v * v_ac_v); }
};

struct RunDataset {
  int run_id = 0;
  double start_min = 0.0;
  std::vector<RunRecord> records;
};

struct Campaign {
  std::vector<RunDataset> runs;
  // drifting shared state at the start of each run (simulation truth)
  std::vector<double> d0_start_m;
  std::vector<double> kappa_factor_start;
};

}  // namespace spcal
