#pragma once

#include <stdexcept>
#include <string>

namespace spcal {

// Configuration file or in-memory configuration violates the schema or an
// invariant (bad key, wrong version, nonphysical parameter).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A data file failed to parse; carries the 1-based line number.
class FormatError : public std::runtime_error {
 public:
  FormatError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Sphere touched the plate during a simulated approach (separation <= 0).
class ContactError : public std::runtime_error {
 public:
  ContactError(int run_id, int step, const std::string& what)
      : std::runtime_error(what), run_id_(run_id), step_(step) {}
  int run_id() const { return run_id_; }
  int step() const { return step_; }

 private:
  int run_id_;
  int step_;
};

// Image-charge series did not converge within the term cap; the separation is
// too small for the requested tolerance.
class SeriesConvergenceError : public std::runtime_error {
 public:
  explicit SeriesConvergenceError(const std::string& what)
      : std::runtime_error(what) {}
};

// Nonlinear fit exhausted its iteration budget or reached a nonphysical
// optimum.
class FitError : public std::runtime_error {
 public:
  explicit FitError(const std::string& what) : std::runtime_error(what) {}
};

// A mask left too few points to fit, or an error series is too short.
class DataSelectionError : public std::runtime_error {
 public:
  explicit DataSelectionError(const std::string& what)
      : std::runtime_error(what) {}
};

}  // namespace spcal
