#pragma once

// Deterministic random streams. Distributions are hand-rolled on top of
// std::mt19937_64 so that a (seed, run id) pair reproduces bit-identical
// values on every platform; std::normal_distribution et al. are
// implementation-defined and would break cross-toolchain replay.

#include <cmath>
#include <cstdint>
#include <random>

namespace spcal {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

// Collapse (seed, run id, purpose tag) into one engine seed.
inline std::uint64_t derive_stream_seed(std::uint64_t seed, std::uint64_t run_id,
                                        std::uint64_t tag) {
  std::uint64_t s = seed;
  std::uint64_t a = detail::splitmix64(s);
  s ^= run_id * 0xd1342543de82ef95ULL;
  std::uint64_t b = detail::splitmix64(s);
  s ^= tag * 0xaf251af3b0f025b5ULL;
  std::uint64_t c = detail::splitmix64(s);
  return a ^ (b << 1) ^ c;
}

class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  RandomStream(std::uint64_t seed, std::uint64_t run_id, std::uint64_t tag)
      : engine_(derive_stream_seed(seed, run_id, tag)) {}

  // Uniform in (0, 1].
  double uniform01() {
    return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller; second value cached.
  double gaussian() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

 private:
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace spcal
