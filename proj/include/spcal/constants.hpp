#pragma once

namespace spcal {

// CODATA 2018 values, SI units.
inline constexpr double k_vacuum_permittivity = 8.8541878128e-12;  // F/m
inline constexpr double k_hbar = 1.054571817e-34;                  // J s
inline constexpr double k_speed_of_light = 299792458.0;            // m/s
inline constexpr double k_pi = 3.141592653589793238462643383279502884;

}  // namespace spcal
