#pragma once

#include <cmath>

namespace onix {

/// Physical constants (CODATA 2018 exact values).
namespace constants {

inline constexpr double planck_J_s = 6.62607015e-34;
inline constexpr double speed_of_light_m_s = 299792458.0;
inline constexpr double joule_per_keV = 1.602176634e-16;

/// Wavenumber per keV: 2*pi * (1 keV in J) / (h*c) = 5.06773e9 rad/m/keV.
inline constexpr double wavenumber_per_keV =
    2.0 * 3.14159265358979323846 * joule_per_keV /
    (planck_J_s * speed_of_light_m_s);

}  // namespace constants

/// Wavenumber k = 2*pi*E/(h*c) for a photon energy in keV, in rad/m.
inline double wavenumber(double energy_keV) {
  return constants::wavenumber_per_keV * energy_keV;
}

}  // namespace onix
