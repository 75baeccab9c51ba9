#pragma once

#include <numbers>

namespace pixeltrap::constants {

// SI, CODATA 2018 (exact where the SI fixes them).
inline constexpr double pi = std::numbers::pi;
inline constexpr double epsilon0 = 8.8541878128e-12;      // F/m
inline constexpr double elementary_charge = 1.602176634e-19;  // C
inline constexpr double atomic_mass_unit = 1.66053906660e-27;  // kg
inline constexpr double electron_mass = 9.1093837015e-31;     // kg
inline constexpr double boltzmann = 1.380649e-23;             // J/K
inline constexpr double hbar = 1.054571817e-34;               // J s
inline constexpr double bohr_magneton = 9.2740100783e-24;     // J/T

/// 1/(4 pi eps0), the Coulomb constant in V m / C.
inline constexpr double coulomb = 1.0 / (4.0 * pi * epsilon0);

}  // namespace pixeltrap::constants
