#pragma once

#include <cmath>

namespace mvq {

inline constexpr double kPi = 3.14159265358979323846;

/// Fold x into (-1/2, 1/2] by subtracting the nearest integer.
/// Integer inputs map to exactly 0.0, half-integers to exactly +1/2.
inline double fold_half_unit(double x) {
  return x - std::ceil(x - 0.5);
}

/// Fold an angle into (-pi/2, pi/2] modulo pi.
inline double fold_half_pi(double theta) {
  return theta - kPi * std::ceil(theta / kPi - 0.5);
}

inline double sq(double x) { return x * x; }

}  // namespace mvq
