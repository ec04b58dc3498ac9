#pragma once

#include <cmath>
#include <limits>

namespace gslight {

/// Largest finite IEEE binary16 value.
inline constexpr double kHalfMax = 65504.0;

/// Rounds to the nearest binary16 value (ties to even) and returns it widened
/// back to double. Values that round above kHalfMax become ±inf, matching
/// hardware fp16 overflow.
inline double round_to_half(double x) {
  if (!std::isfinite(x) || x == 0.0) return x;
  const double mag = std::abs(x);
  constexpr double kMinNormal = 6.103515625e-05;  // 2^-14
  double q;
  if (mag < kMinNormal) {
    constexpr double kSubnormalUlp = 5.9604644775390625e-08;  // 2^-24
    q = std::nearbyint(mag / kSubnormalUlp) * kSubnormalUlp;
  } else {
    int exp = 0;
    std::frexp(mag, &exp);  // mag = m * 2^exp, m in [0.5, 1)
    const double ulp = std::ldexp(1.0, exp - 11);
    q = std::nearbyint(mag / ulp) * ulp;
  }
  if (q > kHalfMax) q = std::numeric_limits<double>::infinity();
  return std::copysign(q, x);
}

/// Arithmetic where every result passes through binary16.
struct HalfOps {
  static double value(double x) { return round_to_half(x); }
  static double mul(double a, double b) { return round_to_half(a * b); }
  static double add(double a, double b) { return round_to_half(a + b); }
};

/// Plain double arithmetic with the same interface as HalfOps.
struct FullOps {
  static double value(double x) { return x; }
  static double mul(double a, double b) { return a * b; }
  static double add(double a, double b) { return a + b; }
};

}  // namespace gslight
