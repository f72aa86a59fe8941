#pragma once

// Shared error types and numeric constants.

#include <cmath>
#include <stdexcept>
#include <string>

namespace kdiff {

// Thrown when an input violates a documented precondition.
class validation_error : public std::runtime_error {
 public:
  explicit validation_error(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when a numerical routine cannot produce a meaningful result
// (singular design, divergent iteration, insufficient data, ...).
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when the estimated dynamics violate the decay assumption
// (delta <= 0 or kappa_s <= 0): boundaries are undefined, tau* = infinity.
class decay_violation : public numeric_error {
 public:
  explicit decay_violation(const std::string& what) : numeric_error(what) {}
};

inline constexpr double kPi = 3.14159265358979323846;
// Euler-Mascheroni constant, needed by the K0 power series.
inline constexpr double kEulerGamma = 0.57721566490153286061;
inline constexpr double kLn10 = 2.30258509299404568402;
inline constexpr double kLn2 = 0.69314718055994530942;
// ln(10)/ln(2): the boundary-ratio constant "3.32" under 10%/50% thresholds.
inline constexpr double kRatioConst = kLn10 / kLn2;

// Magnitude floor below which log-residuals are dropped (not -inf).
inline constexpr double kLogFloor = 1e-12;

}  // namespace kdiff
