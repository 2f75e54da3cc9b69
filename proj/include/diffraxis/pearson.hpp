#pragma once

// Pearson VII peak shape  p(t) = (1 + (t-μ)²/(a²m))^(-m),  m >= 1.
// m = 1 is a Lorentzian, m → ∞ tends to a Gaussian with standard deviation a/√2.

#include <cmath>
#include <numbers>

#include "error.hpp"

namespace diffraxis {

struct PearsonComponent {
  double gamma = 0.0;  // height above the local baseline
  double mu = 0.0;     // location (degrees)
  double m = 1.0;      // shape
  double a = 1.0;      // width (degrees)

  friend bool operator==(const PearsonComponent&, const PearsonComponent&) = default;
};

inline void validate(const PearsonComponent& c) {
  if (!std::isfinite(c.gamma) || !std::isfinite(c.mu) || !std::isfinite(c.m) || !std::isfinite(c.a))
    throw DomainError("pearson: non-finite parameter");
  if (c.m < 1.0) throw DomainError("pearson: shape m must be at least 1");
  if (!(c.a > 0.0)) throw DomainError("pearson: width a must be positive");
}

/// Unit-height shape value at t.
inline double pearson_shape(double t, double mu, double m, double a) {
  const double x = (t - mu) / a;
  return std::exp(-m * std::log1p(x * x / m));
}

inline double pearson_eval(const PearsonComponent& c, double t) {
  validate(c);
  return c.gamma * pearson_shape(t, c.mu, c.m, c.a);
}

/// Full width at half maximum: 2a·√(m(2^{1/m} − 1)).
inline double pearson_fwhm(double m, double a) { return 2.0 * a * std::sqrt(m * (std::exp2(1.0 / m) - 1.0)); }

/// Width parameter giving a requested FWHM at shape m.
inline double pearson_a_from_fwhm(double fwhm, double m) {
  return fwhm / (2.0 * std::sqrt(m * (std::exp2(1.0 / m) - 1.0)));
}

/// ∫ γ p(t) dt = γ·a·√(πm)·Γ(m − ½)/Γ(m), in counts·degrees.
inline double pearson_intensity(const PearsonComponent& c) {
  validate(c);
  const double ratio = std::exp(std::lgamma(c.m - 0.5) - std::lgamma(c.m));
  return c.gamma * c.a * std::sqrt(std::numbers::pi * c.m) * ratio;
}

struct PeakStats {
  double location = 0.0;
  double height = 0.0;
  double intensity = 0.0;
  double fwhm = 0.0;

  friend bool operator==(const PeakStats&, const PeakStats&) = default;
};

inline PeakStats peak_stats(const PearsonComponent& c) {
  validate(c);
  return {c.mu, c.gamma, pearson_intensity(c), pearson_fwhm(c.m, c.a)};
}

}  // namespace diffraxis
