#pragma once

// Bragg spacing, cubic plane distances and relative lattice distortion.

#include <cmath>
#include <numbers>

#include "error.hpp"

namespace diffraxis {

struct LatticeConfig {
  double wavelength = 0.154056;  // nm, Cu Kα₁
  double a0 = 1.0118;            // nm, In₂O₃

  void validate() const {
    if (!(wavelength > 0.0) || !std::isfinite(wavelength)) throw InvalidInput("lattice: wavelength must be positive");
    if (!(a0 > 0.0) || !std::isfinite(a0)) throw InvalidInput("lattice: a0 must be positive");
  }

  friend bool operator==(const LatticeConfig&, const LatticeConfig&) = default;
};

struct MillerIndices {
  int h = 0, k = 0, l = 0;

  int norm2() const noexcept { return h * h + k * k + l * l; }

  friend bool operator==(const MillerIndices&, const MillerIndices&) = default;
};

/// d = λ / (2 sin θ), two_theta in degrees.
inline double bragg_d(double two_theta, double wavelength) {
  if (!(wavelength > 0.0)) throw InvalidInput("bragg_d: wavelength must be positive");
  if (!(two_theta > 0.0 && two_theta < 360.0)) throw DomainError("bragg_d: two_theta must lie in (0, 360) degrees");
  const double s = std::sin(0.5 * two_theta * std::numbers::pi / 180.0);
  if (!(s > 0.0)) throw DomainError("bragg_d: sin(theta) must be positive");
  return wavelength / (2.0 * s);
}

/// d_hkl = a0 / √(h² + k² + l²) for a cubic lattice.
inline double d_ideal(const MillerIndices& idx, double a0) {
  if (idx.norm2() == 0) throw InvalidInput("d_ideal: Miller indices must not all be zero");
  if (!(a0 > 0.0)) throw InvalidInput("d_ideal: a0 must be positive");
  return a0 / std::sqrt(static_cast<double>(idx.norm2()));
}

/// (d − d₀)/d₀ as a plain ratio.
inline double lattice_distortion(double two_theta, const MillerIndices& idx, const LatticeConfig& cfg) {
  cfg.validate();
  const double d0 = d_ideal(idx, cfg.a0);
  return (bragg_d(two_theta, cfg.wavelength) - d0) / d0;
}

}  // namespace diffraxis
