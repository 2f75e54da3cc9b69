#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"

namespace diffraxis {

/// Scale values below this are treated as degenerate and clamped by callers.
inline constexpr double kScaleFloor = 1e-8;

/// Closed index range [first, last] (0-based).
struct IndexRange {
  std::size_t first = 0;
  std::size_t last = 0;

  std::size_t size() const noexcept { return last - first + 1; }
  bool contains(std::size_t i) const noexcept { return i >= first && i <= last; }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

/// Photon counts on a strictly increasing grid of diffraction angles (degrees 2θ).
class Diffractogram {
public:
  Diffractogram() = default;

  Diffractogram(std::vector<double> angles, std::vector<double> counts)
      : angles_(std::move(angles)), counts_(std::move(counts)) {
    if (angles_.size() != counts_.size())
      throw InvalidInput("diffractogram: angle and count arrays differ in length");
    if (angles_.size() < 2)
      throw InvalidInput("diffractogram: at least two samples are required");
    for (std::size_t i = 0; i < angles_.size(); ++i) {
      if (!std::isfinite(angles_[i]) || !std::isfinite(counts_[i]))
        throw InvalidInput("diffractogram: non-finite value at index " + std::to_string(i));
      if (counts_[i] < 0.0)
        throw InvalidInput("diffractogram: negative count at index " + std::to_string(i));
      if (i > 0 && !(angles_[i] > angles_[i - 1]))
        throw InvalidInput("diffractogram: angles not strictly increasing at index " +
                           std::to_string(i));
    }
  }

  std::size_t size() const noexcept { return angles_.size(); }
  std::span<const double> angles() const noexcept { return angles_; }
  std::span<const double> counts() const noexcept { return counts_; }
  double angle(std::size_t i) const { return angles_[i]; }
  double count(std::size_t i) const { return counts_[i]; }

  friend bool operator==(const Diffractogram&, const Diffractogram&) = default;

private:
  std::vector<double> angles_;
  std::vector<double> counts_;
};

/// Per-point noise scale Σ(t_i); every entry is strictly positive.
class NoiseProfile {
public:
  NoiseProfile() = default;

  explicit NoiseProfile(std::vector<double> scale) : scale_(std::move(scale)) {
    for (std::size_t i = 0; i < scale_.size(); ++i)
      if (!(scale_[i] > 0.0) || !std::isfinite(scale_[i]))
        throw InvalidInput("noise profile: nonpositive scale at index " + std::to_string(i));
  }

  static NoiseProfile constant(std::size_t n, double sigma) {
    return NoiseProfile(std::vector<double>(n, sigma));
  }

  std::size_t size() const noexcept { return scale_.size(); }
  double operator[](std::size_t i) const { return scale_[i]; }
  std::span<const double> values() const noexcept { return scale_; }

  NoiseProfile slice(IndexRange r) const {
    return NoiseProfile(std::vector<double>(scale_.begin() + static_cast<std::ptrdiff_t>(r.first),
                                            scale_.begin() + static_cast<std::ptrdiff_t>(r.last) + 1));
  }

  friend bool operator==(const NoiseProfile&, const NoiseProfile&) = default;

private:
  std::vector<double> scale_;
};

}  // namespace diffraxis
