#pragma once

// Seeded synthetic diffractograms used by the tests, the acceptance suite and
// the fixture generator tool.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "diffractogram.hpp"
#include "pearson.hpp"
#include "random.hpp"

namespace diffraxis::synthetic {

/// Kernels of the three-peak fixture (FWHM 0.25°, 0.30°, 0.35°).
inline std::vector<PearsonComponent> fixture_kernels() {
  return {{800.0, 30.4, 3.0, pearson_a_from_fwhm(0.25, 3.0)},
          {300.0, 35.4, 5.0, pearson_a_from_fwhm(0.30, 5.0)},
          {500.0, 50.8, 2.0, pearson_a_from_fwhm(0.35, 2.0)}};
}

inline double fixture_baseline(double t) { return 80.0 + 0.5 * t; }

/// Noise-free intensity of the three-peak fixture.
inline double fixture_truth(double t) {
  double f = fixture_baseline(t);
  for (const auto& c : fixture_kernels()) f += pearson_eval(c, t);
  return f;
}

/// Gaussian noise with standard deviation max(floor, √f), counts clipped at 0.
inline Diffractogram with_noise(const std::vector<double>& t, const std::vector<double>& f, double floor,
                                std::uint64_t seed) {
  Engine eng = make_engine(seed, 0);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> y(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) y[i] = std::max(0.0, f[i] + std::max(floor, std::sqrt(f[i])) * z(eng));
  return Diffractogram(t, std::move(y));
}

inline std::vector<double> grid(double lo, double step, std::size_t n) {
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = lo + step * static_cast<double>(i);
  return t;
}

/// n = 7001 on [15°, 85°] at 0.01°: baseline 80 + 0.5·t plus three Pearson VII
/// kernels, noise level max(7, √f).
inline Diffractogram three_peak_fixture(std::uint64_t seed) {
  const auto t = grid(15.0, 0.01, 7001);
  std::vector<double> f(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) f[i] = fixture_truth(t[i]);
  return with_noise(t, f, 7.0, seed);
}

/// Flat level 50 with noise max(7, √50).
inline Diffractogram flat_noise(std::size_t n, std::uint64_t seed, double level = 50.0) {
  const auto t = grid(15.0, 0.01, n);
  return with_noise(t, std::vector<double>(n, level), 7.0, seed);
}

/// y_i = 2.5·sin(4π t_i) + σ Z_i with t_i = i/n, i = 1..n.
inline std::vector<double> sine_sample(std::size_t n, double sigma, std::uint64_t seed) {
  Engine eng = make_engine(seed, 0);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i + 1) / static_cast<double>(n);
    y[i] = 2.5 * std::sin(4.0 * std::numbers::pi * t) + sigma * z(eng);
  }
  return y;
}

}  // namespace diffraxis::synthetic
