#pragma once

// Peak-interval detection from taut-string maxima and the spline derivative,
// and the baseline refit on the data outside those intervals.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "diffractogram.hpp"
#include "error.hpp"
#include "multiscale.hpp"
#include "taut_string.hpp"
#include "weighted_spline.hpp"

namespace diffraxis {

inline constexpr double kMaxPeakWidthDegrees = 5.0;

/// Sample indices satisfying left_outer <= left_inner <= anchor <= right_inner <= right_outer.
struct PeakInterval {
  IndexRange core;           // taut-string maximum plateau
  std::size_t anchor = 0;    // t₀: derivative closest to zero
  std::size_t left_outer = 0, left_inner = 0;
  std::size_t right_inner = 0, right_outer = 0;
  bool truncated = false;    // width cap or data edge reached before the threshold rule closed
  std::vector<std::size_t> merged_anchors;  // all anchors united into this interval

  IndexRange range() const noexcept { return {left_outer, right_outer}; }

  friend bool operator==(const PeakInterval&, const PeakInterval&) = default;
};

struct PeakIntervalConfig {
  double max_width = kMaxPeakWidthDegrees;
  std::size_t anchor_neighbourhood = 3;
};

namespace detail {

inline PeakInterval scan_anchor(std::span<const double> angles, std::span<const double> deriv, double threshold,
                                IndexRange core, const PeakIntervalConfig& cfg) {
  const std::size_t n = angles.size();
  const std::size_t lo = core.first >= cfg.anchor_neighbourhood ? core.first - cfg.anchor_neighbourhood : 0;
  const std::size_t hi = std::min(n - 1, core.last + cfg.anchor_neighbourhood);
  std::size_t t0 = lo;
  for (std::size_t i = lo; i <= hi; ++i)
    if (std::abs(deriv[i]) < std::abs(deriv[t0])) t0 = i;

  // Small slack so grid points lying exactly on the cap survive rounding.
  const double half = 0.5 * cfg.max_width * (1.0 + 1e-12) + 1e-12 * std::abs(angles[t0]);
  const double left_limit = angles[t0] - half, right_limit = angles[t0] + half;
  PeakInterval p;
  p.core = core;
  p.anchor = t0;
  p.merged_anchors = {t0};

  auto left_ok = [&](std::size_t i) { return angles[i] >= left_limit; };
  auto right_ok = [&](std::size_t i) { return angles[i] <= right_limit; };

  // Outward from t₀: cross the flat top, then the steep flank; the inner bound
  // is where |f'| has fallen back to the threshold. A sign change on the way
  // means a valley was reached first, and both bounds stop there.
  std::size_t l1 = t0;
  bool valley = false;
  for (bool steep = false;;) {
    if (steep && std::abs(deriv[l1]) <= threshold) break;
    if (l1 == 0 || !left_ok(l1 - 1)) {
      p.truncated = true;
      break;
    }
    if (deriv[l1 - 1] < 0.0) {
      valley = true;
      break;
    }
    --l1;
    steep = steep || std::abs(deriv[l1]) > threshold;
  }
  std::size_t l2 = l1;
  while (!valley && l2 > 0 && left_ok(l2 - 1) && deriv[l2 - 1] >= 0.0 && std::abs(deriv[l2 - 1]) <= threshold) --l2;
  if (!valley && l2 > 0 && !left_ok(l2 - 1) && deriv[l2 - 1] >= 0.0 && std::abs(deriv[l2 - 1]) <= threshold)
    p.truncated = true;

  std::size_t r1 = t0;
  valley = false;
  for (bool steep = false;;) {
    if (steep && std::abs(deriv[r1]) <= threshold) break;
    if (r1 + 1 == n || !right_ok(r1 + 1)) {
      p.truncated = true;
      break;
    }
    if (deriv[r1 + 1] > 0.0) {
      valley = true;
      break;
    }
    ++r1;
    steep = steep || std::abs(deriv[r1]) > threshold;
  }
  std::size_t r2 = r1;
  while (!valley && r2 + 1 < n && right_ok(r2 + 1) && deriv[r2 + 1] <= 0.0 && std::abs(deriv[r2 + 1]) <= threshold) ++r2;
  if (!valley && r2 + 1 < n && !right_ok(r2 + 1) && deriv[r2 + 1] <= 0.0 && std::abs(deriv[r2 + 1]) <= threshold)
    p.truncated = true;

  p.left_inner = l1;
  p.left_outer = l2;
  p.right_inner = r1;
  p.right_outer = r2;
  return p;
}

}  // namespace detail

/// One interval per interior maximum of the taut string. The anchor is the
/// sample of smallest |f'| on the maximum plateau widened by a few samples;
/// the inner bounds are where |f'|, having risen above the median of |f'|
/// over the grid on the flanks, falls back to it; the outer bounds extend
/// further while f' keeps the rising (left) or falling (right) sign and stays
/// below the median. Each interval is capped at max_width degrees around its anchor,
/// then overlapping intervals are merged.
inline std::vector<PeakInterval> peak_intervals(const StepFunction& ts, const NaturalCubicSpline& spline,
                                                const PeakIntervalConfig& cfg = {}) {
  const auto angles = spline.knots();
  if (ts.samples() != angles.size()) throw InvalidInput("peak_intervals: taut string and spline grids differ");
  const auto deriv = spline.eval(angles, 1);
  std::vector<double> absd(deriv.size());
  std::transform(deriv.begin(), deriv.end(), absd.begin(), [](double v) { return std::abs(v); });
  const double threshold = median(absd);

  std::vector<PeakInterval> raw;
  for (const auto& e : ts.extremes())
    if (e.kind == ExtremeKind::maximum) raw.push_back(detail::scan_anchor(angles, deriv, threshold, e.samples, cfg));
  if (raw.empty()) return raw;

  std::sort(raw.begin(), raw.end(), [](const PeakInterval& a, const PeakInterval& b) {
    return a.left_outer < b.left_outer || (a.left_outer == b.left_outer && a.anchor < b.anchor);
  });
  const auto values = spline.values();
  std::vector<PeakInterval> out;
  for (auto& p : raw) {
    if (!out.empty() && p.left_outer <= out.back().right_outer) {
      auto& m = out.back();
      if (values[p.anchor] > values[m.anchor]) {
        m.anchor = p.anchor;
        m.core = p.core;
      }
      m.left_outer = std::min(m.left_outer, p.left_outer);
      m.left_inner = std::min(m.left_inner, p.left_inner);
      m.right_inner = std::max(m.right_inner, p.right_inner);
      m.right_outer = std::max(m.right_outer, p.right_outer);
      m.truncated = m.truncated || p.truncated;
      m.merged_anchors.insert(m.merged_anchors.end(), p.merged_anchors.begin(), p.merged_anchors.end());
      std::sort(m.merged_anchors.begin(), m.merged_anchors.end());
      m.merged_anchors.erase(std::unique(m.merged_anchors.begin(), m.merged_anchors.end()), m.merged_anchors.end());
      m.left_inner = std::min(m.left_inner, m.anchor);
      m.right_inner = std::max(m.right_inner, m.anchor);
    } else {
      out.push_back(std::move(p));
    }
  }
  return out;
}

struct BaselineFit {
  NaturalCubicSpline spline;       // fitted on the retained samples only
  std::vector<std::size_t> kept;   // retained sample indices
  std::vector<double> values;      // f_bl on the full grid
  std::size_t iterations = 0;
};

/// Removes every sample inside a peak interval, refits the adaptive weighted
/// spline to the rest and evaluates it on the full grid.
inline BaselineFit baseline_fit(std::span<const double> angles, std::span<const double> y,
                                std::span<const PeakInterval> peaks, const NoiseProfile& scale, double tau,
                                const WeightLoopConfig& cfg = {}) {
  const std::size_t n = angles.size();
  if (y.size() != n || scale.size() != n) throw InvalidInput("baseline_fit: size mismatch");
  std::vector<char> removed(n, 0);
  for (const auto& p : peaks) {
    if (p.right_outer >= n || p.left_outer > p.right_outer) throw InvalidInput("baseline_fit: peak interval out of range");
    std::fill(removed.begin() + static_cast<std::ptrdiff_t>(p.left_outer),
              removed.begin() + static_cast<std::ptrdiff_t>(p.right_outer) + 1, 1);
  }
  BaselineFit out;
  std::vector<double> t, v, s;
  for (std::size_t i = 0; i < n; ++i) {
    if (removed[i]) continue;
    out.kept.push_back(i);
    t.push_back(angles[i]);
    v.push_back(y[i]);
    s.push_back(scale[i]);
  }
  if (t.size() < 3) throw InvalidInput("baseline_fit: peak intervals leave fewer than 3 baseline samples");
  const std::size_t m = t.size();
  auto fit = fit_adaptive_weights(t, v, NoiseProfile(std::move(s)), IntervalScheme::dyadic(m),
                                  residual_threshold(m, tau), cfg);
  out.iterations = fit.iterations;
  out.spline = std::move(fit.spline);
  out.values = out.spline.eval(angles, 0);
  return out;
}

}  // namespace diffraxis
