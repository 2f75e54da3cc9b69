#pragma once

// Piecewise-constant estimation of heteroscedastic ground noise.
//
// For residuals V with V(t_i) = σ(t_i)Z(t_i), Σ_{i∈I} V_i²/σ_i² is χ²_{|I|}.
// A scale function s is consistent with the data when, for every interval I,
//   qchisq(1 - α_n, |I|) <= Σ_{i∈I} V_i²/s_i² <= qchisq(α_n, |I|).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "diffractogram.hpp"
#include "error.hpp"

namespace diffraxis {

/// α_n = 1 − exp(−0.5·τ·ln n)/√(π·τ·ln n)
inline double alpha_n(std::size_t n, double tau = 3.0) {
  if (n < 2) throw InvalidInput("alpha_n: n must be at least 2");
  if (!(tau > 0.0)) throw InvalidInput("alpha_n: tau must be positive");
  const double l = tau * std::log(static_cast<double>(n));
  return 1.0 - std::exp(-0.5 * l) / std::sqrt(std::numbers::pi * l);
}

/// Lazily tabulated two-sided chi-square band for interval lengths 1, 2, ...
class ChiSquareBand {
public:
  explicit ChiSquareBand(double alpha) : alpha_(alpha) {
    if (!(alpha > 0.5 && alpha < 1.0)) throw InvalidInput("chi-square band: alpha must lie in (0.5,1)");
  }

  double alpha() const noexcept { return alpha_; }

  double lower(std::size_t len) {
    grow(len);
    return lo_[len - 1];
  }
  double upper(std::size_t len) {
    grow(len);
    return hi_[len - 1];
  }

  bool contains(std::size_t len, double sum) {
    grow(len);
    return sum >= lo_[len - 1] && sum <= hi_[len - 1];
  }

  void grow(std::size_t len) {
    if (len == 0) throw InvalidInput("chi-square band: empty interval");
    while (lo_.size() < len) {
      const boost::math::chi_squared_distribution<double> chi(static_cast<double>(lo_.size() + 1));
      lo_.push_back(boost::math::quantile(chi, 1.0 - alpha_));
      hi_.push_back(boost::math::quantile(chi, alpha_));
    }
  }

private:
  double alpha_;
  std::vector<double> lo_, hi_;
};

/// Band inequality on a single interval I.
inline bool chisq_band_check(std::span<const double> v, std::span<const double> s, IndexRange I, double alpha) {
  if (v.size() != s.size()) throw InvalidInput("chisq_band_check: length mismatch");
  if (I.last < I.first || I.last >= v.size()) throw InvalidInput("chisq_band_check: interval out of bounds");
  double sum = 0.0;
  for (std::size_t i = I.first; i <= I.last; ++i) {
    if (!(s[i] > 0.0)) throw InvalidInput("chisq_band_check: nonpositive scale");
    sum += (v[i] * v[i]) / (s[i] * s[i]);
  }
  const boost::math::chi_squared_distribution<double> chi(static_cast<double>(I.size()));
  return sum >= boost::math::quantile(chi, 1.0 - alpha) && sum <= boost::math::quantile(chi, alpha);
}

/// Exact check of the band on every subinterval of the ratio sequence
/// u_i = V_i²/s_i², given as prefix sums p (p[0] = 0, size n+1).
///
/// Lengths are handled in blocks [l1, l2]: every window of length l ∈ [l1, l2]
/// starting at a sums to at most p[min(a+l2, n)] − p[a] and at least
/// p[a+l1] − p[a], while both band ends increase with length. A block whose
/// bounds sit inside [lower(l2), upper(l1)] is cleared wholesale; otherwise it
/// is split until single lengths are checked window by window.
inline bool chisq_band_all_intervals(std::span<const double> p, ChiSquareBand& band) {
  if (p.size() < 2) return true;
  const std::size_t n = p.size() - 1;
  band.grow(n);

  auto block_clear = [&](std::size_t l1, std::size_t l2) {
    double wmax = -1.0, wmin = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a + l1 <= n; ++a) {
      wmax = std::max(wmax, p[std::min(a + l2, n)] - p[a]);
      wmin = std::min(wmin, p[a + l1] - p[a]);
    }
    return wmax <= band.upper(l1) && wmin >= band.lower(l2);
  };

  std::vector<std::pair<std::size_t, std::size_t>> stack;
  for (std::size_t l1 = 1; l1 <= n;) {
    const auto width = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(l1)) / 2));
    const std::size_t l2 = std::min(n, l1 + width - 1);
    stack.emplace_back(l1, l2);
    while (!stack.empty()) {
      const auto [lo, hi] = stack.back();
      stack.pop_back();
      if (block_clear(lo, hi)) continue;
      if (lo == hi) return false;
      const std::size_t mid = lo + (hi - lo) / 2;
      stack.emplace_back(mid + 1, hi);
      stack.emplace_back(lo, mid);
    }
    l1 = l2 + 1;
  }
  return true;
}

/// Convenience form over raw residuals and a positive scale array.
inline bool chisq_band_all_intervals(std::span<const double> v, std::span<const double> s, double alpha) {
  if (v.size() != s.size()) throw InvalidInput("chisq_band_all_intervals: length mismatch");
  std::vector<double> p(v.size() + 1, 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(s[i] > 0.0)) throw InvalidInput("chisq_band_all_intervals: nonpositive scale");
    p[i + 1] = p[i] + (v[i] * v[i]) / (s[i] * s[i]);
  }
  ChiSquareBand band(alpha);
  return chisq_band_all_intervals(p, band);
}

struct PiecewiseConstantScale {
  std::vector<std::size_t> breakpoints;  // segment start indices, first is 0
  std::vector<double> levels;
  std::size_t n = 0;

  std::size_t segments() const noexcept { return breakpoints.size(); }

  friend bool operator==(const PiecewiseConstantScale&, const PiecewiseConstantScale&) = default;

  IndexRange segment(std::size_t k) const {
    const std::size_t end = (k + 1 < breakpoints.size()) ? breakpoints[k + 1] : n;
    return {breakpoints[k], end - 1};
  }

  std::vector<double> expand() const {
    std::vector<double> out(n);
    for (std::size_t k = 0; k < segments(); ++k) {
      const auto r = segment(k);
      std::fill(out.begin() + static_cast<std::ptrdiff_t>(r.first),
                out.begin() + static_cast<std::ptrdiff_t>(r.last) + 1, levels[k]);
    }
    return out;
  }
};

/// Greedy sweep for a piecewise-constant noise level.
///
/// A segment J = [start, k] grows while every interval ending at the new point
/// stays in the band under the level √(mean V² on J). When growth fails, J is
/// re-verified over all of its subintervals and shortened until that holds.
inline PiecewiseConstantScale greedy_segmentation(std::span<const double> v, double alpha) {
  const std::size_t n = v.size();
  if (n == 0) throw InvalidInput("greedy_segmentation: empty input");
  ChiSquareBand band(alpha);

  std::vector<double> q(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) q[i + 1] = q[i] + v[i] * v[i];

  auto level_sq = [&](std::size_t a, std::size_t b) {
    const double s2 = (q[b + 1] - q[a]) / static_cast<double>(b - a + 1);
    return std::max(s2, kScaleFloor * kScaleFloor);
  };

  auto full_check = [&](std::size_t a, std::size_t b) {
    const double s2 = level_sq(a, b);
    std::vector<double> p(b - a + 2, 0.0);
    for (std::size_t i = a; i <= b; ++i) p[i - a + 1] = p[i - a] + v[i] * v[i] / s2;
    return chisq_band_all_intervals(p, band);
  };

  PiecewiseConstantScale out;
  out.n = n;
  std::size_t start = 0;
  while (start < n) {
    std::size_t end = start;  // inclusive; a singleton is always accepted
    while (end + 1 < n) {
      const std::size_t k = end + 1;
      const double s2 = level_sq(start, k);
      bool ok = true;
      for (std::size_t j = k + 1; j-- > start;) {
        if (!band.contains(k - j + 1, (q[k + 1] - q[j]) / s2)) {
          ok = false;
          break;
        }
      }
      if (!ok) break;
      end = k;
    }
    while (end > start && !full_check(start, end)) --end;
    out.breakpoints.push_back(start);
    out.levels.push_back(std::sqrt(level_sq(start, end)));
    start = end + 1;
  }
  return out;
}

}  // namespace diffraxis
