#pragma once

// Residual-based approximation regions: interval schemes, standardized
// residual sums, noise-scale estimation and adequacy thresholds.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <thread>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "diffractogram.hpp"
#include "error.hpp"
#include "random.hpp"

namespace diffraxis {

enum class SchemeKind { dyadic, all_subintervals };

struct CriterionConfig {
  double tau = 2.5;
  double alpha = 0.95;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(tau > 0.0)) throw InvalidInput("criterion: tau must be positive");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("criterion: alpha must lie in (0,1)");
  }
};

inline double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(0.0, 1.0), p);
}

template <class T>
double median(std::vector<T> v) {
  if (v.empty()) throw InvalidInput("median of empty set");
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    m = 0.5 * (m + lo);
  }
  return m;
}

/// MAD-of-differences noise estimate:
///   Median{|y_i - y_{i-1}| : 2 <= i <= n-1} / (Φ⁻¹(0.75)·√2).
/// Returns 0 on degenerate (locally constant) data; callers clamp with kScaleFloor.
inline double global_scale_estimate(std::span<const double> y) {
  const std::size_t n = y.size();
  if (n < 3) throw InvalidInput("global_scale_estimate: need at least 3 samples");
  std::vector<double> diffs;
  diffs.reserve(n - 2);
  // 1-based i = 2..n-1  ->  0-based pairs (i-1, i-2)
  for (std::size_t i = 1; i + 1 < n; ++i) diffs.push_back(std::abs(y[i] - y[i - 1]));
  return median(std::move(diffs)) / (normal_quantile(0.75) * std::sqrt(2.0));
}

inline double global_scale_estimate(const Diffractogram& d) { return global_scale_estimate(d.counts()); }

/// Σ_i = max(floor_i, √max(f_i, 0)).
inline NoiseProfile local_scale(std::span<const double> fit, std::span<const double> floor) {
  if (fit.size() != floor.size()) throw InvalidInput("local_scale: length mismatch");
  std::vector<double> s(fit.size());
  for (std::size_t i = 0; i < fit.size(); ++i) {
    if (!(floor[i] > 0.0)) throw InvalidInput("local_scale: nonpositive floor entry");
    s[i] = std::max(floor[i], std::sqrt(std::max(fit[i], 0.0)));
  }
  return NoiseProfile(std::move(s));
}

inline NoiseProfile local_scale(std::span<const double> fit, double floor) {
  return local_scale(fit, std::vector<double>(fit.size(), floor));
}

/// (1/√|I|)·Σ_{i∈I} r_i/Σ_i
inline double multires_statistic(std::span<const double> residuals, IndexRange I, const NoiseProfile& scale) {
  if (I.last < I.first) throw InvalidInput("multires_statistic: empty interval");
  if (I.last >= residuals.size() || I.last >= scale.size())
    throw InvalidInput("multires_statistic: interval out of bounds");
  double sum = 0.0;
  for (std::size_t i = I.first; i <= I.last; ++i) sum += residuals[i] / scale[i];
  return sum / std::sqrt(static_cast<double>(I.size()));
}

/// √(τ·ln n)
inline double residual_threshold(std::size_t n, double tau) {
  if (n < 2) throw InvalidInput("residual_threshold: n must be at least 2");
  return std::sqrt(tau * std::log(static_cast<double>(n)));
}

/// Family of index intervals over {0..n-1}.
///
/// The dyadic kind holds all singletons, left-aligned blocks of 2, 4, 8, ...,
/// the trailing partial block of every level and finally the whole range.
/// Duplicates (a trailing block equal to one of the level below) are dropped,
/// which keeps the family to at most 2n-1 members.
class IntervalScheme {
public:
  static IntervalScheme dyadic(std::size_t n) {
    if (n == 0) throw InvalidInput("interval scheme: n must be positive");
    IntervalScheme s(SchemeKind::dyadic, n);
    for (std::size_t i = 0; i < n; ++i) s.intervals_.push_back({i, i});
    for (std::size_t width = 2;; width *= 2) {
      for (std::size_t a = 0; a < n; a += width) {
        const std::size_t b = std::min(a + width, n) - 1;
        const bool partial = (a + width > n);
        // A short trailing block already exists at the previous level.
        if (partial && b - a + 1 <= width / 2) continue;
        s.intervals_.push_back({a, b});
      }
      if (width >= n) break;
    }
    return s;
  }

  static IntervalScheme all_subintervals(std::size_t n) {
    if (n == 0) throw InvalidInput("interval scheme: n must be positive");
    return IntervalScheme(SchemeKind::all_subintervals, n);
  }

  SchemeKind kind() const noexcept { return kind_; }
  std::size_t n() const noexcept { return n_; }

  std::size_t size() const noexcept {
    return kind_ == SchemeKind::dyadic ? intervals_.size() : n_ * (n_ + 1) / 2;
  }

  /// Explicit members; empty for the all-subintervals kind.
  const std::vector<IndexRange>& intervals() const noexcept { return intervals_; }

  template <class F>
  void for_each(F&& f) const {
    if (kind_ == SchemeKind::dyadic) {
      for (const auto& I : intervals_) f(I);
    } else {
      for (std::size_t a = 0; a < n_; ++a)
        for (std::size_t b = a; b < n_; ++b) f(IndexRange{a, b});
    }
  }

private:
  IntervalScheme(SchemeKind k, std::size_t n) : kind_(k), n_(n) {}

  SchemeKind kind_;
  std::size_t n_;
  std::vector<IndexRange> intervals_;
};

struct AdequacyResult {
  bool adequate = true;
  double max_abs_statistic = 0.0;
  std::vector<IndexRange> violating;
};

inline std::vector<double> standardized_prefix_sums(std::span<const double> residuals, const NoiseProfile& scale) {
  std::vector<double> p(residuals.size() + 1, 0.0);
  for (std::size_t i = 0; i < residuals.size(); ++i) p[i + 1] = p[i] + residuals[i] / scale[i];
  return p;
}

/// Tests |multires_statistic| <= threshold on every interval of the scheme and
/// collects the violators.
inline AdequacyResult adequacy_check(std::span<const double> residuals, const IntervalScheme& scheme,
                                     const NoiseProfile& scale, double threshold) {
  if (!(threshold > 0.0)) throw InvalidInput("adequacy_check: threshold must be positive");
  if (residuals.size() != scheme.n() || scale.size() != scheme.n())
    throw InvalidInput("adequacy_check: residual, scale and scheme sizes differ");
  const auto p = standardized_prefix_sums(residuals, scale);
  AdequacyResult out;
  scheme.for_each([&](IndexRange I) {
    const double w = std::abs(p[I.last + 1] - p[I.first]) / std::sqrt(static_cast<double>(I.size()));
    out.max_abs_statistic = std::max(out.max_abs_statistic, w);
    if (w > threshold) {
      out.adequate = false;
      out.violating.push_back(I);
    }
  });
  return out;
}

struct MaxStatistic {
  double value = 0.0;
  IndexRange argmax{};
};

/// Plain O(L²) scan over all subintervals. Sums are accumulated left to right
/// from each start index.
inline MaxStatistic max_subinterval_stat_exhaustive(std::span<const double> residuals, const NoiseProfile& scale) {
  const std::size_t L = residuals.size();
  if (L == 0) throw InvalidInput("max_subinterval_stat: empty input");
  if (scale.size() != L) throw InvalidInput("max_subinterval_stat: scale length mismatch");
  std::vector<double> z(L);
  for (std::size_t i = 0; i < L; ++i) z[i] = residuals[i] / scale[i];
  MaxStatistic best{-1.0, {0, 0}};
  for (std::size_t a = 0; a < L; ++a) {
    double s = 0.0;
    for (std::size_t b = a; b < L; ++b) {
      s += z[b];
      const double v = std::abs(s) / std::sqrt(static_cast<double>(b - a + 1));
      if (v > best.value) best = {v, {a, b}};
    }
  }
  return best;
}

/// Maximum of |multires_statistic| over all subintervals.
///
/// Same accumulation order as the exhaustive scan, with a start-wise cutoff:
/// once (|s| + Σ_{j>b}|z_j|)/√(b-a+2) drops below the current best no later end
/// can win. Evaluated terms are bit-identical to the exhaustive scan, so value
/// and argmax agree exactly.
inline MaxStatistic max_subinterval_stat(std::span<const double> residuals, const NoiseProfile& scale) {
  const std::size_t L = residuals.size();
  if (L == 0) throw InvalidInput("max_subinterval_stat: empty input");
  if (scale.size() != L) throw InvalidInput("max_subinterval_stat: scale length mismatch");
  std::vector<double> z(L), abs_tail(L + 1, 0.0);
  for (std::size_t i = 0; i < L; ++i) z[i] = residuals[i] / scale[i];
  for (std::size_t i = L; i-- > 0;) abs_tail[i] = abs_tail[i + 1] + std::abs(z[i]);
  // Slack covers rounding in the bound versus the accumulated sums.
  constexpr double slack = 1.0 + 1e-9;
  MaxStatistic best{-1.0, {0, 0}};
  for (std::size_t a = 0; a < L; ++a) {
    if (abs_tail[a] * slack < best.value) continue;
    double s = 0.0;
    for (std::size_t b = a; b < L; ++b) {
      s += z[b];
      const double v = std::abs(s) / std::sqrt(static_cast<double>(b - a + 1));
      if (v > best.value) best = {v, {a, b}};
      const double bound = (std::abs(s) + abs_tail[b + 1]) * slack / std::sqrt(static_cast<double>(b - a + 2));
      if (bound < best.value) break;
    }
  }
  return best;
}

namespace detail {

// Runs fn(r, out_r) for r in [0, count); output order is independent of threading.
template <class Fn>
std::vector<double> run_replicates(std::size_t count, Fn&& fn) {
  std::vector<double> out(count);
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (hw == 1 || count < 64) {
    for (std::size_t r = 0; r < count; ++r) out[r] = fn(r);
    return out;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (count + hw - 1) / hw;
  for (unsigned t = 0; t < hw; ++t) {
    const std::size_t lo = t * chunk, hi = std::min(count, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      for (std::size_t r = lo; r < hi; ++r) out[r] = fn(r);
    });
  }
  for (auto& th : pool) th.join();
  return out;
}

// Type-1 (inverse ECDF) sample quantile.
inline double sample_quantile(std::vector<double> v, double alpha) {
  if (v.empty()) throw InvalidInput("sample_quantile: no samples");
  auto k = static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(v.size())));
  k = std::clamp<std::size_t>(k, 1, v.size()) - 1;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

inline std::vector<double> gaussian_prefix(Engine& eng, std::size_t L) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> p(L + 1, 0.0);
  for (std::size_t i = 0; i < L; ++i) p[i + 1] = p[i] + gauss(eng);
  return p;
}

}  // namespace detail

inline constexpr std::size_t kDefaultReplicates = 100000;

/// Monte Carlo α-quantiles C_L of max_{I ⊆ [0,L)} |Σ_I Z|/√|I| for every L in
/// `lengths` (sorted, distinct, positive). Replicate r draws from stream
/// (seed, r) and C_L only uses its first L draws, so C_L is nondecreasing in L
/// and does not depend on which other lengths were requested.
inline std::vector<double> threshold_quantiles(std::span<const std::size_t> lengths, double alpha,
                                               std::uint64_t seed, std::size_t replicates = kDefaultReplicates) {
  if (lengths.empty()) return {};
  for (std::size_t i = 0; i < lengths.size(); ++i)
    if (lengths[i] == 0 || (i > 0 && lengths[i] <= lengths[i - 1]))
      throw InvalidInput("threshold_quantile: lengths must be positive and strictly increasing");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("threshold_quantile: alpha must lie in (0,1)");
  if (replicates == 0) throw InvalidInput("threshold_quantile: need at least one replicate");
  const std::size_t Lmax = lengths.back(), nl = lengths.size();
  // rev[Lmax - k] = 1/√k, so the weights for a fixed end index are contiguous.
  std::vector<double> rev(Lmax + 1, 0.0);
  for (std::size_t k = 1; k <= Lmax; ++k) rev[Lmax - k] = 1.0 / std::sqrt(static_cast<double>(k));

  std::vector<double> maxima(replicates * nl);  // maxima[r * nl + j]
  detail::run_replicates(replicates, [&](std::size_t r) {
    Engine eng = make_engine(seed, r);
    const auto p = detail::gaussian_prefix(eng, Lmax);
    double running = 0.0;
    std::size_t j = 0;
    for (std::size_t b = 0; b < Lmax; ++b) {
      const double pb = p[b + 1];
      const double* w = rev.data() + (Lmax - b - 1);
      double m0 = running, m1 = 0.0, m2 = 0.0, m3 = 0.0;
      std::size_t a = 0;
      for (; a + 4 <= b + 1; a += 4) {
        m0 = std::max(m0, std::abs(pb - p[a]) * w[a]);
        m1 = std::max(m1, std::abs(pb - p[a + 1]) * w[a + 1]);
        m2 = std::max(m2, std::abs(pb - p[a + 2]) * w[a + 2]);
        m3 = std::max(m3, std::abs(pb - p[a + 3]) * w[a + 3]);
      }
      for (; a <= b; ++a) m0 = std::max(m0, std::abs(pb - p[a]) * w[a]);
      running = std::max(std::max(m0, m1), std::max(m2, m3));
      if (b + 1 == lengths[j]) maxima[r * nl + j++] = running;
    }
    return 0.0;
  });

  std::vector<double> out(nl), column(replicates);
  for (std::size_t j = 0; j < nl; ++j) {
    for (std::size_t r = 0; r < replicates; ++r) column[r] = maxima[r * nl + j];
    out[j] = detail::sample_quantile(column, alpha);
  }
  return out;
}

/// C_1..C_Lmax in one pass.
inline std::vector<double> threshold_quantile_curve(std::size_t Lmax, double alpha, std::uint64_t seed,
                                                    std::size_t replicates = kDefaultReplicates) {
  if (Lmax == 0) throw InvalidInput("threshold_quantile: L must be at least 1");
  std::vector<std::size_t> lengths(Lmax);
  for (std::size_t L = 1; L <= Lmax; ++L) lengths[L - 1] = L;
  return threshold_quantiles(lengths, alpha, seed, replicates);
}

/// Monte Carlo α-quantile of the maximal standardized Gaussian sum over the
/// given scheme kind on length L. Deterministic in seed.
inline double threshold_quantile(std::size_t L, SchemeKind kind, double alpha, std::uint64_t seed,
                                 std::size_t replicates = kDefaultReplicates) {
  if (L == 0) throw InvalidInput("threshold_quantile: L must be at least 1");
  if (kind == SchemeKind::all_subintervals) {
    const std::size_t len[] = {L};
    return threshold_quantiles(len, alpha, seed, replicates).front();
  }
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("threshold_quantile: alpha must lie in (0,1)");
  const auto scheme = IntervalScheme::dyadic(L);
  auto maxima = detail::run_replicates(replicates, [&](std::size_t r) {
    Engine eng = make_engine(seed, r);
    const auto p = detail::gaussian_prefix(eng, L);
    double m = 0.0;
    for (const auto& I : scheme.intervals())
      m = std::max(m, std::abs(p[I.last + 1] - p[I.first]) / std::sqrt(static_cast<double>(I.size())));
    return m;
  });
  return detail::sample_quantile(std::move(maxima), alpha);
}

/// τ_n(α) such that the dyadic-scheme threshold √(τ_n ln n) has coverage α.
inline double calibrate_tau(std::size_t n, double alpha, std::uint64_t seed,
                            std::size_t replicates = kDefaultReplicates) {
  if (n < 2) throw InvalidInput("calibrate_tau: n must be at least 2");
  const double q = threshold_quantile(n, SchemeKind::dyadic, alpha, seed, replicates);
  return q * q / std::log(static_cast<double>(n));
}

}  // namespace diffraxis
