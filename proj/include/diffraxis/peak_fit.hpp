#pragma once

// Decomposition of a baseline-subtracted peak interval into the smallest
// number k of Pearson VII kernels whose residuals pass the all-subintervals
// multiresolution check.
//
// Model on the segment:  f(t) = β₀ + β₁(t − t_c) + Σ_i γ_i p(t; μ_i, m_i, a_i)
// with t_c the segment midpoint, |β₀| < d₀, |β₁| < d₁ and t_l < μ_1 < … < μ_k < t_m.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <vector>

#include "bfgs.hpp"
#include "diffractogram.hpp"
#include "error.hpp"
#include "multiscale.hpp"
#include "pearson.hpp"
#include "random.hpp"

namespace diffraxis {

inline constexpr double kNegligibleHeight = 1.0;

struct SegmentFit {
  double beta0 = 0.0;
  double beta1 = 0.0;
  double center = 0.0;  // t_c, the tilt pivot
  std::vector<PearsonComponent> components;  // μ increasing
  bool accepted = false;
  double objective = 0.0;  // R
  double statistic = 0.0;  // max_subinterval_stat of the standardized residuals
  double threshold = 0.0;  // C_L
  std::vector<PeakStats> stats;
  std::vector<bool> negligible;  // γ below kNegligibleHeight

  std::size_t k() const noexcept { return components.size(); }

  friend bool operator==(const SegmentFit&, const SegmentFit&) = default;
};

inline double model_eval(double t, const SegmentFit& fit) {
  double v = fit.beta0 + fit.beta1 * (t - fit.center);
  for (const auto& c : fit.components) v += pearson_eval(c, t);
  return v;
}

inline std::vector<double> model_eval(std::span<const double> t, const SegmentFit& fit) {
  std::vector<double> out(t.size());
  for (std::size_t j = 0; j < t.size(); ++j) out[j] = model_eval(t[j], fit);
  return out;
}

/// Box for the constrained parameters: locations in (t_lo, t_hi), |β₀| < d0, |β₁| < d1.
struct TransformBounds {
  double t_lo = 0.0, t_hi = 1.0;
  double d0 = 1.0, d1 = 1.0;

  double center() const noexcept { return 0.5 * (t_lo + t_hi); }
  void validate() const {
    if (!(t_hi > t_lo) || !(d0 > 0.0) || !(d1 > 0.0)) throw InvalidInput("transform bounds: degenerate box");
  }
};

struct PeakParameters {
  double beta0 = 0.0, beta1 = 0.0;
  std::vector<PearsonComponent> components;
};

/// Unconstrained vector length for k kernels:
/// [β₀ raw, β₁ raw, φ_1..φ_k, then (ln γ, ln a, ln(m−1)) per kernel].
inline constexpr std::size_t raw_size(std::size_t k) noexcept { return 2 + 4 * k; }

/// Jupp's ordered-knot map: gaps h = D·softmax(0, φ_1, φ_1+φ_2, …) between
/// t_lo, μ_1, …, μ_k, t_hi.
inline PeakParameters transform_params(std::span<const double> raw, std::size_t k, const TransformBounds& b) {
  if (raw.size() != raw_size(k)) throw InvalidInput("transform_params: raw vector has wrong length");
  PeakParameters out;
  out.beta0 = b.d0 * std::tanh(0.5 * raw[0]);
  out.beta1 = b.d1 * std::tanh(0.5 * raw[1]);
  out.components.resize(k);
  if (k == 0) return out;

  std::vector<double> c(k + 1, 0.0);
  for (std::size_t i = 0; i < k; ++i) c[i + 1] = c[i] + raw[2 + i];
  const double cmax = *std::max_element(c.begin(), c.end());
  double z = 0.0;
  for (auto& v : c) z += (v = std::exp(v - cmax));
  const double D = b.t_hi - b.t_lo;
  double H = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    H += D * c[i] / z;
    auto& comp = out.components[i];
    comp.mu = b.t_lo + H;
    const std::size_t o = 2 + k + 3 * i;
    comp.gamma = std::exp(raw[o]);
    comp.a = std::exp(raw[o + 1]);
    comp.m = 1.0 + std::exp(raw[o + 2]);
  }
  return out;
}

inline std::vector<double> inverse_transform(const PeakParameters& p, const TransformBounds& b) {
  const std::size_t k = p.components.size();
  std::vector<double> raw(raw_size(k));
  if (!(std::abs(p.beta0) < b.d0) || !(std::abs(p.beta1) < b.d1))
    throw DomainError("inverse_transform: tilt outside its bounds");
  raw[0] = 2.0 * std::atanh(p.beta0 / b.d0);
  raw[1] = 2.0 * std::atanh(p.beta1 / b.d1);
  double prev = b.t_lo;
  double prev_gap = 0.0;
  for (std::size_t i = 0; i <= k; ++i) {
    const double next = i < k ? p.components[i].mu : b.t_hi;
    const double gap = next - prev;
    if (!(gap > 0.0)) throw DomainError("inverse_transform: locations must be strictly inside and increasing");
    if (i > 0) raw[2 + i - 1] = std::log(gap) - std::log(prev_gap);
    prev = next;
    prev_gap = gap;
  }
  for (std::size_t i = 0; i < k; ++i) {
    const auto& c = p.components[i];
    if (!(c.gamma > 0.0) || !(c.a > 0.0) || !(c.m > 1.0))
      throw DomainError("inverse_transform: need gamma > 0, a > 0, m > 1");
    const std::size_t o = 2 + k + 3 * i;
    raw[o] = std::log(c.gamma);
    raw[o + 1] = std::log(c.a);
    raw[o + 2] = std::log(c.m - 1.0);
  }
  return raw;
}

struct ObjectiveValue {
  double value = 0.0;
  std::vector<double> gradient;  // with respect to the raw coordinates
};

/// R = Σ_j ((f(t_j) − y_j)/s_j)² and its gradient in raw coordinates.
inline ObjectiveValue wls_objective(std::span<const double> raw, std::size_t k, const TransformBounds& b,
                                    std::span<const double> t, std::span<const double> y,
                                    std::span<const double> scale) {
  const std::size_t L = t.size();
  if (y.size() != L || scale.size() != L) throw InvalidInput("wls_objective: size mismatch");
  const auto par = transform_params(raw, k, b);
  const double tc = b.center();

  // Per-point residual weights w_j = 2 r_j / s_j, plus model pieces reused by the gradient.
  std::vector<double> shape(L * k), u(L * k);
  std::vector<double> w(L);
  double R = 0.0;
  for (std::size_t j = 0; j < L; ++j) {
    if (!(scale[j] > 0.0)) throw InvalidInput("wls_objective: nonpositive scale");
    double f = par.beta0 + par.beta1 * (t[j] - tc);
    for (std::size_t i = 0; i < k; ++i) {
      const auto& c = par.components[i];
      const double x = (t[j] - c.mu) / c.a;
      const double q = x * x / c.m;
      const double p = std::exp(-c.m * std::log1p(q));
      shape[j * k + i] = p;
      u[j * k + i] = 1.0 + q;
      f += c.gamma * p;
    }
    const double r = (f - y[j]) / scale[j];
    R += r * r;
    w[j] = 2.0 * r / scale[j];
  }

  ObjectiveValue out;
  out.value = R;
  out.gradient.assign(raw_size(k), 0.0);
  auto& g = out.gradient;
  double g0 = 0.0, g1 = 0.0;
  std::vector<double> g_mu(k, 0.0);
  for (std::size_t j = 0; j < L; ++j) {
    g0 += w[j];
    g1 += w[j] * (t[j] - tc);
    for (std::size_t i = 0; i < k; ++i) {
      const auto& c = par.components[i];
      const double p = shape[j * k + i], uu = u[j * k + i];
      const double x = t[j] - c.mu;
      const double a2 = c.a * c.a;
      const double gp = w[j] * c.gamma * p;  // ∂R/∂(ln γ) contribution, reused for the others
      const std::size_t o = 2 + k + 3 * i;
      g[o] += gp;
      g_mu[i] += gp * 2.0 * x / (a2 * uu);
      g[o + 1] += gp * 2.0 * x * x / (a2 * uu);  // a·∂/∂a
      g[o + 2] += gp * (c.m - 1.0) * (-std::log(uu) + x * x / (a2 * c.m * uu));
    }
  }
  const double th0 = std::tanh(0.5 * raw[0]), th1 = std::tanh(0.5 * raw[1]);
  g[0] = g0 * 0.5 * b.d0 * (1.0 - th0 * th0);
  g[1] = g1 * 0.5 * b.d1 * (1.0 - th1 * th1);

  // ∂μ_i/∂φ_j = max(0, H_i − H_j) − H_i(D − H_j)/D with H_i = μ_i − t_lo.
  const double D = b.t_hi - b.t_lo;
  for (std::size_t jj = 0; jj < k; ++jj) {
    const double Hj = par.components[jj].mu - b.t_lo;
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double Hi = par.components[i].mu - b.t_lo;
      s += g_mu[i] * (std::max(0.0, Hi - Hj) - Hi * (D - Hj) / D);
    }
    g[2 + jj] = s;
  }
  return out;
}

/// R for constrained parameters in any component order.
inline double wls_value(const PeakParameters& p, double center, std::span<const double> t, std::span<const double> y,
                        std::span<const double> scale) {
  if (y.size() != t.size() || scale.size() != t.size()) throw InvalidInput("wls_value: size mismatch");
  double R = 0.0;
  for (std::size_t j = 0; j < t.size(); ++j) {
    double f = p.beta0 + p.beta1 * (t[j] - center);
    for (const auto& c : p.components) f += pearson_eval(c, t[j]);
    const double r = (f - y[j]) / scale[j];
    R += r * r;
  }
  return R;
}

/// Same objective evaluated at a stored fit; the gradient is in raw coordinates.
inline ObjectiveValue wls_objective(const SegmentFit& fit, const TransformBounds& b, std::span<const double> t,
                                    std::span<const double> y, std::span<const double> scale) {
  const auto raw = inverse_transform({fit.beta0, fit.beta1, fit.components}, b);
  return wls_objective(raw, fit.k(), b, t, y, scale);
}

/// Memoized C_L values for one (α, seed, replicate count).
class ThresholdCache {
public:
  ThresholdCache(double alpha, std::uint64_t seed, std::size_t replicates = kDefaultReplicates)
      : alpha_(alpha), seed_(seed), replicates_(replicates) {}

  double alpha() const noexcept { return alpha_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t replicates() const noexcept { return replicates_; }
  const std::map<std::size_t, double>& values() const noexcept { return values_; }

  /// Simulates every missing length in one pass.
  void prefetch(std::vector<std::size_t> lengths) {
    std::erase_if(lengths, [&](std::size_t L) { return values_.contains(L); });
    if (lengths.empty()) return;
    std::sort(lengths.begin(), lengths.end());
    lengths.erase(std::unique(lengths.begin(), lengths.end()), lengths.end());
    const auto q = threshold_quantiles(lengths, alpha_, seed_, replicates_);
    for (std::size_t i = 0; i < lengths.size(); ++i) values_[lengths[i]] = q[i];
  }

  double get(std::size_t L) {
    prefetch({L});
    return values_.at(L);
  }

private:
  double alpha_;
  std::uint64_t seed_;
  std::size_t replicates_;
  std::map<std::size_t, double> values_;
};

/// Inputs for one peak interval.
struct SegmentData {
  std::vector<double> t;         // angles
  std::vector<double> y;         // counts minus baseline
  std::vector<double> baseline;  // f_bl
  std::vector<double> scale;     // Σ_n, weights in R
  std::vector<double> floor;     // lower bound for the acceptance scale; empty means kScaleFloor

  std::size_t size() const noexcept { return t.size(); }
  void validate() const {
    const std::size_t L = t.size();
    if (L < 5) throw InvalidInput("fit_segment: segment needs at least 5 samples");
    if (y.size() != L || baseline.size() != L || scale.size() != L || (!floor.empty() && floor.size() != L))
      throw InvalidInput("fit_segment: segment arrays differ in length");
    for (std::size_t j = 1; j < L; ++j)
      if (!(t[j] > t[j - 1])) throw InvalidInput("fit_segment: angles must increase");
  }
};

struct FitConfig {
  std::size_t max_k = 4;
  std::size_t restarts_per_k = 200;
  std::size_t n_solutions = 3;
  std::uint64_t seed = 0;
  double d0_fraction = 0.05;       // d₀ as a fraction of the baseline at the segment center
  double d1 = 5.0;                 // counts per degree
  double dedupe_tolerance = 1e-4;
  BfgsOptions bfgs{};

  void validate() const {
    if (max_k == 0 || restarts_per_k == 0 || n_solutions == 0) throw InvalidInput("fit_segment: budgets must be positive");
    if (!(d0_fraction > 0.0) || !(d1 > 0.0)) throw InvalidInput("fit_segment: tilt bounds must be positive");
  }
};

inline TransformBounds segment_bounds(const SegmentData& s, const FitConfig& cfg) {
  TransformBounds b;
  b.t_lo = s.t.front();
  b.t_hi = s.t.back();
  // Baseline at the midpoint, interpolated between the bracketing samples.
  const double tc = b.center();
  const auto it = std::lower_bound(s.t.begin(), s.t.end(), tc);
  const auto j = static_cast<std::size_t>(std::max<std::ptrdiff_t>(1, it - s.t.begin()));
  const double w = (tc - s.t[j - 1]) / (s.t[j] - s.t[j - 1]);
  const double bc = (1.0 - w) * s.baseline[j - 1] + w * s.baseline[j];
  b.d0 = std::max(cfg.d0_fraction * std::abs(bc), 1e-6);
  b.d1 = cfg.d1;
  return b;
}

/// Σ̃ = max(floor, √(f_bl + f)) on the segment.
inline std::vector<double> acceptance_scale(const SegmentData& s, const SegmentFit& fit) {
  std::vector<double> out(s.size());
  for (std::size_t j = 0; j < s.size(); ++j) {
    const double f = s.baseline[j] + model_eval(s.t[j], fit);
    const double lo = s.floor.empty() ? kScaleFloor : std::max(s.floor[j], kScaleFloor);
    out[j] = std::max(lo, std::sqrt(std::max(f, 0.0)));
  }
  return out;
}

inline MaxStatistic acceptance_statistic(const SegmentData& s, const SegmentFit& fit) {
  std::vector<double> r(s.size());
  for (std::size_t j = 0; j < s.size(); ++j) r[j] = s.y[j] - model_eval(s.t[j], fit);
  return max_subinterval_stat(r, NoiseProfile(acceptance_scale(s, fit)));
}

namespace detail {

inline void finalize(SegmentFit& f) {
  f.stats.clear();
  f.negligible.clear();
  for (const auto& c : f.components) {
    f.stats.push_back(peak_stats(c));
    f.negligible.push_back(c.gamma < kNegligibleHeight);
  }
}

inline double median_step(std::span<const double> t) {
  std::vector<double> d(t.size() - 1);
  for (std::size_t j = 0; j + 1 < t.size(); ++j) d[j] = t[j + 1] - t[j];
  return median(d);
}

inline std::vector<double> random_start(Engine& eng, std::size_t k, const TransformBounds& b, double y_max,
                                        double step) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  PeakParameters p;
  std::vector<double> mu(k);
  for (;;) {
    for (auto& v : mu) v = b.t_lo + U(eng) * (b.t_hi - b.t_lo);
    std::sort(mu.begin(), mu.end());
    bool ok = true;
    double prev = b.t_lo;
    for (double v : mu) ok = ok && v > prev, prev = v;
    if (ok && b.t_hi > prev) break;
  }
  const double g_hi = y_max > 0.0 ? 2.0 * y_max : 1.0;
  const double a_lo = step, a_hi = std::max(0.5 * (b.t_hi - b.t_lo), 2.0 * step);
  for (std::size_t i = 0; i < k; ++i) {
    PearsonComponent c;
    c.mu = mu[i];
    c.gamma = std::max(U(eng) * g_hi, 1e-12 * g_hi);
    c.a = a_lo + U(eng) * (a_hi - a_lo);
    c.m = 1.0 + std::max(std::exp(U(eng) * std::log(100.0)) - 1.0, 1e-6);
    p.components.push_back(c);
  }
  return inverse_transform(p, b);
}

inline bool near_duplicate(const SegmentFit& x, const SegmentFit& y, const TransformBounds& b, double tol) {
  if (x.k() != y.k()) return false;
  auto rel = [](double u, double v) {
    const double s = std::max({std::abs(u), std::abs(v), 1e-300});
    return std::abs(u - v) / s;
  };
  double d = std::max(std::abs(x.beta0 - y.beta0) / b.d0, std::abs(x.beta1 - y.beta1) / b.d1);
  for (std::size_t i = 0; i < x.k(); ++i) {
    const auto &p = x.components[i], &q = y.components[i];
    d = std::max({d, rel(p.mu, q.mu), rel(p.gamma, q.gamma), rel(p.a, q.a), rel(p.m, q.m)});
  }
  return d < tol;
}

}  // namespace detail

/// Random-restart fit with increasing k. Returns the accepted solutions of the
/// first accepting k (at most n_solutions, ranked by R) followed by the best
/// rejected fit of every smaller k. If no k up to max_k is accepted, only the
/// best rejected fit of each k is returned.
inline std::vector<SegmentFit> fit_segment(const SegmentData& s, const FitConfig& cfg, ThresholdCache& thresholds) {
  s.validate();
  cfg.validate();
  const auto b = segment_bounds(s, cfg);
  const double c_L = thresholds.get(s.size());
  const double step = detail::median_step(s.t);
  const double y_max = *std::max_element(s.y.begin(), s.y.end());

  std::vector<SegmentFit> accepted, rejected;
  for (std::size_t k = 1; k <= cfg.max_k && accepted.empty(); ++k) {
    SegmentFit best;
    best.objective = std::numeric_limits<double>::infinity();
    bool found = false;
    for (std::size_t r = 0; r < cfg.restarts_per_k; ++r) {
      Engine eng = make_engine(cfg.seed, (static_cast<std::uint64_t>(k) << 32) | r);
      auto x0 = detail::random_start(eng, k, b, y_max, step);
      auto fn = [&](const std::vector<double>& x, std::vector<double>& g) {
        auto o = wls_objective(x, k, b, s.t, s.y, s.scale);
        g = std::move(o.gradient);
        return o.value;
      };
      const auto res = bfgs_minimize(fn, std::move(x0), cfg.bfgs);
      if (!std::isfinite(res.value)) continue;

      const auto par = transform_params(res.x, k, b);
      SegmentFit cand;
      cand.beta0 = par.beta0;
      cand.beta1 = par.beta1;
      cand.center = b.center();
      cand.components = par.components;
      cand.objective = res.value;
      cand.threshold = c_L;

      // Before the first acceptance only improvements are tested; afterwards
      // every local minimum is a potential alternative solution.
      const bool improves = cand.objective < best.objective;
      if (!found && !improves) continue;
      bool valid = true;
      for (const auto& c : cand.components)
        valid = valid && std::isfinite(c.gamma) && std::isfinite(c.mu) && std::isfinite(c.m) && std::isfinite(c.a) &&
                c.a > 0.0 && c.m >= 1.0;
      if (!valid) continue;
      cand.statistic = acceptance_statistic(s, cand).value;
      cand.accepted = cand.statistic <= c_L;
      detail::finalize(cand);
      if (improves) best = cand;
      if (cand.accepted) {
        found = true;
        const bool dup = std::any_of(accepted.begin(), accepted.end(), [&](const SegmentFit& f) {
          return detail::near_duplicate(f, cand, b, cfg.dedupe_tolerance);
        });
        if (!dup) accepted.push_back(std::move(cand));
        if (accepted.size() >= cfg.n_solutions) break;
      }
    }
    if (!found && std::isfinite(best.objective)) rejected.push_back(std::move(best));
  }

  auto by_r = [](const SegmentFit& x, const SegmentFit& y) { return x.objective < y.objective; };
  std::stable_sort(accepted.begin(), accepted.end(), by_r);
  std::stable_sort(rejected.begin(), rejected.end(), by_r);
  accepted.insert(accepted.end(), std::make_move_iterator(rejected.begin()), std::make_move_iterator(rejected.end()));
  return accepted;
}

inline std::vector<SegmentFit> fit_segment(const SegmentData& s, const FitConfig& cfg, double alpha = 0.95,
                                           std::uint64_t threshold_seed = 0,
                                           std::size_t replicates = kDefaultReplicates) {
  ThresholdCache cache(alpha, threshold_seed, replicates);
  return fit_segment(s, cfg, cache);
}

}  // namespace diffraxis
