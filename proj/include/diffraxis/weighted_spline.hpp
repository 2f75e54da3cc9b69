#pragma once

// Weighted smoothing splines:
//   S_λ(g) = Σ λ_i (y_i − g(t_i))² + ∫ g''(t)² dt  →  min
// The minimizer is a natural cubic spline with knots at the design points.
// It is computed from the Reinsch normal equations
//   (R + Qᵀ W⁻¹ Q) γ = Qᵀ y,   g = y − W⁻¹ Q γ,   W = diag(λ),
// where γ holds the second derivatives at the interior knots. The system is
// pentadiagonal and symmetric positive definite.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "diffractogram.hpp"
#include "error.hpp"
#include "multiscale.hpp"

namespace diffraxis {

/// Natural cubic spline stored by knot values and knot second derivatives.
class NaturalCubicSpline {
public:
  NaturalCubicSpline() = default;

  NaturalCubicSpline(std::vector<double> knots, std::vector<double> values, std::vector<double> second)
      : t_(std::move(knots)), g_(std::move(values)), gamma_(std::move(second)) {
    if (t_.size() < 2 || g_.size() != t_.size() || gamma_.size() != t_.size())
      throw InvalidInput("natural spline: inconsistent array sizes");
  }

  std::span<const double> knots() const noexcept { return t_; }
  std::span<const double> values() const noexcept { return g_; }
  std::span<const double> second_derivatives() const noexcept { return gamma_; }
  std::size_t size() const noexcept { return t_.size(); }

  /// Value (order 0) or derivative (order 1, 2) at t. Beyond the end knots the
  /// spline continues linearly.
  double eval(double t, int order = 0) const {
    if (order < 0 || order > 2) throw InvalidInput("spline_eval: order must be 0, 1 or 2");
    const std::size_t n = t_.size();
    if (t <= t_.front() || t >= t_.back()) {
      const bool left = t <= t_.front();
      const std::size_t k = left ? 0 : n - 1;
      const double slope = left ? piece_derivative(0, t_[0]) : piece_derivative(n - 2, t_[n - 1]);
      if (order == 2) return 0.0;
      if (order == 1) return slope;
      return g_[k] + slope * (t - t_[k]);
    }
    const auto it = std::upper_bound(t_.begin(), t_.end(), t);
    const std::size_t i = static_cast<std::size_t>(it - t_.begin()) - 1;
    return piece(i, t, order);
  }

  double operator()(double t) const { return eval(t, 0); }

  std::vector<double> eval(std::span<const double> ts, int order = 0) const {
    std::vector<double> out(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) out[i] = eval(ts[i], order);
    return out;
  }

  /// ∫ g''² over the knot range (g'' is piecewise linear).
  double roughness() const {
    double r = 0.0;
    for (std::size_t i = 0; i + 1 < t_.size(); ++i) {
      const double h = t_[i + 1] - t_[i];
      const double a = gamma_[i], b = gamma_[i + 1];
      r += h * (a * a + a * b + b * b) / 3.0;
    }
    return r;
  }

private:
  double piece(std::size_t i, double t, int order) const {
    const double h = t_[i + 1] - t_[i];
    const double dx = t - t_[i];
    const double c2 = 0.5 * gamma_[i];
    const double c3 = (gamma_[i + 1] - gamma_[i]) / (6.0 * h);
    const double c1 = (g_[i + 1] - g_[i]) / h - h * (2.0 * gamma_[i] + gamma_[i + 1]) / 6.0;
    switch (order) {
      case 0: return g_[i] + dx * (c1 + dx * (c2 + dx * c3));
      case 1: return c1 + dx * (2.0 * c2 + 3.0 * c3 * dx);
      default: return 2.0 * c2 + 6.0 * c3 * dx;
    }
  }

  double piece_derivative(std::size_t i, double t) const { return piece(i, t, 1); }

  std::vector<double> t_, g_, gamma_;
};

namespace detail {

// Symmetric positive definite pentadiagonal system, stored by diagonals:
// d[j] = A(j,j), e[j] = A(j,j+1), f[j] = A(j,j+2).
struct Pentadiagonal {
  std::vector<double> d, e, f;

  explicit Pentadiagonal(std::size_t m) : d(m, 0.0), e(m, 0.0), f(m, 0.0) {}

  std::size_t size() const noexcept { return d.size(); }

  std::vector<double> multiply(std::span<const double> x) const {
    const std::size_t m = size();
    std::vector<double> y(m, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
      y[j] += d[j] * x[j];
      if (j + 1 < m) {
        y[j] += e[j] * x[j + 1];
        y[j + 1] += e[j] * x[j];
      }
      if (j + 2 < m) {
        y[j] += f[j] * x[j + 2];
        y[j + 2] += f[j] * x[j];
      }
    }
    return y;
  }

  // In-place LDLᵀ with bandwidth 2, then forward/back substitution.
  std::vector<double> solve(std::vector<double> b) const {
    const std::size_t m = size();
    std::vector<double> D(m), L1(m, 0.0), L2(m, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
      double dj = d[j];
      if (j >= 1) dj -= L1[j - 1] * L1[j - 1] * D[j - 1];
      if (j >= 2) dj -= L2[j - 2] * L2[j - 2] * D[j - 2];
      if (!(dj > 0.0)) throw NumericalDiagnostic("spline", "normal equations lost positive definiteness");
      D[j] = dj;
      if (j + 1 < m) {
        double ej = e[j];
        if (j >= 1) ej -= L1[j - 1] * L2[j - 1] * D[j - 1];
        L1[j] = ej / dj;
      }
      if (j + 2 < m) L2[j] = f[j] / dj;
    }
    for (std::size_t j = 0; j < m; ++j) {
      if (j >= 1) b[j] -= L1[j - 1] * b[j - 1];
      if (j >= 2) b[j] -= L2[j - 2] * b[j - 2];
    }
    for (std::size_t j = 0; j < m; ++j) b[j] /= D[j];
    for (std::size_t j = m; j-- > 0;) {
      if (j + 1 < m) b[j] -= L1[j] * b[j + 1];
      if (j + 2 < m) b[j] -= L2[j] * b[j + 2];
    }
    return b;
  }
};

struct SplineSystem {
  Pentadiagonal matrix{0};
  std::vector<double> rhs;  // Qᵀ y
};

// Interior unknown j (0-based, m = n-2) corresponds to knot j+1.
inline SplineSystem build_spline_system(std::span<const double> t, std::span<const double> y,
                                        std::span<const double> lambda) {
  const std::size_t n = t.size();
  const std::size_t m = n - 2;
  std::vector<double> h(n - 1), ih(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    h[i] = t[i + 1] - t[i];
    ih[i] = 1.0 / h[i];
  }
  SplineSystem sys{Pentadiagonal(m), std::vector<double>(m)};
  auto& A = sys.matrix;
  for (std::size_t j = 0; j < m; ++j) {
    const std::size_t k = j + 1;  // knot index
    // Q column k: rows k-1, k, k+1 -> ih[k-1], -(ih[k-1]+ih[k]), ih[k]
    const double qa = ih[k - 1], qb = -(ih[k - 1] + ih[k]), qc = ih[k];
    sys.rhs[j] = (y[k + 1] - y[k]) * ih[k] - (y[k] - y[k - 1]) * ih[k - 1];
    A.d[j] = (h[k - 1] + h[k]) / 3.0 + qa * qa / lambda[k - 1] + qb * qb / lambda[k] + qc * qc / lambda[k + 1];
    if (j + 1 < m) {
      // column k+1 has rows k, k+1, k+2 -> ih[k], -(ih[k]+ih[k+1]), ih[k+1]
      const double ra = ih[k], rb = -(ih[k] + ih[k + 1]);
      A.e[j] = h[k] / 6.0 + qb * ra / lambda[k] + qc * rb / lambda[k + 1];
    }
    if (j + 2 < m) {
      const double sa = ih[k + 1];  // column k+2, row k+1
      A.f[j] = qc * sa / lambda[k + 1];
    }
  }
  return sys;
}

}  // namespace detail

/// Minimizer of Σ λ_i (y_i − g(t_i))² + ∫ g''².
inline NaturalCubicSpline solve_weighted_spline(std::span<const double> t, std::span<const double> y,
                                                std::span<const double> lambda) {
  const std::size_t n = t.size();
  if (n < 3) throw InvalidInput("solve_weighted_spline: need at least 3 points");
  if (y.size() != n || lambda.size() != n) throw InvalidInput("solve_weighted_spline: length mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(lambda[i] > 0.0)) throw InvalidInput("solve_weighted_spline: weights must be positive");
    if (i > 0 && !(t[i] > t[i - 1])) throw InvalidInput("solve_weighted_spline: knots must increase strictly");
  }
  const auto sys = detail::build_spline_system(t, y, lambda);
  const auto inner = sys.matrix.solve(sys.rhs);

  std::vector<double> gamma(n, 0.0);
  std::copy(inner.begin(), inner.end(), gamma.begin() + 1);
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    double qg = 0.0;  // (Qγ)_i
    if (i + 1 < n) qg += (gamma[i + 1] - gamma[i]) / (t[i + 1] - t[i]);
    if (i > 0) qg -= (gamma[i] - gamma[i - 1]) / (t[i] - t[i - 1]);
    g[i] = y[i] - qg / lambda[i];
  }
  return NaturalCubicSpline(std::vector<double>(t.begin(), t.end()), std::move(g), std::move(gamma));
}

inline NaturalCubicSpline solve_weighted_spline(const Diffractogram& d, std::span<const double> lambda) {
  return solve_weighted_spline(d.angles(), d.counts(), lambda);
}

/// S_λ evaluated for spline s against data y.
inline double penalized_objective(const NaturalCubicSpline& s, std::span<const double> y,
                                  std::span<const double> lambda) {
  double r = s.roughness();
  const auto g = s.values();
  for (std::size_t i = 0; i < y.size(); ++i) r += lambda[i] * (y[i] - g[i]) * (y[i] - g[i]);
  return r;
}

inline double default_initial_weight(std::span<const double> t) {
  const double range = t.back() - t.front();
  return 1e-6 / (range * range * range * range);
}

struct WeightLoopConfig {
  double q_up = 2.0;
  std::size_t max_iterations = 200;
  double initial_weight = 0.0;  // 0 selects default_initial_weight()
};

struct AdaptiveSplineFit {
  NaturalCubicSpline spline;
  std::vector<double> weights;
  std::size_t iterations = 0;
};

/// Raised when the weight loop exhausts its iteration budget.
class WeightLoopDiagnostic : public NumericalDiagnostic {
public:
  WeightLoopDiagnostic(AdaptiveSplineFit last)
      : NumericalDiagnostic("weighted spline", "iteration cap reached before the criterion held"),
        last_(std::move(last)) {}

  const AdaptiveSplineFit& last_iterate() const noexcept { return last_; }

private:
  AdaptiveSplineFit last_;
};

/// Doubles (by q_up) the weights at samples i and i+1 for every i inside a
/// violating interval until the spline satisfies the criterion.
inline AdaptiveSplineFit fit_adaptive_weights(std::span<const double> t, std::span<const double> y,
                                              const NoiseProfile& scale, const IntervalScheme& scheme,
                                              double threshold, const WeightLoopConfig& cfg = {}) {
  const std::size_t n = t.size();
  if (!(cfg.q_up > 1.0)) throw InvalidInput("fit_adaptive_weights: growth factor must exceed 1");
  if (y.size() != n || scale.size() != n || scheme.n() != n)
    throw InvalidInput("fit_adaptive_weights: size mismatch");
  const double w0 = cfg.initial_weight > 0.0 ? cfg.initial_weight : default_initial_weight(t);

  AdaptiveSplineFit fit;
  fit.weights.assign(n, w0);
  std::vector<double> residuals(n);
  std::vector<int> mark(n + 2);
  for (std::size_t it = 1;; ++it) {
    fit.spline = solve_weighted_spline(t, y, fit.weights);
    fit.iterations = it;
    const auto g = fit.spline.values();
    for (std::size_t i = 0; i < n; ++i) residuals[i] = y[i] - g[i];
    const auto check = adequacy_check(residuals, scheme, scale, threshold);
    if (check.adequate) return fit;
    if (it >= cfg.max_iterations) throw WeightLoopDiagnostic(std::move(fit));

    std::fill(mark.begin(), mark.end(), 0);
    for (const auto& I : check.violating) {
      ++mark[I.first];
      --mark[std::min(I.last + 1, n - 1) + 1];
    }
    int running = 0;
    for (std::size_t i = 0; i < n; ++i) {
      running += mark[i];
      if (running > 0) fit.weights[i] *= cfg.q_up;
    }
  }
}

inline AdaptiveSplineFit fit_adaptive_weights(const Diffractogram& d, const NoiseProfile& scale,
                                              const IntervalScheme& scheme, double threshold,
                                              const WeightLoopConfig& cfg = {}) {
  return fit_adaptive_weights(d.angles(), d.counts(), scale, scheme, threshold, cfg);
}

}  // namespace diffraxis
