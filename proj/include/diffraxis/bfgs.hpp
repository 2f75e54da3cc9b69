#pragma once

// Dense BFGS with a strong-Wolfe line search (bracketing plus zoom by
// safeguarded cubic interpolation). Non-finite objective values are treated
// as +∞ so the search backs away from overflow regions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace diffraxis {

struct BfgsOptions {
  std::size_t max_iterations = 500;
  double gradient_tolerance = 1e-8;
  // Stop after this many consecutive steps with relative decrease below stall_tolerance.
  double stall_tolerance = 1e-14;
  std::size_t stall_window = 5;
  double c1 = 1e-4;
  double c2 = 0.9;
};

enum class BfgsStatus { gradient_converged, stalled, line_search_failed, max_iterations };

struct BfgsResult {
  std::vector<double> x;
  double value = 0.0;
  std::vector<double> gradient;
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
  BfgsStatus status = BfgsStatus::max_iterations;
};

namespace detail {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double inf_norm(const std::vector<double>& a) {
  double s = 0.0;
  for (double v : a) s = std::max(s, std::abs(v));
  return s;
}

// Minimiser of the cubic through (a, fa, da), (b, fb, db), kept inside the
// middle 80% of [a, b]; falls back to bisection.
inline double cubic_step(double a, double fa, double da, double b, double fb, double db) {
  const double lo = std::min(a, b), hi = std::max(a, b);
  const double d1 = da + db - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - da * db;
  double t = 0.5 * (a + b);
  if (disc >= 0.0 && std::isfinite(fb)) {
    const double d2 = std::copysign(std::sqrt(disc), b - a);
    const double c = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    if (std::isfinite(c)) t = c;
  }
  const double margin = 0.1 * (hi - lo);
  return std::clamp(t, lo + margin, hi - margin);
}

}  // namespace detail

/// Minimises f, where f(x, g) returns the value and writes the gradient into g.
template <class F>
BfgsResult bfgs_minimize(F&& f, std::vector<double> x0, const BfgsOptions& opt = {}) {
  const std::size_t n = x0.size();
  BfgsResult res;
  res.x = std::move(x0);
  res.gradient.assign(n, 0.0);

  auto eval = [&](const std::vector<double>& x, std::vector<double>& g) {
    ++res.evaluations;
    const double v = f(x, g);
    if (!std::isfinite(v)) return std::numeric_limits<double>::infinity();
    for (double gi : g)
      if (!std::isfinite(gi)) return std::numeric_limits<double>::infinity();
    return v;
  };

  res.value = eval(res.x, res.gradient);
  if (!std::isfinite(res.value)) {
    res.status = BfgsStatus::line_search_failed;
    return res;
  }

  std::vector<double> H(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) H[i * n + i] = 1.0;
  bool scaled = false;

  std::vector<double> p(n), xt(n), gt(n), s(n), y(n), Hy(n);
  std::size_t stall = 0;

  for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
    if (detail::inf_norm(res.gradient) < opt.gradient_tolerance) {
      res.status = BfgsStatus::gradient_converged;
      return res;
    }
    for (std::size_t i = 0; i < n; ++i) {
      double v = 0.0;
      for (std::size_t j = 0; j < n; ++j) v -= H[i * n + j] * res.gradient[j];
      p[i] = v;
    }
    double d0 = detail::dot(p, res.gradient);
    if (!(d0 < 0.0)) {  // lost descent: reset to steepest descent
      std::fill(H.begin(), H.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) H[i * n + i] = 1.0, p[i] = -res.gradient[i];
      d0 = detail::dot(p, res.gradient);
      scaled = false;
    }

    const double f0 = res.value;
    auto phi = [&](double alpha, double& dphi) {
      for (std::size_t i = 0; i < n; ++i) xt[i] = res.x[i] + alpha * p[i];
      const double v = eval(xt, gt);
      dphi = std::isfinite(v) ? detail::dot(gt, p) : 0.0;
      return v;
    };

    // Strong Wolfe search.
    double a_prev = 0.0, f_prev = f0, d_prev = d0;
    double alpha = scaled ? 1.0 : std::min(1.0, 1.0 / std::max(detail::inf_norm(p), 1e-300));
    double a_found = -1.0, f_found = 0.0;
    std::vector<double> g_found(n);
    auto zoom = [&](double lo, double flo, double dlo, double hi, double fhi, double dhi) {
      for (int it = 0; it < 60; ++it) {
        const double a = detail::cubic_step(lo, flo, dlo, hi, fhi, dhi);
        double da;
        const double fa = phi(a, da);
        if (!(fa <= f0 + opt.c1 * a * d0) || fa >= flo) {
          hi = a, fhi = fa, dhi = da;
        } else {
          if (std::abs(da) <= -opt.c2 * d0) {
            a_found = a, f_found = fa, g_found = gt;
            return;
          }
          if (da * (hi - lo) >= 0.0) hi = lo, fhi = flo, dhi = dlo;
          lo = a, flo = fa, dlo = da;
        }
        if (std::abs(hi - lo) <= 1e-16 * std::max(1.0, std::abs(lo))) break;
      }
      // Accept the best sufficient-decrease point seen, if any.
      if (lo > 0.0 && flo < f0) {
        double dd;
        f_found = phi(lo, dd);
        a_found = lo;
        g_found = gt;
      }
    };
    for (int it = 0; it < 60; ++it) {
      double da;
      const double fa = phi(alpha, da);
      if (!std::isfinite(fa)) {
        // Overflow: shrink toward the last good point.
        zoom(a_prev, f_prev, d_prev, alpha, fa, 0.0);
        break;
      }
      if (fa > f0 + opt.c1 * alpha * d0 || (it > 0 && fa >= f_prev)) {
        zoom(a_prev, f_prev, d_prev, alpha, fa, da);
        break;
      }
      if (std::abs(da) <= -opt.c2 * d0) {
        a_found = alpha, f_found = fa, g_found = gt;
        break;
      }
      if (da >= 0.0) {
        zoom(alpha, fa, da, a_prev, f_prev, d_prev);
        break;
      }
      a_prev = alpha, f_prev = fa, d_prev = da;
      alpha *= 2.0;
    }
    if (a_found <= 0.0) {
      res.status = BfgsStatus::line_search_failed;
      return res;
    }

    for (std::size_t i = 0; i < n; ++i) {
      s[i] = a_found * p[i];
      y[i] = g_found[i] - res.gradient[i];
      res.x[i] += s[i];
    }
    res.gradient = g_found;
    const double decrease = f0 - f_found;
    res.value = f_found;

    if (decrease <= opt.stall_tolerance * std::max(1.0, std::abs(f0))) {
      if (++stall >= opt.stall_window) {
        res.status = BfgsStatus::stalled;
        ++res.iterations;
        return res;
      }
    } else {
      stall = 0;
    }

    const double sy = detail::dot(s, y);
    if (sy <= 1e-12 * std::sqrt(detail::dot(s, s) * detail::dot(y, y))) continue;  // skip non-curvature update
    if (!scaled) {
      const double scale = sy / detail::dot(y, y);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) H[i * n + j] = (i == j) ? scale : 0.0;
      scaled = true;
    }
    // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
    const double rho = 1.0 / sy;
    for (std::size_t i = 0; i < n; ++i) {
      double v = 0.0;
      for (std::size_t j = 0; j < n; ++j) v += H[i * n + j] * y[j];
      Hy[i] = v;
    }
    const double yHy = detail::dot(y, Hy);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        H[i * n + j] += rho * ((1.0 + rho * yHy) * s[i] * s[j] - Hy[i] * s[j] - s[i] * Hy[j]);
  }
  res.status = detail::inf_norm(res.gradient) < opt.gradient_tolerance ? BfgsStatus::gradient_converged
                                                                        : BfgsStatus::max_iterations;
  return res;
}

}  // namespace diffraxis
