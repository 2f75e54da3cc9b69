#pragma once

// Taut-string reconstruction inside a per-point tube around the integrated data.
//
// The string runs from (0, 0) to (n, S_n) and stays within
// [S_i - ε_i, S_i + ε_i]; its slopes (scaled back to counts) form a step
// function with the fewest local extremes among all tube-feasible paths.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "diffractogram.hpp"
#include "error.hpp"
#include "multiscale.hpp"
#include "variance_segmentation.hpp"

namespace diffraxis {

/// S_i = (1/n)·Σ_{j<=i} y_j for i = 1..n (S_0 = 0 is implicit).
inline std::vector<double> partial_sums(std::span<const double> y) {
  std::vector<double> s(y.size());
  const double inv_n = 1.0 / static_cast<double>(y.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    acc += y[i];
    s[i] = acc * inv_n;
  }
  return s;
}

inline std::vector<double> partial_sums(const Diffractogram& d) { return partial_sums(d.counts()); }

/// Tube on the nodes 0..n. Node 0 and node n are pinned to S_0 = 0 and S_n.
struct Tube {
  std::vector<double> centers;      // S_0..S_n
  std::vector<double> half_widths;  // ε_0..ε_n; the end values are ignored

  static Tube around(std::span<const double> y, double eps) {
    Tube t;
    const auto s = partial_sums(y);
    t.centers.assign(1, 0.0);
    t.centers.insert(t.centers.end(), s.begin(), s.end());
    t.half_widths.assign(t.centers.size(), eps);
    return t;
  }

  std::size_t nodes() const noexcept { return centers.size(); }
  std::size_t samples() const noexcept { return centers.size() - 1; }

  bool pinned(std::size_t i) const noexcept { return i == 0 || i + 1 == centers.size(); }
  double upper(std::size_t i) const { return pinned(i) ? centers[i] : centers[i] + half_widths[i]; }
  double lower(std::size_t i) const { return pinned(i) ? centers[i] : centers[i] - half_widths[i]; }
};

enum class Wall { pinned, upper, lower };

enum class ExtremeKind { maximum, minimum };

struct LocalExtreme {
  ExtremeKind kind;
  IndexRange samples;  // data indices covered by the plateau
  double value;

  friend bool operator==(const LocalExtreme&, const LocalExtreme&) = default;
};

/// Piecewise-constant reconstruction; piece k covers samples [knots[k], knots[k+1]).
struct StepFunction {
  std::vector<std::size_t> knots;  // node indices, first 0, last n
  std::vector<Wall> walls;         // wall touched at each knot
  std::vector<double> raw_values;  // string slopes in counts
  std::vector<double> values;      // after the cross-over mean correction
  std::size_t wall_ties = 0;       // interior knots where both walls coincide

  std::size_t pieces() const noexcept { return values.size(); }
  std::size_t samples() const noexcept { return knots.empty() ? 0 : knots.back(); }

  IndexRange piece_range(std::size_t k) const { return {knots[k], knots[k + 1] - 1}; }

  std::vector<double> evaluate() const { return expand(values); }

  std::vector<double> expand(std::span<const double> piece_values) const {
    std::vector<double> out(samples());
    for (std::size_t k = 0; k < piece_values.size(); ++k)
      std::fill(out.begin() + static_cast<std::ptrdiff_t>(knots[k]),
                out.begin() + static_cast<std::ptrdiff_t>(knots[k + 1]), piece_values[k]);
    return out;
  }

  /// Interior strict extremes of the step function; equal neighbouring pieces
  /// are merged into plateaus first.
  std::vector<LocalExtreme> extremes() const { return extremes_of(values); }

  std::vector<LocalExtreme> extremes_of(std::span<const double> piece_values) const {
    struct Run {
      IndexRange r;
      double v;
    };
    std::vector<Run> runs;
    for (std::size_t k = 0; k < piece_values.size(); ++k) {
      const auto r = piece_range(k);
      if (!runs.empty() && runs.back().v == piece_values[k])
        runs.back().r.last = r.last;
      else
        runs.push_back({r, piece_values[k]});
    }
    std::vector<LocalExtreme> out;
    for (std::size_t k = 1; k + 1 < runs.size(); ++k) {
      const double v = runs[k].v;
      if (v > runs[k - 1].v && v > runs[k + 1].v) out.push_back({ExtremeKind::maximum, runs[k].r, v});
      if (v < runs[k - 1].v && v < runs[k + 1].v) out.push_back({ExtremeKind::minimum, runs[k].r, v});
    }
    return out;
  }

  friend bool operator==(const StepFunction&, const StepFunction&) = default;

  std::size_t count_maxima() const {
    const auto ex = extremes();
    return static_cast<std::size_t>(
        std::count_if(ex.begin(), ex.end(), [](const LocalExtreme& e) { return e.kind == ExtremeKind::maximum; }));
  }
};

/// Shortest path through the tube (funnel algorithm, O(n)).
///
/// The upper chain holds candidate contacts with U (a convex chain), the lower
/// chain candidate contacts with L (concave). A new upper point that dips below
/// the first lower segment as seen from the apex fixes that lower contact as a
/// knot; symmetrically for a new lower point. Pieces running from an upper to a
/// lower contact (or back) are local extremes of the slope; their value is
/// replaced by the mean of the observations they span.
inline StepFunction taut_string_solve(const Tube& tube) {
  const std::size_t N = tube.nodes();
  if (N < 2) throw InvalidInput("taut_string_solve: empty tube");
  if (tube.half_widths.size() != N) throw InvalidInput("taut_string_solve: half-width array size mismatch");
  for (std::size_t i = 1; i + 1 < N; ++i)
    if (!(tube.half_widths[i] >= 0.0)) throw InvalidInput("taut_string_solve: crossed tube at node " + std::to_string(i));

  const std::size_t n = N - 1;
  const double scale = static_cast<double>(n);  // slope in S units -> counts

  struct Vertex {
    std::size_t i;
    double y;
    Wall wall;
  };
  auto slope = [](const Vertex& a, const Vertex& b) {
    return (b.y - a.y) / static_cast<double>(b.i - a.i);
  };

  StepFunction out;
  Vertex apex{0, 0.0, Wall::pinned};
  std::vector<Vertex> path{apex};
  auto emit = [&](const Vertex& v) {
    path.push_back(v);
    apex = v;
  };

  std::deque<Vertex> up, lo;
  for (std::size_t i = 1; i <= n; ++i) {
    const bool end = (i == n);
    const Vertex pu{i, tube.upper(i), end ? Wall::pinned : Wall::upper};
    const Vertex pl{i, tube.lower(i), end ? Wall::pinned : Wall::lower};

    bool moved = false;
    while (!lo.empty() && slope(apex, pu) < slope(apex, lo.front())) {
      emit(lo.front());
      lo.pop_front();
      moved = true;
    }
    if (moved) {
      up.clear();
    } else {
      while (!up.empty()) {
        const Vertex& prev = up.size() >= 2 ? up[up.size() - 2] : apex;
        if (slope(prev, up.back()) >= slope(prev, pu))
          up.pop_back();
        else
          break;
      }
    }
    up.push_back(pu);

    moved = false;
    while (!up.empty() && up.front().i < i && slope(apex, pl) > slope(apex, up.front())) {
      emit(up.front());
      up.pop_front();
      moved = true;
    }
    if (moved) {
      lo.clear();
    } else {
      while (!lo.empty()) {
        const Vertex& prev = lo.size() >= 2 ? lo[lo.size() - 2] : apex;
        if (slope(prev, lo.back()) <= slope(prev, pl))
          lo.pop_back();
        else
          break;
      }
    }
    lo.push_back(pl);
  }
  emit(Vertex{n, tube.centers[n], Wall::pinned});

  // Contacts lying on one straight segment split it into pieces of equal
  // slope; fold them so the segment is a single piece.
  std::vector<Vertex> knots{path[0]};
  for (std::size_t k = 1; k < path.size(); ++k) {
    if (knots.size() >= 2) {
      const double a = slope(knots[knots.size() - 2], knots.back()), b = slope(knots.back(), path[k]);
      if (std::abs(a - b) <= 1e-9 * std::max({std::abs(a), std::abs(b), 1e-300})) {
        knots.back() = path[k];
        continue;
      }
    }
    knots.push_back(path[k]);
  }
  for (std::size_t k = 0; k < knots.size(); ++k) {
    const auto& v = knots[k];
    if (k > 0) out.raw_values.push_back(slope(knots[k - 1], v) * scale);
    out.knots.push_back(v.i);
    out.walls.push_back(v.wall);
    if (v.i != 0 && v.i != n && tube.half_widths[v.i] == 0.0) ++out.wall_ties;
  }

  out.values = out.raw_values;
  for (std::size_t k = 0; k + 1 < out.knots.size(); ++k) {
    const Wall a = out.walls[k], b = out.walls[k + 1];
    const bool crossover = (a == Wall::upper && b == Wall::lower) || (a == Wall::lower && b == Wall::upper);
    if (crossover) {
      const std::size_t i0 = out.knots[k], i1 = out.knots[k + 1];
      out.values[k] = (tube.centers[i1] - tube.centers[i0]) / static_cast<double>(i1 - i0) * scale;
    }
  }
  return out;
}

struct SqueezeConfig {
  double tau = 2.5;
  double q = 0.9;
  std::size_t max_iterations = 100000;
};

struct SqueezeResult {
  StepFunction fit;
  std::vector<double> half_widths;
  std::size_t iterations = 0;
};

/// Starting from a tube wide enough to hold the mean, shrinks ε by q at both
/// nodes bracketing every sample of every violating interval until the
/// reconstruction satisfies the multiresolution criterion.
inline SqueezeResult local_squeeze_fit(std::span<const double> y, const NoiseProfile& scale,
                                       const IntervalScheme& scheme, double threshold, double q,
                                       std::size_t max_iterations = 100000) {
  const std::size_t n = y.size();
  if (!(q > 0.0 && q < 1.0)) throw InvalidInput("local_squeeze_fit: q must lie in (0,1)");
  if (scale.size() != n || scheme.n() != n) throw InvalidInput("local_squeeze_fit: size mismatch");

  Tube tube = Tube::around(y, 0.0);
  const auto [smin, smax] = std::minmax_element(tube.centers.begin(), tube.centers.end());
  std::fill(tube.half_widths.begin(), tube.half_widths.end(), 2.0 * (*smax - *smin) + 1.0);

  constexpr double underflow = 1e-12;
  std::vector<double> residuals(n);
  std::vector<int> mark(n + 2);
  for (std::size_t it = 1; it <= max_iterations; ++it) {
    StepFunction fit = taut_string_solve(tube);
    const auto f = fit.evaluate();
    for (std::size_t i = 0; i < n; ++i) residuals[i] = y[i] - f[i];
    const auto check = adequacy_check(residuals, scheme, scale, threshold);
    if (check.adequate) return {std::move(fit), tube.half_widths, it};

    // Sample j lies between nodes j and j+1.
    std::fill(mark.begin(), mark.end(), 0);
    for (const auto& I : check.violating) {
      ++mark[I.first];
      --mark[I.last + 2];
    }
    bool progressed = false;
    int running = 0;
    for (std::size_t node = 0; node <= n; ++node) {
      running += mark[node];
      if (running <= 0 || tube.pinned(node)) continue;
      double& e = tube.half_widths[node];
      if (e == 0.0) continue;
      e *= q;
      if (e < underflow) e = 0.0;
      progressed = true;
    }
    if (!progressed)
      throw NumericalDiagnostic("taut string",
                                "tube collapsed below 1e-12 without meeting the criterion; the scale "
                                "profile is inconsistent with the data");
  }
  throw NumericalDiagnostic("taut string", "squeeze iteration limit reached");
}

struct DenoiseConfig {
  double tau = 2.5;
  double q = 0.9;
  bool hetero = false;
  double segmentation_tau = 3.0;
};

struct DenoiseResult {
  StepFunction fit;          // second-pass reconstruction
  NoiseProfile scale;        // Σ_n used in the second pass
  StepFunction first_pass;   // constant-noise reconstruction
  double sigma = 0.0;        // global MAD estimate (clamped)
  std::optional<PiecewiseConstantScale> ground_noise;  // set when hetero
  std::size_t iterations_first = 0, iterations_second = 0;
};

/// Constant-noise pass, local scale Σ_n = max(floor, √f), then a second pass
/// under Σ_n. The floor is the global estimate or, with `hetero`, a
/// piecewise-constant level fitted to the first-pass residuals.
inline DenoiseResult denoise_two_pass(std::span<const double> y, const DenoiseConfig& cfg) {
  const std::size_t n = y.size();
  if (n < 3) throw InvalidInput("denoise_two_pass: need at least 3 samples");
  DenoiseResult out;
  out.sigma = std::max(global_scale_estimate(y), kScaleFloor);
  const auto scheme = IntervalScheme::dyadic(n);
  const double thr = residual_threshold(n, cfg.tau);

  auto pass1 = local_squeeze_fit(y, NoiseProfile::constant(n, out.sigma), scheme, thr, cfg.q);
  const auto f1 = pass1.fit.evaluate();

  std::vector<double> floor(n, out.sigma);
  if (cfg.hetero) {
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = y[i] - f1[i];
    auto seg = greedy_segmentation(r, alpha_n(n, cfg.segmentation_tau));
    floor = seg.expand();
    for (auto& v : floor) v = std::max(v, kScaleFloor);
    out.ground_noise = std::move(seg);
  }
  out.scale = local_scale(f1, floor);

  auto pass2 = local_squeeze_fit(y, out.scale, scheme, thr, cfg.q);
  out.first_pass = std::move(pass1.fit);
  out.fit = std::move(pass2.fit);
  out.iterations_first = pass1.iterations;
  out.iterations_second = pass2.iterations;
  return out;
}

inline DenoiseResult denoise_two_pass(const Diffractogram& d, const DenoiseConfig& cfg) {
  return denoise_two_pass(d.counts(), cfg);
}

}  // namespace diffraxis
