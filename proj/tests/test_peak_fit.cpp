#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "diffraxis/peak_fit.hpp"
#include "diffraxis/pipeline.hpp"
#include "diffraxis/synthetic.hpp"
#include "support.hpp"

using namespace diffraxis;
using Catch::Approx;

namespace {

ThresholdCache& cache() {
  static ThresholdCache c(0.95, kThresholdSeed, 10000);
  return c;
}

// Baseline-subtracted segment of width 3° around the given kernels, with
// Poisson-like noise of standard deviation max(7, √f).
SegmentData make_segment(const std::vector<PearsonComponent>& kernels, std::uint64_t seed, bool noisy = true,
                         double lo = 29.0) {
  const std::size_t L = 301;
  SegmentData s;
  s.t = synthetic::grid(lo, 0.01, L);
  std::vector<double> f(L);
  for (std::size_t j = 0; j < L; ++j) {
    s.baseline.push_back(synthetic::fixture_baseline(s.t[j]));
    f[j] = s.baseline[j];
    for (const auto& c : kernels) f[j] += pearson_eval(c, s.t[j]);
  }
  const auto d = noisy ? synthetic::with_noise(s.t, f, 7.0, seed) : Diffractogram(s.t, f);
  for (std::size_t j = 0; j < L; ++j) {
    s.y.push_back(d.count(j) - s.baseline[j]);
    s.scale.push_back(std::max(7.0, std::sqrt(f[j])));
    s.floor.push_back(7.0);
  }
  return s;
}

PearsonComponent kernel(double gamma, double mu, double m, double fwhm) {
  return {gamma, mu, m, pearson_a_from_fwhm(fwhm, m)};
}

TransformBounds bounds() {
  TransformBounds b;
  b.t_lo = 29.0;
  b.t_hi = 32.0;
  b.d0 = 5.0;
  b.d1 = 5.0;
  return b;
}

std::vector<double> random_raw(std::size_t k, Engine& eng) {
  std::uniform_real_distribution<double> u(-1.5, 1.5), lg(std::log(50.0), std::log(1000.0)),
      la(std::log(0.03), std::log(0.5)), lm(std::log(0.1), std::log(20.0));
  std::vector<double> x(raw_size(k));
  for (std::size_t i = 0; i < 2 + k; ++i) x[i] = u(eng);
  for (std::size_t i = 0; i < k; ++i) {
    x[2 + k + 3 * i] = lg(eng);
    x[3 + k + 3 * i] = la(eng);
    x[4 + k + 3 * i] = lm(eng);
  }
  return x;
}

}  // namespace

TEST_CASE("model evaluation", "[peak_fit]") {
  SegmentFit f;
  f.beta0 = 2.0;
  f.beta1 = 0.5;
  f.center = 10.0;
  f.components = {{4.0, 10.0, 1.0, 1.0}};
  CHECK(model_eval(10.0, f) == 6.0);
  CHECK(model_eval(11.0, f) == 4.5);
  SegmentFit g = f;
  g.components.push_back({3.0, 12.0, 2.0, 0.5});
  SegmentFit h = f;
  h.components = {{3.0, 12.0, 2.0, 0.5}};
  for (double t : {8.0, 10.3, 12.0, 15.0})
    CHECK(model_eval(t, g) == Approx(model_eval(t, f) + model_eval(t, h) - 2.0 - 0.5 * (t - 10.0)).epsilon(1e-14));
  const std::vector<double> ts{9.0, 10.0};
  CHECK(model_eval(ts, f) == std::vector<double>{model_eval(9.0, f), 6.0});
}

TEST_CASE("objective vanishes on exact data", "[peak_fit]") {
  auto eng = make_engine(51, 0);
  const auto b = bounds();
  const auto t = synthetic::grid(29.0, 0.01, 301);
  for (std::size_t k = 1; k <= 3; ++k) {
    const auto raw = random_raw(k, eng);
    const auto p = transform_params(raw, k, b);
    SegmentFit f;
    f.beta0 = p.beta0;
    f.beta1 = p.beta1;
    f.center = b.center();
    f.components = p.components;
    const auto y = model_eval(t, f);
    const std::vector<double> s(t.size(), 3.0);
    const auto o = wls_objective(raw, k, b, t, y, s);
    CHECK(o.value < 1e-20);
    for (double g : o.gradient) CHECK(std::abs(g) < 1e-8);
  }
}

TEST_CASE("analytic gradient matches central differences", "[peak_fit][oracle]") {
  auto eng = make_engine(52, 0);
  const auto b = bounds();
  const auto seg = make_segment({kernel(800, 30.4, 3, 0.25), kernel(300, 31.0, 5, 0.3)}, 53);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 1 + trial % 3;
    const auto x = random_raw(k, eng);
    const auto o = wls_objective(x, k, b, seg.t, seg.y, seg.scale);
    std::vector<double> fd(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
      auto xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      fd[i] = (wls_objective(xp, k, b, seg.t, seg.y, seg.scale).value -
               wls_objective(xm, k, b, seg.t, seg.y, seg.scale).value) / (2.0 * h);
    }
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      num += (fd[i] - o.gradient[i]) * (fd[i] - o.gradient[i]);
      den += o.gradient[i] * o.gradient[i];
    }
    worst = std::max(worst, std::sqrt(num / den));
  }
  INFO("worst relative gradient error " << worst);
  CHECK(worst < 1e-5);
}

TEST_CASE("objective does not depend on component order", "[peak_fit][property]") {
  const auto seg = make_segment({kernel(800, 30.4, 3, 0.25)}, 54);
  PeakParameters p{1.0, 0.2, {kernel(500, 30.4, 3, 0.25), kernel(100, 30.9, 1.5, 0.4), kernel(50, 29.7, 8, 0.2)}};
  const double r = wls_value(p, 30.5, seg.t, seg.y, seg.scale);
  std::swap(p.components[0], p.components[2]);
  CHECK(wls_value(p, 30.5, seg.t, seg.y, seg.scale) == Approx(r).epsilon(1e-12));
  std::swap(p.components[1], p.components[2]);
  CHECK(wls_value(p, 30.5, seg.t, seg.y, seg.scale) == Approx(r).epsilon(1e-12));
}

TEST_CASE("ordering transform round-trips and keeps centres ordered", "[peak_fit][property]") {
  auto eng = make_engine(55, 0);
  const auto b = bounds();
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 1 + trial % 4;
    const auto x = random_raw(k, eng);
    const auto p = transform_params(x, k, b);
    double prev = b.t_lo;
    for (const auto& c : p.components) {
      CHECK(c.mu > prev);
      CHECK(c.m >= 1.0);
      CHECK(c.a > 0.0);
      prev = c.mu;
    }
    CHECK(prev < b.t_hi);
    CHECK(std::abs(p.beta0) < b.d0);
    const auto back = transform_params(inverse_transform(p, b), k, b);
    CHECK(back.beta0 == Approx(p.beta0).epsilon(1e-10).margin(1e-12));
    CHECK(back.beta1 == Approx(p.beta1).epsilon(1e-10).margin(1e-12));
    for (std::size_t i = 0; i < k; ++i) {
      CHECK(back.components[i].mu == Approx(p.components[i].mu).epsilon(1e-10));
      CHECK(back.components[i].gamma == Approx(p.components[i].gamma).epsilon(1e-10));
      CHECK(back.components[i].a == Approx(p.components[i].a).epsilon(1e-10));
      CHECK(back.components[i].m == Approx(p.components[i].m).epsilon(1e-10));
    }
  }
  std::vector<double> big(raw_size(1), 0.0);
  big[0] = 1e3;
  big[1] = -1e3;
  const auto sat = transform_params(big, 1, b);
  CHECK(sat.beta0 == b.d0);
  CHECK(sat.beta1 == -b.d1);
  PeakParameters out_of_range{10.0, 0.0, {kernel(1, 30, 2, 0.2)}};
  CHECK_THROWS_AS(inverse_transform(out_of_range, b), DomainError);
  CHECK_THROWS_AS(transform_params(big, 2, b), InvalidInput);
}

TEST_CASE("single kernel is recovered", "[peak_fit][simulation]") {
  FitConfig cfg;
  const auto truth = kernel(800, 30.4, 3, 0.25);
  const std::size_t runs = 20;
  std::size_t ok = 0;
  for (std::uint64_t seed = 0; seed < runs; ++seed) {
    cfg.seed = seed;
    const auto fits = fit_segment(make_segment({truth}, 600 + seed), cfg, cache());
    REQUIRE_FALSE(fits.empty());
    const auto& f = fits.front();
    if (f.accepted && f.k() == 1 && std::abs(f.components[0].mu - truth.mu) < 0.01 &&
        std::abs(f.stats[0].fwhm / 0.25 - 1.0) < 0.1)
      ++ok;
  }
  INFO("recovered " << ok << "/" << runs);
  CHECK(test::rate(ok, runs) >= 0.9);
}

TEST_CASE("two separated kernels need k = 2", "[peak_fit][simulation]") {
  FitConfig cfg;
  const std::vector<PearsonComponent> truth{kernel(600, 30.0, 2, 0.25), kernel(400, 31.25, 4, 0.25)};
  const std::size_t runs = 10;
  std::size_t ok = 0;
  for (std::uint64_t seed = 0; seed < runs; ++seed) {
    cfg.seed = 100 + seed;
    const auto fits = fit_segment(make_segment(truth, 700 + seed), cfg, cache());
    const auto& f = fits.front();
    if (f.accepted && f.k() == 2 && std::abs(f.components[0].mu - 30.0) < 0.02 &&
        std::abs(f.components[1].mu - 31.25) < 0.02)
      ++ok;
    // The rejected one-kernel fit is reported after the accepted ones.
    CHECK(fits.back().k() == 1);
    CHECK_FALSE(fits.back().accepted);
  }
  CHECK(test::rate(ok, runs) >= 0.9);
}

TEST_CASE("noiseless data is fitted to round-off", "[peak_fit]") {
  FitConfig cfg;
  cfg.seed = 9;
  const auto fits = fit_segment(make_segment({kernel(800, 30.4, 3, 0.25)}, 0, false), cfg, cache());
  REQUIRE(fits.front().accepted);
  CHECK(fits.front().objective < 1e-6);
}

TEST_CASE("reported fits are consistent and reproducible", "[peak_fit]") {
  FitConfig cfg;
  cfg.seed = 77;
  const auto seg = make_segment({kernel(300, 30.6, 5, 0.3)}, 800);
  const auto a = fit_segment(seg, cfg, cache());
  const auto b = fit_segment(seg, cfg, cache());
  CHECK(a == b);
  const auto tb = segment_bounds(seg, cfg);
  const double cl = cache().get(seg.size());
  bool seen_rejected = false;
  for (const auto& f : a) {
    CHECK(f.threshold == cl);
    CHECK(acceptance_statistic(seg, f).value == f.statistic);
    CHECK(f.accepted == (f.statistic <= cl));
    if (!f.accepted) seen_rejected = true;
    if (f.accepted) CHECK_FALSE(seen_rejected);  // accepted fits come first
    CHECK(std::abs(f.beta0) <= tb.d0);
    CHECK(std::abs(f.beta1) <= tb.d1);
    for (const auto& c : f.components) {
      CHECK(c.mu > tb.t_lo);
      CHECK(c.mu < tb.t_hi);
    }
    CHECK(f.stats.size() == f.k());
    CHECK(f.negligible.size() == f.k());
  }
  for (std::size_t i = 1; i < a.size(); ++i)
    if (a[i].accepted) CHECK(a[i - 1].objective <= a[i].objective);
}

TEST_CASE("segment inputs are validated", "[peak_fit]") {
  SegmentData s;
  s.t = {1, 2, 3, 4};
  s.y = s.baseline = s.scale = {1, 1, 1, 1};
  CHECK_THROWS_AS(fit_segment(s, FitConfig{}, cache()), InvalidInput);
  auto seg = make_segment({kernel(300, 30.6, 5, 0.3)}, 1);
  FitConfig bad;
  bad.restarts_per_k = 0;
  CHECK_THROWS_AS(fit_segment(seg, bad, cache()), InvalidInput);
  seg.scale.pop_back();
  CHECK_THROWS_AS(fit_segment(seg, FitConfig{}, cache()), InvalidInput);
}
