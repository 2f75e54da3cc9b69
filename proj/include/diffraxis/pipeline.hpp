#pragma once

// End-to-end decomposition DATA = BASELINE + PEAKS + NOISE.
//
//   1. two-pass taut string → denoised step function and noise scale Σ_n
//   2. adaptive weighted spline on the raw data → smooth fit and derivative
//   3. peak intervals from taut-string maxima and the spline derivative
//   4. baseline spline refitted outside the peak intervals
//   5. Pearson VII decomposition of every baseline-subtracted interval

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "baseline.hpp"
#include "crystallography.hpp"
#include "diffractogram.hpp"
#include "error.hpp"
#include "multiscale.hpp"
#include "peak_fit.hpp"
#include "taut_string.hpp"
#include "variance_segmentation.hpp"
#include "weighted_spline.hpp"

namespace diffraxis {

inline constexpr const char* kVersion = "1.0.0";

/// Seed for the C_L simulation. Kept apart from the restart seed so thresholds
/// stay fixed while restarts are re-randomised.
inline constexpr std::uint64_t kThresholdSeed = 0x5eedc0de2024ULL;

/// A peak position tagged with Miller indices; matched to the nearest fitted component.
struct HklAssignment {
  double two_theta = 0.0;
  MillerIndices hkl{};

  friend bool operator==(const HklAssignment&, const HklAssignment&) = default;
};

struct PipelineConfig {
  double tau = 2.5;
  double alpha = 0.95;
  bool hetero = false;
  double q_squeeze = 0.9;
  double q_weights = 2.0;
  std::size_t max_kernels = 4;
  std::size_t restarts = 200;
  std::size_t solutions = 3;
  std::uint64_t seed = 0;
  std::uint64_t threshold_seed = kThresholdSeed;
  std::size_t threshold_replicates = kDefaultReplicates;
  LatticeConfig lattice{};
  std::vector<HklAssignment> assignments;
  double assignment_tolerance = 0.5;  // degrees

  void validate() const {
    if (!(tau > 0.0)) throw InvalidInput("config: tau must be positive");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("config: alpha must lie in (0,1)");
    if (!(q_squeeze > 0.0 && q_squeeze < 1.0)) throw InvalidInput("config: q-squeeze must lie in (0,1)");
    if (!(q_weights > 1.0)) throw InvalidInput("config: q-weights must exceed 1");
    if (max_kernels == 0 || restarts == 0 || solutions == 0 || threshold_replicates == 0)
      throw InvalidInput("config: kernel, restart, solution and replicate counts must be positive");
    lattice.validate();
    for (const auto& a : assignments)
      if (a.hkl.norm2() == 0) throw InvalidInput("config: Miller indices must not all be zero");
  }

  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

struct ResultMetadata {
  std::string version = kVersion;
  PipelineConfig config;
  std::size_t n = 0;
  double sigma = 0.0;               // global noise estimate
  double residual_threshold = 0.0;  // √(τ ln n)
  std::map<std::size_t, double> c_L;
  std::size_t denoise_iterations_first = 0;
  std::size_t denoise_iterations_second = 0;
  std::size_t spline_iterations = 0;
  std::size_t baseline_iterations = 0;

  friend bool operator==(const ResultMetadata&, const ResultMetadata&) = default;
};

struct PeakSegment {
  PeakInterval interval;
  std::vector<SegmentFit> candidates;  // accepted first, then by R

  IndexRange range() const noexcept { return interval.range(); }

  friend bool operator==(const PeakSegment&, const PeakSegment&) = default;
};

struct CrystallographyRow {
  std::size_t segment = 0;
  std::size_t component = 0;
  double two_theta = 0.0;
  double d_spacing = 0.0;
  std::optional<MillerIndices> hkl;
  std::optional<double> d_ideal;
  std::optional<double> distortion;

  friend bool operator==(const CrystallographyRow&, const CrystallographyRow&) = default;
};

struct AnalysisResult {
  ResultMetadata metadata;
  std::vector<double> angles;
  std::vector<double> counts;
  StepFunction denoised;
  std::vector<double> noise_scale;  // Σ_n
  std::optional<PiecewiseConstantScale> ground_noise;
  std::vector<double> spline;
  std::vector<double> spline_derivative;
  std::vector<double> baseline;
  std::vector<PeakSegment> peaks;
  std::vector<CrystallographyRow> crystallography;

  friend bool operator==(const AnalysisResult&, const AnalysisResult&) = default;
};

namespace detail {

// Stretches a range to at least `len` samples, staying inside [0, n).
inline IndexRange widen(IndexRange r, std::size_t len, std::size_t n) {
  while (r.size() < len && r.size() < n) {
    if (r.first > 0) --r.first;
    if (r.size() < len && r.last + 1 < n) ++r.last;
  }
  return r;
}

inline std::vector<CrystallographyRow> crystallography_rows(const std::vector<PeakSegment>& peaks,
                                                            const PipelineConfig& cfg) {
  std::vector<CrystallographyRow> rows;
  for (std::size_t s = 0; s < peaks.size(); ++s) {
    if (peaks[s].candidates.empty()) continue;
    const auto& fit = peaks[s].candidates.front();
    for (std::size_t i = 0; i < fit.components.size(); ++i) {
      CrystallographyRow row;
      row.segment = s;
      row.component = i;
      row.two_theta = fit.components[i].mu;
      row.d_spacing = bragg_d(row.two_theta, cfg.lattice.wavelength);
      double best = cfg.assignment_tolerance;
      for (const auto& a : cfg.assignments) {
        const double dist = std::abs(a.two_theta - row.two_theta);
        if (dist <= best) {
          best = dist;
          row.hkl = a.hkl;
        }
      }
      if (row.hkl) {
        row.d_ideal = d_ideal(*row.hkl, cfg.lattice.a0);
        row.distortion = lattice_distortion(row.two_theta, *row.hkl, cfg.lattice);
      }
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace detail

/// Runs all five stages. `thresholds` memoizes C_L across calls and must match
/// the configured α, threshold seed and replicate count.
inline AnalysisResult run_pipeline(const Diffractogram& d, const PipelineConfig& cfg, ThresholdCache& thresholds) {
  cfg.validate();
  if (thresholds.alpha() != cfg.alpha || thresholds.seed() != cfg.threshold_seed ||
      thresholds.replicates() != cfg.threshold_replicates)
    throw InvalidInput("run_pipeline: threshold cache does not match the configuration");
  const std::size_t n = d.size();
  if (n < 8) throw InvalidInput("run_pipeline: need at least 8 samples");

  AnalysisResult res;
  res.metadata.config = cfg;
  res.metadata.n = n;
  res.metadata.residual_threshold = residual_threshold(n, cfg.tau);
  res.angles.assign(d.angles().begin(), d.angles().end());
  res.counts.assign(d.counts().begin(), d.counts().end());

  // Denoise.
  DenoiseConfig dc;
  dc.tau = cfg.tau;
  dc.q = cfg.q_squeeze;
  dc.hetero = cfg.hetero;
  auto dn = denoise_two_pass(d, dc);
  res.metadata.sigma = dn.sigma;
  res.metadata.denoise_iterations_first = dn.iterations_first;
  res.metadata.denoise_iterations_second = dn.iterations_second;
  res.denoised = dn.fit;
  res.noise_scale.assign(dn.scale.values().begin(), dn.scale.values().end());
  res.ground_noise = dn.ground_noise;

  // Smooth fit for the derivative.
  WeightLoopConfig wc;
  wc.q_up = cfg.q_weights;
  auto sp = fit_adaptive_weights(d, dn.scale, IntervalScheme::dyadic(n), res.metadata.residual_threshold, wc);
  res.metadata.spline_iterations = sp.iterations;
  res.spline.assign(sp.spline.values().begin(), sp.spline.values().end());
  res.spline_derivative = sp.spline.eval(d.angles(), 1);

  const auto intervals = peak_intervals(dn.fit, sp.spline);

  BaselineFit bl;
  try {
    bl = baseline_fit(d.angles(), d.counts(), intervals, dn.scale, cfg.tau, wc);
  } catch (const WeightLoopDiagnostic& e) {
    throw NumericalDiagnostic("baseline", e.what());
  } catch (const InvalidInput& e) {
    throw NumericalDiagnostic("baseline", e.what());
  }
  res.metadata.baseline_iterations = bl.iterations;
  res.baseline = bl.values;

  // Peak segments: data minus baseline, scale floor for acceptance.
  std::vector<double> floor(n, dn.sigma);
  if (dn.ground_noise) floor = dn.ground_noise->expand();
  std::vector<SegmentData> segments;
  for (const auto& iv : intervals) {
    const auto r = detail::widen(iv.range(), 5, n);
    SegmentData s;
    for (std::size_t j = r.first; j <= r.last; ++j) {
      s.t.push_back(d.angle(j));
      s.y.push_back(d.count(j) - bl.values[j]);
      s.baseline.push_back(bl.values[j]);
      s.scale.push_back(dn.scale[j]);
      s.floor.push_back(floor[j]);
    }
    segments.push_back(std::move(s));
  }
  std::vector<std::size_t> lengths;
  for (const auto& s : segments) lengths.push_back(s.size());
  thresholds.prefetch(lengths);

  FitConfig fc;
  fc.max_k = cfg.max_kernels;
  fc.restarts_per_k = cfg.restarts;
  fc.n_solutions = cfg.solutions;
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    fc.seed = stream_seed(cfg.seed, i);
    PeakSegment ps;
    ps.interval = intervals[i];
    ps.candidates = fit_segment(segments[i], fc, thresholds);
    if (ps.candidates.empty()) throw NumericalDiagnostic("peak fit", "no finite fit for segment " + std::to_string(i));
    res.metadata.c_L[segments[i].size()] = thresholds.get(segments[i].size());
    res.peaks.push_back(std::move(ps));
  }

  res.crystallography = detail::crystallography_rows(res.peaks, cfg);
  return res;
}

inline AnalysisResult run_pipeline(const Diffractogram& d, const PipelineConfig& cfg) {
  ThresholdCache cache(cfg.alpha, cfg.threshold_seed, cfg.threshold_replicates);
  return run_pipeline(d, cfg, cache);
}

/// Samples covered by a segment fit, i.e. the interval widened to the fitting minimum.
inline IndexRange segment_samples(const AnalysisResult& r, std::size_t s) {
  return detail::widen(r.peaks[s].range(), 5, r.angles.size());
}

}  // namespace diffraxis
