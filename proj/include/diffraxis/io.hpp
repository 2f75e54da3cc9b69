#pragma once

// Text ingestion and result export: JSON (lossless), per-component CSV and a
// tab-separated table of plot series.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "diffractogram.hpp"
#include "error.hpp"
#include "pipeline.hpp"

namespace diffraxis {

enum class InputFormat { auto_detect, whitespace, csv };

inline InputFormat parse_input_format(std::string_view s) {
  if (s == "auto") return InputFormat::auto_detect;
  if (s == "txt" || s == "whitespace") return InputFormat::whitespace;
  if (s == "csv") return InputFormat::csv;
  throw InvalidInput("unknown input format '" + std::string(s) + "' (expected auto, txt or csv)");
}

namespace detail {

inline bool parse_number(std::string_view tok, double& out) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return ec == std::errc() && ptr == tok.data() + tok.size();
}

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_fields(std::string_view line, InputFormat f) {
  std::vector<std::string_view> out;
  const bool commas = f == InputFormat::csv || (f == InputFormat::auto_detect && line.find(',') != line.npos);
  if (commas) {
    std::size_t start = 0;
    for (;;) {
      const auto pos = line.find(',', start);
      out.push_back(trim(line.substr(start, pos == line.npos ? line.npos : pos - start)));
      if (pos == line.npos) break;
      start = pos + 1;
    }
  } else {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == ';')) ++i;
      const std::size_t j = i;
      while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != ';') ++i;
      if (i > j) out.push_back(line.substr(j, i - j));
    }
  }
  return out;
}

inline std::string_view unquote(std::string_view s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

}  // namespace detail

/// Two numeric columns (angle, counts), separated by whitespace or commas.
/// Blank lines and lines starting with '#' are skipped; a single non-numeric
/// header line before the first data row is skipped too. Rows with three
/// columns are read as (label, angle, counts), the layout of R table exports.
inline Diffractogram parse_diffractogram(std::istream& in, InputFormat format = InputFormat::auto_detect) {
  std::vector<double> angles, counts;
  std::string line;
  std::size_t lineno = 0;
  bool header_allowed = true;
  while (std::getline(in, line)) {
    ++lineno;
    const auto s = detail::trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto fields = detail::split_fields(s, format);
    std::vector<double> v(fields.size());
    bool numeric = true;
    for (std::size_t i = 0; i < fields.size(); ++i) numeric = numeric && detail::parse_number(detail::unquote(fields[i]), v[i]);
    if (!numeric) {
      if (header_allowed) {
        header_allowed = false;
        continue;
      }
      throw ParseError(lineno, "non-numeric field");
    }
    header_allowed = false;
    double t, y;
    if (v.size() == 2) {
      t = v[0], y = v[1];
    } else if (v.size() == 3) {
      t = v[1], y = v[2];
    } else {
      throw ParseError(lineno, "expected two columns (angle, counts), found " + std::to_string(v.size()));
    }
    if (!std::isfinite(t) || !std::isfinite(y)) throw ParseError(lineno, "non-finite value");
    if (y < 0.0) throw ParseError(lineno, "negative count");
    if (!angles.empty() && !(t > angles.back())) throw ParseError(lineno, "angles must be strictly increasing");
    angles.push_back(t);
    counts.push_back(y);
  }
  if (angles.size() < 2) throw ParseError(lineno, "need at least two data rows");
  return Diffractogram(std::move(angles), std::move(counts));
}

inline Diffractogram parse_diffractogram(std::string_view text, InputFormat format = InputFormat::auto_detect) {
  std::istringstream in{std::string(text)};
  return parse_diffractogram(in, format);
}

inline Diffractogram ingest(const std::string& path, InputFormat format = InputFormat::auto_detect) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return parse_diffractogram(in, format);
}

// ---------------------------------------------------------------- JSON

using json = nlohmann::json;

inline void to_json(json& j, const IndexRange& r) { j = json{{"first", r.first}, {"last", r.last}}; }
inline void from_json(const json& j, IndexRange& r) {
  j.at("first").get_to(r.first);
  j.at("last").get_to(r.last);
}

inline void to_json(json& j, const PearsonComponent& c) {
  j = json{{"gamma", c.gamma}, {"mu", c.mu}, {"m", c.m}, {"a", c.a}};
}
inline void from_json(const json& j, PearsonComponent& c) {
  j.at("gamma").get_to(c.gamma);
  j.at("mu").get_to(c.mu);
  j.at("m").get_to(c.m);
  j.at("a").get_to(c.a);
}

inline void to_json(json& j, const PeakStats& s) {
  j = json{{"location", s.location}, {"height", s.height}, {"intensity", s.intensity}, {"fwhm", s.fwhm}};
}
inline void from_json(const json& j, PeakStats& s) {
  j.at("location").get_to(s.location);
  j.at("height").get_to(s.height);
  j.at("intensity").get_to(s.intensity);
  j.at("fwhm").get_to(s.fwhm);
}

inline void to_json(json& j, const SegmentFit& f) {
  j = json{{"k", f.k()},
           {"accepted", f.accepted},
           {"beta0", f.beta0},
           {"beta1", f.beta1},
           {"center", f.center},
           {"objective", f.objective},
           {"statistic", f.statistic},
           {"threshold", f.threshold},
           {"components", f.components},
           {"stats", f.stats},
           {"negligible", f.negligible}};
}
inline void from_json(const json& j, SegmentFit& f) {
  j.at("accepted").get_to(f.accepted);
  j.at("beta0").get_to(f.beta0);
  j.at("beta1").get_to(f.beta1);
  j.at("center").get_to(f.center);
  j.at("objective").get_to(f.objective);
  j.at("statistic").get_to(f.statistic);
  j.at("threshold").get_to(f.threshold);
  j.at("components").get_to(f.components);
  j.at("stats").get_to(f.stats);
  j.at("negligible").get_to(f.negligible);
}

inline void to_json(json& j, const PeakInterval& p) {
  j = json{{"core", p.core},
           {"anchor", p.anchor},
           {"left_outer", p.left_outer},
           {"left_inner", p.left_inner},
           {"right_inner", p.right_inner},
           {"right_outer", p.right_outer},
           {"truncated", p.truncated},
           {"merged_anchors", p.merged_anchors}};
}
inline void from_json(const json& j, PeakInterval& p) {
  j.at("core").get_to(p.core);
  j.at("anchor").get_to(p.anchor);
  j.at("left_outer").get_to(p.left_outer);
  j.at("left_inner").get_to(p.left_inner);
  j.at("right_inner").get_to(p.right_inner);
  j.at("right_outer").get_to(p.right_outer);
  j.at("truncated").get_to(p.truncated);
  j.at("merged_anchors").get_to(p.merged_anchors);
}

inline void to_json(json& j, const MillerIndices& m) { j = json::array({m.h, m.k, m.l}); }
inline void from_json(const json& j, MillerIndices& m) {
  m.h = j.at(0).get<int>();
  m.k = j.at(1).get<int>();
  m.l = j.at(2).get<int>();
}

inline void to_json(json& j, const HklAssignment& a) { j = json{{"two_theta", a.two_theta}, {"hkl", a.hkl}}; }
inline void from_json(const json& j, HklAssignment& a) {
  j.at("two_theta").get_to(a.two_theta);
  j.at("hkl").get_to(a.hkl);
}

inline void to_json(json& j, const PipelineConfig& c) {
  j = json{{"tau", c.tau},
           {"alpha", c.alpha},
           {"hetero", c.hetero},
           {"q_squeeze", c.q_squeeze},
           {"q_weights", c.q_weights},
           {"max_kernels", c.max_kernels},
           {"restarts", c.restarts},
           {"solutions", c.solutions},
           {"seed", c.seed},
           {"threshold_seed", c.threshold_seed},
           {"threshold_replicates", c.threshold_replicates},
           {"wavelength", c.lattice.wavelength},
           {"a0", c.lattice.a0},
           {"assignments", c.assignments},
           {"assignment_tolerance", c.assignment_tolerance}};
}
inline void from_json(const json& j, PipelineConfig& c) {
  j.at("tau").get_to(c.tau);
  j.at("alpha").get_to(c.alpha);
  j.at("hetero").get_to(c.hetero);
  j.at("q_squeeze").get_to(c.q_squeeze);
  j.at("q_weights").get_to(c.q_weights);
  j.at("max_kernels").get_to(c.max_kernels);
  j.at("restarts").get_to(c.restarts);
  j.at("solutions").get_to(c.solutions);
  j.at("seed").get_to(c.seed);
  j.at("threshold_seed").get_to(c.threshold_seed);
  j.at("threshold_replicates").get_to(c.threshold_replicates);
  j.at("wavelength").get_to(c.lattice.wavelength);
  j.at("a0").get_to(c.lattice.a0);
  j.at("assignments").get_to(c.assignments);
  j.at("assignment_tolerance").get_to(c.assignment_tolerance);
}

inline void to_json(json& j, const ResultMetadata& m) {
  json cl = json::array();
  for (const auto& [L, v] : m.c_L) cl.push_back(json{{"L", L}, {"value", v}});
  j = json{{"version", m.version},
           {"config", m.config},
           {"n", m.n},
           {"sigma", m.sigma},
           {"residual_threshold", m.residual_threshold},
           {"c_L", cl},
           {"iterations",
            {{"denoise_first", m.denoise_iterations_first},
             {"denoise_second", m.denoise_iterations_second},
             {"spline", m.spline_iterations},
             {"baseline", m.baseline_iterations}}}};
}
inline void from_json(const json& j, ResultMetadata& m) {
  j.at("version").get_to(m.version);
  j.at("config").get_to(m.config);
  j.at("n").get_to(m.n);
  j.at("sigma").get_to(m.sigma);
  j.at("residual_threshold").get_to(m.residual_threshold);
  m.c_L.clear();
  for (const auto& e : j.at("c_L")) m.c_L[e.at("L").get<std::size_t>()] = e.at("value").get<double>();
  const auto& it = j.at("iterations");
  it.at("denoise_first").get_to(m.denoise_iterations_first);
  it.at("denoise_second").get_to(m.denoise_iterations_second);
  it.at("spline").get_to(m.spline_iterations);
  it.at("baseline").get_to(m.baseline_iterations);
}

inline void to_json(json& j, const StepFunction& s) {
  std::vector<std::string> walls;
  for (auto w : s.walls) walls.push_back(w == Wall::pinned ? "pinned" : w == Wall::upper ? "upper" : "lower");
  j = json{{"knots", s.knots},
           {"walls", walls},
           {"raw_values", s.raw_values},
           {"values", s.values},
           {"wall_ties", s.wall_ties}};
}
inline void from_json(const json& j, StepFunction& s) {
  j.at("knots").get_to(s.knots);
  s.walls.clear();
  for (const auto& w : j.at("walls")) {
    const auto v = w.get<std::string>();
    if (v == "pinned") s.walls.push_back(Wall::pinned);
    else if (v == "upper") s.walls.push_back(Wall::upper);
    else if (v == "lower") s.walls.push_back(Wall::lower);
    else throw ParseError(0, "unknown wall kind '" + v + "'");
  }
  j.at("raw_values").get_to(s.raw_values);
  j.at("values").get_to(s.values);
  j.at("wall_ties").get_to(s.wall_ties);
}

inline void to_json(json& j, const PiecewiseConstantScale& p) {
  j = json{{"breakpoints", p.breakpoints}, {"levels", p.levels}, {"n", p.n}};
}
inline void from_json(const json& j, PiecewiseConstantScale& p) {
  j.at("breakpoints").get_to(p.breakpoints);
  j.at("levels").get_to(p.levels);
  j.at("n").get_to(p.n);
}

inline void to_json(json& j, const PeakSegment& s) { j = json{{"interval", s.interval}, {"candidates", s.candidates}}; }
inline void from_json(const json& j, PeakSegment& s) {
  j.at("interval").get_to(s.interval);
  j.at("candidates").get_to(s.candidates);
}

inline void to_json(json& j, const CrystallographyRow& r) {
  j = json{{"segment", r.segment},
           {"component", r.component},
           {"two_theta", r.two_theta},
           {"d_spacing", r.d_spacing},
           {"hkl", r.hkl ? json(*r.hkl) : json(nullptr)},
           {"d_ideal", r.d_ideal ? json(*r.d_ideal) : json(nullptr)},
           {"distortion", r.distortion ? json(*r.distortion) : json(nullptr)}};
}
inline void from_json(const json& j, CrystallographyRow& r) {
  j.at("segment").get_to(r.segment);
  j.at("component").get_to(r.component);
  j.at("two_theta").get_to(r.two_theta);
  j.at("d_spacing").get_to(r.d_spacing);
  r.hkl.reset();
  r.d_ideal.reset();
  r.distortion.reset();
  if (!j.at("hkl").is_null()) r.hkl = j.at("hkl").get<MillerIndices>();
  if (!j.at("d_ideal").is_null()) r.d_ideal = j.at("d_ideal").get<double>();
  if (!j.at("distortion").is_null()) r.distortion = j.at("distortion").get<double>();
}

inline void to_json(json& j, const AnalysisResult& r) {
  j = json{{"format", "diffraxis-result"},
           {"metadata", r.metadata},
           {"angles", r.angles},
           {"counts", r.counts},
           {"denoised", r.denoised},
           {"noise_scale", r.noise_scale},
           {"ground_noise", r.ground_noise ? json(*r.ground_noise) : json(nullptr)},
           {"spline", r.spline},
           {"spline_derivative", r.spline_derivative},
           {"baseline", r.baseline},
           {"peaks", r.peaks},
           {"crystallography", r.crystallography}};
}
inline void from_json(const json& j, AnalysisResult& r) {
  if (j.value("format", std::string()) != "diffraxis-result") throw ParseError(0, "not a diffraxis result document");
  j.at("metadata").get_to(r.metadata);
  j.at("angles").get_to(r.angles);
  j.at("counts").get_to(r.counts);
  j.at("denoised").get_to(r.denoised);
  j.at("noise_scale").get_to(r.noise_scale);
  r.ground_noise.reset();
  if (!j.at("ground_noise").is_null()) r.ground_noise = j.at("ground_noise").get<PiecewiseConstantScale>();
  j.at("spline").get_to(r.spline);
  j.at("spline_derivative").get_to(r.spline_derivative);
  j.at("baseline").get_to(r.baseline);
  j.at("peaks").get_to(r.peaks);
  j.at("crystallography").get_to(r.crystallography);
}

/// Doubles are written in shortest round-trip form, so parsing restores every bit.
inline std::string to_json_string(const AnalysisResult& r) { return json(r).dump(2) + "\n"; }

inline AnalysisResult result_from_json_string(std::string_view text) {
  try {
    return json::parse(text).get<AnalysisResult>();
  } catch (const json::exception& e) {
    throw ParseError(0, std::string("invalid result JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------- CSV / TSV

namespace detail {

inline std::string fmt(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc() ? std::string(buf, ptr) : std::string("nan");
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace detail

inline constexpr const char* kCsvHeader =
    "segment_id,solution_rank,accepted,two_theta,height,intensity,fwhm,m,a,beta0,beta1,R";

/// One row per component of every candidate.
inline std::string to_csv_string(const AnalysisResult& r) {
  std::string s = std::string(kCsvHeader) + "\n";
  for (std::size_t seg = 0; seg < r.peaks.size(); ++seg) {
    const auto& cands = r.peaks[seg].candidates;
    for (std::size_t rank = 0; rank < cands.size(); ++rank) {
      const auto& f = cands[rank];
      for (std::size_t i = 0; i < f.components.size(); ++i) {
        const auto& c = f.components[i];
        const auto st = peak_stats(c);
        s += std::to_string(seg) + "," + std::to_string(rank) + "," + (f.accepted ? "true" : "false") + "," +
             detail::fmt(c.mu) + "," + detail::fmt(st.height) + "," + detail::fmt(st.intensity) + "," +
             detail::fmt(st.fwhm) + "," + detail::fmt(c.m) + "," + detail::fmt(c.a) + "," + detail::fmt(f.beta0) +
             "," + detail::fmt(f.beta1) + "," + detail::fmt(f.objective) + "\n";
      }
    }
  }
  return s;
}

/// Tab-separated series: angle, counts, denoised, spline, spline_derivative,
/// baseline, then one fitted-curve column per segment (baseline plus the
/// top-ranked model) and one column per component of that model. Cells
/// outside a segment are left empty.
inline std::string to_plot_tsv_string(const AnalysisResult& r) {
  const std::size_t n = r.angles.size();
  std::string s = "angle\tcounts\tdenoised\tspline\tspline_derivative\tbaseline";
  for (std::size_t seg = 0; seg < r.peaks.size(); ++seg) s += "\tsegment_" + std::to_string(seg) + "_fit";
  for (std::size_t seg = 0; seg < r.peaks.size(); ++seg) {
    const auto& c = r.peaks[seg].candidates;
    const std::size_t k = c.empty() ? 0 : c.front().k();
    for (std::size_t i = 0; i < k; ++i) s += "\tsegment_" + std::to_string(seg) + "_component_" + std::to_string(i);
  }
  s += "\n";
  const auto den = r.denoised.evaluate();
  std::vector<IndexRange> ranges;
  for (std::size_t seg = 0; seg < r.peaks.size(); ++seg) ranges.push_back(segment_samples(r, seg));
  for (std::size_t j = 0; j < n; ++j) {
    const double t = r.angles[j];
    s += detail::fmt(t) + "\t" + detail::fmt(r.counts[j]) + "\t" + detail::fmt(den[j]) + "\t" +
         detail::fmt(r.spline[j]) + "\t" + detail::fmt(r.spline_derivative[j]) + "\t" + detail::fmt(r.baseline[j]);
    for (std::size_t seg = 0; seg < r.peaks.size(); ++seg) {
      s += "\t";
      const auto& c = r.peaks[seg].candidates;
      if (!c.empty() && ranges[seg].contains(j)) s += detail::fmt(r.baseline[j] + model_eval(t, c.front()));
    }
    for (std::size_t seg = 0; seg < r.peaks.size(); ++seg) {
      const auto& c = r.peaks[seg].candidates;
      if (c.empty()) continue;
      for (const auto& comp : c.front().components) {
        s += "\t";
        if (ranges[seg].contains(j)) s += detail::fmt(pearson_eval(comp, t));
      }
    }
    s += "\n";
  }
  return s;
}

enum class ExportFormat { json, csv };

inline void export_results(const AnalysisResult& r, ExportFormat f, const std::string& path) {
  detail::write_file(path, f == ExportFormat::json ? to_json_string(r) : to_csv_string(r));
}

inline void emit_plot_data(const AnalysisResult& r, const std::string& path) {
  detail::write_file(path, to_plot_tsv_string(r));
}

inline AnalysisResult load_result(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::stringstream ss;
  ss << in.rdbuf();
  return result_from_json_string(ss.str());
}

}  // namespace diffraxis
