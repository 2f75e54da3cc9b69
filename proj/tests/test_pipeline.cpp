#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "diffraxis/diffraxis.hpp"
#include "support.hpp"

using namespace diffraxis;
using Catch::Approx;

namespace {

PipelineConfig fast_config() {
  PipelineConfig c;
  c.threshold_replicates = 10000;
  return c;
}

ThresholdCache& cache() {
  static ThresholdCache c(0.95, kThresholdSeed, 10000);
  return c;
}

const AnalysisResult& fixture_result() {
  static const AnalysisResult r = run_pipeline(synthetic::three_peak_fixture(1), fast_config(), cache());
  return r;
}

const AnalysisResult& noise_result() {
  static const AnalysisResult r = run_pipeline(synthetic::flat_noise(3000, 2), fast_config(), cache());
  return r;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<std::string> lines(const std::string& s) {
  auto v = split(s, '\n');
  if (!v.empty() && v.back().empty()) v.pop_back();
  return v;
}

}  // namespace

TEST_CASE("ingest whitespace and CSV input", "[pipeline][io]") {
  const auto d = parse_diffractogram("15.00 52\n15.01 49\n");
  REQUIRE(d.size() == 2);
  CHECK(d.angle(1) == 15.01);
  CHECK(d.count(0) == 52.0);

  const auto c = parse_diffractogram("# angle,counts\n10,1\n10.5,2\n11,3\n", InputFormat::csv);
  CHECK(c.size() == 3);
  const auto h = parse_diffractogram("angle,counts\n10,1\n10.5,2\n");
  CHECK(h.size() == 2);
  const auto r = parse_diffractogram("\"x\" \"y\"\n\"1\" 10 5\n\"2\" 10.5 6\n");
  CHECK(r.count(1) == 6.0);
  CHECK(parse_diffractogram("1 2\r\n2 3\r\n").size() == 2);
}

TEST_CASE("ingest reports the offending line", "[pipeline][io]") {
  try {
    parse_diffractogram("# c\n1 5\n2 6\n1.5 7\n");
    FAIL("accepted decreasing angles");
  } catch (const ParseError& e) {
    CHECK(e.line() == 4);
  }
  try {
    parse_diffractogram("1 5\n2 -1\n");
    FAIL("accepted a negative count");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(parse_diffractogram("1 5\n2 x\n"), ParseError);
  CHECK_THROWS_AS(parse_diffractogram("1 5 6 7\n"), ParseError);
  CHECK_THROWS_AS(ingest("/nonexistent/diffraxis/input.txt"), IoError);
  CHECK_THROWS_AS(parse_input_format("xml"), InvalidInput);
}

TEST_CASE("fixture: three intervals near the true positions", "[pipeline]") {
  const auto& r = fixture_result();
  REQUIRE(r.peaks.size() == 3);
  const auto truth = synthetic::fixture_kernels();
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& top = r.peaks[i].candidates.front();
    CHECK(top.accepted);
    REQUIRE(top.k() == 1);
    CHECK(std::abs(top.components[0].mu - truth[i].mu) < 0.05);
    CHECK(std::abs(top.stats[0].fwhm / pearson_fwhm(truth[i].m, truth[i].a) - 1.0) < 0.1);
  }
  CHECK(r.metadata.n == 7001);
  CHECK(r.metadata.c_L.size() >= 1);
  CHECK(r.baseline.size() == 7001);
}

TEST_CASE("pure noise: no intervals and a flat baseline", "[pipeline]") {
  const auto& r = noise_result();
  CHECK(r.peaks.empty());
  for (double b : r.baseline) CHECK(std::abs(b - 50.0) <= 3.0 * 7.0);
  const auto j = json::parse(to_json_string(r));
  CHECK(j.at("peaks").empty());
  CHECK(j.at("baseline").size() == 3000);
  CHECK(lines(to_csv_string(r)).size() == 1);
}

TEST_CASE("identical seeds give byte-identical JSON", "[pipeline]") {
  const auto d = synthetic::three_peak_fixture(5);
  ThresholdCache other(0.95, kThresholdSeed, 10000);
  const auto a = to_json_string(run_pipeline(d, fast_config(), cache()));
  const auto b = to_json_string(run_pipeline(d, fast_config(), other));
  CHECK(a == b);
}

TEST_CASE("JSON round trip restores the result exactly", "[pipeline][io]") {
  for (const auto* r : {&fixture_result(), &noise_result()}) {
    const auto back = result_from_json_string(to_json_string(*r));
    CHECK(back == *r);
  }
  auto withcryst = fixture_result();
  withcryst.crystallography.push_back({0, 0, 30.42, 0.2936, MillerIndices{2, 2, 2}, 0.292, 0.005});
  CHECK(result_from_json_string(to_json_string(withcryst)) == withcryst);
  CHECK_THROWS_AS(result_from_json_string("{\"format\": \"other\"}"), ParseError);
  CHECK_THROWS_AS(result_from_json_string("not json"), ParseError);
}

TEST_CASE("CSV export has one row per component", "[pipeline][io]") {
  const auto& r = fixture_result();
  const auto rows = lines(to_csv_string(r));
  CHECK(rows[0] == kCsvHeader);
  std::size_t expected = 0;
  for (const auto& p : r.peaks)
    for (const auto& c : p.candidates) expected += c.k();
  CHECK(rows.size() == expected + 1);
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(split(rows[i], ',').size() == 12);
  const auto first = split(rows[1], ',');
  CHECK(first[0] == "0");
  CHECK(first[1] == "0");
  CHECK(std::stod(first[3]) == r.peaks[0].candidates[0].components[0].mu);
}

TEST_CASE("plot series layout", "[pipeline][io]") {
  const auto& r = fixture_result();
  const auto rows = lines(to_plot_tsv_string(r));
  std::size_t comps = 0;
  for (const auto& p : r.peaks) comps += p.candidates.front().k();
  const std::size_t cols = 6 + r.peaks.size() + comps;
  REQUIRE(rows.size() == r.angles.size() + 1);
  CHECK(split(rows[0], '\t').size() == cols);
  for (std::size_t j = 0; j < r.angles.size(); ++j) {
    const auto cells = split(rows[j + 1], '\t');
    REQUIRE(cells.size() == cols);
    CHECK(std::stod(cells[0]) == r.angles[j]);
    for (std::size_t s = 0; s < r.peaks.size(); ++s) {
      const auto& cell = cells[6 + s];
      if (segment_samples(r, s).contains(j)) {
        REQUIRE_FALSE(cell.empty());
        const double want = r.baseline[j] + model_eval(r.angles[j], r.peaks[s].candidates.front());
        CHECK(std::abs(std::stod(cell) - want) <= 1e-9 * std::max(1.0, std::abs(want)));
      } else {
        CHECK(cell.empty());
      }
    }
  }
}

TEST_CASE("decomposition identity on accepted segments", "[pipeline][property]") {
  const auto& r = fixture_result();
  for (std::size_t s = 0; s < r.peaks.size(); ++s) {
    const auto range = segment_samples(r, s);
    const auto& fit = r.peaks[s].candidates.front();
    REQUIRE(fit.accepted);
    SegmentData seg;
    std::vector<double> floor(r.angles.size(), r.metadata.sigma);
    for (std::size_t j = range.first; j <= range.last; ++j) {
      const double residual = r.counts[j] - r.baseline[j] - model_eval(r.angles[j], fit);
      CHECK(r.counts[j] == Approx(r.baseline[j] + model_eval(r.angles[j], fit) + residual).margin(1e-9));
      seg.t.push_back(r.angles[j]);
      seg.y.push_back(r.counts[j] - r.baseline[j]);
      seg.baseline.push_back(r.baseline[j]);
      seg.scale.push_back(r.noise_scale[j]);
      seg.floor.push_back(floor[j]);
    }
    const auto stat = acceptance_statistic(seg, fit);
    CHECK(stat.value == fit.statistic);
    CHECK(stat.value <= r.metadata.c_L.at(seg.size()));
  }
}

TEST_CASE("Miller assignments produce distortion rows", "[pipeline]") {
  auto cfg = fast_config();
  cfg.assignments = {{30.4, {2, 2, 2}}, {70.0, {4, 0, 0}}};
  const auto rows = detail::crystallography_rows(fixture_result().peaks, cfg);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].hkl == MillerIndices{2, 2, 2});
  REQUIRE(rows[0].distortion.has_value());
  CHECK(*rows[0].distortion == Approx(lattice_distortion(rows[0].two_theta, {2, 2, 2}, cfg.lattice)).epsilon(1e-14));
  CHECK_FALSE(rows[1].hkl.has_value());
  CHECK_FALSE(rows[2].hkl.has_value());
}

TEST_CASE("configuration and file errors", "[pipeline]") {
  auto cfg = fast_config();
  cfg.q_squeeze = 1.5;
  CHECK_THROWS_AS(run_pipeline(synthetic::flat_noise(100, 1), cfg), InvalidInput);
  CHECK_THROWS_AS(run_pipeline(synthetic::flat_noise(5, 1), fast_config()), InvalidInput);
  CHECK_THROWS_AS(export_results(noise_result(), ExportFormat::json, "/nonexistent/dir/out.json"), IoError);
  const auto path = (std::filesystem::temp_directory_path() / "diffraxis_test_result.json").string();
  export_results(noise_result(), ExportFormat::json, path);
  CHECK(load_result(path) == noise_result());
  std::filesystem::remove(path);
}
