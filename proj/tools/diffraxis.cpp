// Command-line front end: reads a two-column diffractogram, runs the full
// decomposition and writes JSON, CSV and plot series.
//
// Exit codes: 0 success, 1 parse/usage error, 2 numerical diagnostic, 3 I/O.

#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "diffraxis/diffraxis.hpp"

namespace {

constexpr int kExitOk = 0, kExitParse = 1, kExitNumeric = 2, kExitIo = 3;

// "30.42:2,2,2" → assignment of (222) to the component near 30.42°.
diffraxis::HklAssignment parse_assignment(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw diffraxis::InvalidInput("--assign expects ANGLE:H,K,L, got '" + s + "'");
  diffraxis::HklAssignment a;
  a.two_theta = std::stod(s.substr(0, colon));
  std::vector<int> idx;
  std::string rest = s.substr(colon + 1);
  std::size_t pos = 0;
  while (pos <= rest.size()) {
    const auto comma = rest.find(',', pos);
    idx.push_back(std::stoi(rest.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos)));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (idx.size() != 3) throw diffraxis::InvalidInput("--assign expects three Miller indices in '" + s + "'");
  a.hkl = {idx[0], idx[1], idx[2]};
  return a;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decompose a diffractogram into baseline, peaks and noise"};
  diffraxis::PipelineConfig cfg;
  std::string input, format = "auto", out, plot, csv;
  std::vector<std::string> assign;
  std::uint64_t seed = 0;

  app.add_option("-i,--input", input, "Two-column input file (angle, counts)")->required();
  app.add_option("--format", format, "Input format: auto, txt or csv")->capture_default_str();
  app.add_option("--tau", cfg.tau, "Multiresolution constant tau")->capture_default_str();
  app.add_option("--alpha", cfg.alpha, "Level of the peak-acceptance thresholds C_L")->capture_default_str();
  app.add_flag("--hetero", cfg.hetero, "Estimate a piecewise-constant ground-noise floor");
  app.add_option("--q-squeeze", cfg.q_squeeze, "Tube shrink factor")->capture_default_str();
  app.add_option("--q-weights", cfg.q_weights, "Spline weight growth factor")->capture_default_str();
  app.add_option("--max-kernels", cfg.max_kernels, "Largest number of kernels per segment")->capture_default_str();
  app.add_option("--restarts", cfg.restarts, "Random restarts per kernel count")->capture_default_str();
  app.add_option("--solutions", cfg.solutions, "Accepted solutions to collect per segment")->capture_default_str();
  auto* seed_opt = app.add_option("--seed", seed, "Restart seed (falls back to DIFFRAXIS_SEED, then 0)");
  app.add_option("--threshold-replicates", cfg.threshold_replicates, "Monte Carlo replicates for C_L")
      ->capture_default_str();
  app.add_option("--wavelength", cfg.lattice.wavelength, "X-ray wavelength in nm")->capture_default_str();
  app.add_option("--a0", cfg.lattice.a0, "Ideal cubic lattice constant in nm")->capture_default_str();
  app.add_option("--assign", assign, "Miller assignment ANGLE:H,K,L (repeatable)");
  app.add_option("-o,--out", out, "JSON result path (stdout if omitted)");
  app.add_option("--plot-data", plot, "Tab-separated plot series path");
  app.add_option("--csv", csv, "Per-component CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitParse;
  }

  if (seed_opt->count() == 0) {
    if (const char* env = std::getenv("DIFFRAXIS_SEED"); env && *env) {
      try {
        seed = std::stoull(env);
      } catch (const std::exception&) {
        std::cerr << "error: DIFFRAXIS_SEED is not an unsigned integer: " << env << "\n";
        return kExitParse;
      }
    }
  }
  cfg.seed = seed;

  try {
    for (const auto& a : assign) cfg.assignments.push_back(parse_assignment(a));
    const auto d = diffraxis::ingest(input, diffraxis::parse_input_format(format));
    const auto result = diffraxis::run_pipeline(d, cfg);
    const auto text = diffraxis::to_json_string(result);
    if (out.empty())
      std::cout << text;
    else
      diffraxis::export_results(result, diffraxis::ExportFormat::json, out);
    if (!csv.empty()) diffraxis::export_results(result, diffraxis::ExportFormat::csv, csv);
    if (!plot.empty()) diffraxis::emit_plot_data(result, plot);
  } catch (const diffraxis::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const diffraxis::ParseError& e) {
    std::cerr << "parse error: " << input << ": " << e.what() << "\n";
    return kExitParse;
  } catch (const diffraxis::NumericalDiagnostic& e) {
    std::cerr << "numerical diagnostic [" << e.stage() << "]: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const diffraxis::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitParse;
  } catch (const std::invalid_argument&) {
    std::cerr << "error: malformed number in arguments\n";
    return kExitParse;
  } catch (const std::out_of_range&) {
    std::cerr << "error: number out of range in arguments\n";
    return kExitParse;
  }
  return kExitOk;
}
