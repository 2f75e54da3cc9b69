// Writes seeded synthetic diffractograms as two-column text.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "diffraxis/io.hpp"
#include "diffraxis/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate synthetic diffractograms"};
  std::string kind = "three-peak", out;
  std::uint64_t seed = 1;
  std::size_t n = 2000;
  app.add_option("--kind", kind, "three-peak or flat")->check(CLI::IsMember({"three-peak", "flat"}))->capture_default_str();
  app.add_option("--seed", seed, "Noise seed")->capture_default_str();
  app.add_option("-n", n, "Sample count for the flat kind")->capture_default_str();
  app.add_option("-o,--out", out, "Output path (stdout if omitted)");
  CLI11_PARSE(app, argc, argv);

  const auto d = kind == "flat" ? diffraxis::synthetic::flat_noise(n, seed) : diffraxis::synthetic::three_peak_fixture(seed);
  std::string text = "# angle counts (" + kind + ", seed " + std::to_string(seed) + ")\n";
  for (std::size_t i = 0; i < d.size(); ++i)
    text += diffraxis::detail::fmt(d.angle(i)) + " " + diffraxis::detail::fmt(d.count(i)) + "\n";
  if (out.empty()) {
    std::cout << text;
    return 0;
  }
  try {
    diffraxis::detail::write_file(out, text);
  } catch (const diffraxis::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
