#pragma once

// Independent reference computations shared by the unit tests.

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "diffraxis/diffractogram.hpp"

namespace test {

/// Brute-force maximum of |Σ_{a..b} r_i/s_i|/√(b−a+1) over all O(L²) pairs,
/// each sum accumulated left to right from its own start a.
inline std::pair<double, diffraxis::IndexRange> direct_max_stat(const std::vector<double>& r,
                                                                const std::vector<double>& s) {
  double best = -1.0;
  diffraxis::IndexRange arg{0, 0};
  const std::size_t L = r.size();
  for (std::size_t a = 0; a < L; ++a) {
    double sum = 0.0;
    for (std::size_t b = a; b < L; ++b) {
      sum += r[b] / s[b];
      const double v = std::abs(sum) / std::sqrt(static_cast<double>(b - a + 1));
      if (v > best) {
        best = v;
        arg = {a, b};
      }
    }
  }
  return {best, arg};
}

/// Dense Gaussian elimination with partial pivoting.
inline std::vector<double> dense_solve(std::vector<std::vector<double>> A, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(A[r][c]) > std::abs(A[p][c])) p = r;
    std::swap(A[c], A[p]);
    std::swap(b[c], b[p]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = A[r][c] / A[c][c];
      for (std::size_t k = c; k < n; ++k) A[r][k] -= f * A[c][k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= A[i][k] * x[k];
    x[i] = s / A[i][i];
  }
  return x;
}

/// Fraction helper for simulation tallies.
inline double rate(std::size_t hits, std::size_t total) {
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace test
