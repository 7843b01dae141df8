#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "driftwatch/rng.hpp"
#include "driftwatch/stats.hpp"

// helpers shared by the test suites

namespace testsupport {

inline std::filesystem::path data_dir() {
#ifdef DRIFTWATCH_DATA_DIR
  return std::filesystem::path(DRIFTWATCH_DATA_DIR);
#else
  return std::filesystem::path("data");
#endif
}

// standard normal via Box-Muller, deterministic under our own generator
inline double gaussian(driftwatch::rng::Xoshiro256pp& g) {
  double u1 = g.uniform();
  double u2 = g.uniform();
  if (u1 <= 0.0) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * 3.141592653589793238462643 * u2);
}

inline driftwatch::stats::EmbeddingGroup random_group(
    std::size_t n, std::size_t k, std::size_t d,
    driftwatch::rng::Xoshiro256pp& g, double shift = 0.0) {
  std::vector<driftwatch::stats::EmbeddingVector> rows;
  rows.reserve(n * k);
  for (std::size_t r = 0; r < n * k; ++r) {
    driftwatch::stats::EmbeddingVector v(d);
    for (auto& x : v) x = gaussian(g) + shift;
    rows.push_back(std::move(v));
  }
  return driftwatch::stats::EmbeddingGroup::from_rows(n, k, rows);
}

// integer-valued entries in [1, 9]: sums and dot products stay exact, which
// keeps order-of-summation bit noise out of tie comparisons
inline driftwatch::stats::EmbeddingGroup random_integer_group(
    std::size_t n, std::size_t k, std::size_t d,
    driftwatch::rng::Xoshiro256pp& g) {
  std::vector<driftwatch::stats::EmbeddingVector> rows;
  rows.reserve(n * k);
  for (std::size_t r = 0; r < n * k; ++r) {
    driftwatch::stats::EmbeddingVector v(d);
    for (auto& x : v) x = 1.0 + static_cast<double>(g.bounded(9));
    rows.push_back(std::move(v));
  }
  return driftwatch::stats::EmbeddingGroup::from_rows(n, k, rows);
}

inline driftwatch::stats::EmbeddingGroup group_of(
    std::size_t n, std::size_t k,
    const std::vector<driftwatch::stats::EmbeddingVector>& rows) {
  return driftwatch::stats::EmbeddingGroup::from_rows(n, k, rows);
}

}  // namespace testsupport
