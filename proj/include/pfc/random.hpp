#pragma once

#include <cstdint>
#include <random>

#include "pfc/core.hpp"

namespace pfc {

using Rng = std::mt19937_64;

/// Independent stream for (seed, tag); used for per-epoch shuffles and sub-experiments.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
  return Rng(seq);
}

inline Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix m(rows, cols);
  // Fill column by column so the draw order is independent of Eigen internals.
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

/// Uniform direction on the unit sphere in R^dim (normalized Gaussian).
inline Vector unit_sphere_sample(Eigen::Index dim, Rng& rng) {
  Vector v = gaussian_matrix(dim, 1, rng).col(0);
  double norm = v.norm();
  while (norm == 0.0) {
    v = gaussian_matrix(dim, 1, rng).col(0);
    norm = v.norm();
  }
  return v / norm;
}

}  // namespace pfc
