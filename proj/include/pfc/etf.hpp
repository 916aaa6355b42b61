#pragma once

// Simplex equiangular tight frames.

#include <cmath>
#include <cstdint>
#include <optional>

#include "pfc/core.hpp"
#include "pfc/random.hpp"

namespace pfc {

struct EtfFrame {
  Matrix frame;        // d x K, unit columns with pairwise inner product -1/(K-1)
  Matrix gram_target;  // K x K, E = (I - 11^T/K) / sqrt(K-1)
  std::size_t num_classes = 0;
  std::size_t dim = 0;
};

/// Centering projector I_K - (1/K) 1 1^T.
inline Matrix centering_matrix(std::size_t k) {
  const auto n = static_cast<Eigen::Index>(k);
  return Matrix::Identity(n, n) - Matrix::Constant(n, n, 1.0 / static_cast<double>(k));
}

/// Normalized target Gram E; unit Frobenius norm, zero row sums.
inline Matrix etf_gram_target(std::size_t num_classes) {
  if (num_classes < 2) throw ValidationError("etf: need K >= 2");
  return centering_matrix(num_classes) / std::sqrt(static_cast<double>(num_classes - 1));
}

/// d x K matrix with orthonormal columns from a seeded Gaussian draw.
inline Matrix random_partial_orthogonal(std::size_t dim, std::size_t num_classes,
                                        std::uint64_t seed) {
  auto rng = derive_rng(seed, 0xe7fULL);
  const Matrix g = gaussian_matrix(static_cast<Eigen::Index>(dim),
                                   static_cast<Eigen::Index>(num_classes), rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ() * Matrix::Identity(g.rows(), g.cols());
}

/// M = sqrt(K/(K-1)) U (I - 11^T/K). Without a basis, U comes from `seed`.
inline EtfFrame build_etf(std::size_t num_classes, std::size_t dim,
                          const std::optional<Matrix>& orthonormal_basis = std::nullopt,
                          std::uint64_t seed = 0) {
  if (num_classes < 2) throw ValidationError("build_etf: need K >= 2");
  if (dim < num_classes)
    throw DimensionError("build_etf: need d >= K (d=" + std::to_string(dim) +
                         ", K=" + std::to_string(num_classes) + ")");
  const auto k = static_cast<Eigen::Index>(num_classes);

  Matrix basis;
  if (orthonormal_basis) {
    basis = *orthonormal_basis;
    if (basis.rows() != static_cast<Eigen::Index>(dim) || basis.cols() != k)
      throw DimensionError("build_etf: basis must be d x K");
    const double err = (basis.transpose() * basis - Matrix::Identity(k, k)).cwiseAbs().maxCoeff();
    if (!(err <= 1e-10)) throw ValidationError("build_etf: supplied basis is not orthonormal");
  } else {
    basis = random_partial_orthogonal(dim, num_classes, seed);
  }

  EtfFrame etf;
  etf.num_classes = num_classes;
  etf.dim = dim;
  const double scale = std::sqrt(static_cast<double>(num_classes) /
                                 static_cast<double>(num_classes - 1));
  etf.frame = scale * basis * centering_matrix(num_classes);
  etf.gram_target = etf_gram_target(num_classes);
  return etf;
}

}  // namespace pfc
