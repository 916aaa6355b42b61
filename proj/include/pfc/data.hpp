#pragma once

#include <cstdint>
#include <vector>

#include "pfc/core.hpp"
#include "pfc/random.hpp"

namespace pfc {

struct LabeledData {
  FeatureSet inputs;  // D x Kn, class-contiguous
  std::vector<int> labels;
  Matrix means;  // D x K class means the samples were drawn around (empty for loaded data)
};

/// Balanced Gaussian mixture: class means are mean_scale times uniform unit
/// directions, samples are mean + noise_std * N(0, I).
inline LabeledData gen_gaussian_mixture(std::size_t num_classes, std::size_t dim,
                                        std::size_t per_class, double mean_scale,
                                        std::uint64_t seed, double noise_std = 1.0) {
  if (num_classes < 2 || per_class < 1 || dim < 1)
    throw ValidationError("gen_gaussian_mixture: need K >= 2, n >= 1, d >= 1");
  auto rng = derive_rng(seed, 0x6a55ULL);
  const auto d = static_cast<Eigen::Index>(dim);
  Matrix means(d, static_cast<Eigen::Index>(num_classes));
  for (Eigen::Index k = 0; k < means.cols(); ++k) means.col(k) = mean_scale * unit_sphere_sample(d, rng);

  Matrix x(d, static_cast<Eigen::Index>(num_classes * per_class));
  for (std::size_t k = 0; k < num_classes; ++k) {
    const auto block = static_cast<Eigen::Index>(k * per_class);
    const auto n = static_cast<Eigen::Index>(per_class);
    if (noise_std > 0.0)
      x.middleCols(block, n) = gaussian_matrix(d, n, rng, noise_std);
    else
      x.middleCols(block, n).setZero();
    x.middleCols(block, n).colwise() += means.col(static_cast<Eigen::Index>(k));
  }
  return {FeatureSet(std::move(x), num_classes, per_class), block_labels(num_classes, per_class),
          std::move(means)};
}

}  // namespace pfc
