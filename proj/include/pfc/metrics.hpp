#pragma once

// Collapse metrics of a single layer, the data-alignment metric, and
// empirical effective depth.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "pfc/core.hpp"
#include "pfc/etf.hpp"

namespace pfc {

struct PfcReport {
  double pfc1 = 0.0;  // Tr(Sigma_W) / Tr(Sigma_B)
  double pfc2 = 0.0;  // distance of the normalized centered Gram to E
  double pfc3 = 0.0;  // nearest-class-center accuracy
};

/// Variability collapse: within-class over between-class variance trace.
inline double pfc1(const FeatureSet& fs) {
  const ClassStats s = class_stats(fs);
  if (!(s.tr_between > 0.0))
    throw DegenerateInputError("pfc1: between-class variance is zero (class means coincide)");
  return s.tr_within / s.tr_between;
}

/// || G / ||G||_F - E ||_F for the Gram G of the centered class means.
inline double pfc2(const FeatureSet& fs, const Matrix& gram_target) {
  if (gram_target.rows() != static_cast<Eigen::Index>(fs.num_classes()) ||
      gram_target.cols() != gram_target.rows())
    throw DimensionError("pfc2: target Gram must be K x K");
  const Matrix centered = centered_class_mean_matrix(fs);
  const Matrix gram = centered.transpose() * centered;
  const double norm = gram.norm();
  if (!(norm > 0.0)) throw DegenerateInputError("pfc2: centered class-mean Gram is zero");
  return (gram / norm - gram_target).norm();
}

inline double pfc2(const FeatureSet& fs, const EtfFrame& target) {
  return pfc2(fs, target.gram_target);
}

inline double pfc2(const FeatureSet& fs) { return pfc2(fs, etf_gram_target(fs.num_classes())); }

/// Nearest class mean for every column. Equidistant means resolve to the
/// smallest class index.
inline std::vector<int> nearest_class_mean(const Matrix& features, const Matrix& means) {
  const Eigen::Index num = features.cols();
  std::vector<int> best(static_cast<std::size_t>(num), 0);
  Eigen::RowVectorXd best_dist = (features.colwise() - means.col(0)).colwise().squaredNorm();
  for (Eigen::Index c = 1; c < means.cols(); ++c) {
    const Eigen::RowVectorXd dist = (features.colwise() - means.col(c)).colwise().squaredNorm();
    for (Eigen::Index j = 0; j < num; ++j) {
      if (dist(j) < best_dist(j)) {
        best_dist(j) = dist(j);
        best[static_cast<std::size_t>(j)] = static_cast<int>(c);
      }
    }
  }
  return best;
}

/// Nearest-class-center accuracy in [0, 1].
inline double pfc3(const FeatureSet& fs) {
  const auto assigned = nearest_class_mean(fs.features(), class_means(fs));
  std::size_t correct = 0;
  for (std::size_t j = 0; j < assigned.size(); ++j)
    if (assigned[j] == static_cast<int>(j / fs.per_class())) ++correct;
  return static_cast<double>(correct) / static_cast<double>(fs.num_samples());
}

inline PfcReport pfc_report(const FeatureSet& fs, const Matrix& gram_target) {
  return {pfc1(fs), pfc2(fs, gram_target), pfc3(fs)};
}

inline PfcReport pfc_report(const FeatureSet& fs) {
  return pfc_report(fs, etf_gram_target(fs.num_classes()));
}

/// pfc1/pfc2 become NaN instead of throwing when their denominators vanish.
inline PfcReport pfc_report_or_nan(const FeatureSet& fs) {
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  PfcReport r{nan, nan, pfc3(fs)};
  try {
    r.pfc1 = pfc1(fs);
  } catch (const DegenerateInputError&) {
  }
  try {
    r.pfc2 = pfc2(fs);
  } catch (const DegenerateInputError&) {
  }
  return r;
}

/// || H/||H||_F - X/||X||_F ||_F
inline double alignment(const Matrix& h, const Matrix& x) {
  if (h.rows() != x.rows() || h.cols() != x.cols())
    throw DimensionError("alignment: shape mismatch");
  const double nh = h.norm();
  const double nx = x.norm();
  if (!(nh > 0.0) || !(nx > 0.0)) throw DegenerateInputError("alignment: zero-norm input");
  return (h / nh - x / nx).norm();
}

/// Smallest layer index whose NCC error rate is at most epsilon.
inline std::optional<std::size_t> effective_depth(const LayerStack& stack, double epsilon) {
  if (stack.layers.empty()) throw ValidationError("effective_depth: empty stack");
  if (!(epsilon >= 0.0)) throw RangeError("effective_depth: epsilon must be >= 0");
  for (std::size_t l = 0; l < stack.size(); ++l)
    if (1.0 - pfc3(stack[l]) <= epsilon) return l;
  return std::nullopt;
}

/// Average ranks (1-based), ties sharing their mean rank.
inline std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t m = i; m <= j; ++m) ranks[order[m]] = rank;
    i = j + 1;
  }
  return ranks;
}

/// Spearman rank correlation (Pearson correlation of average ranks).
inline double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2)
    throw ValidationError("spearman: need two equal-length series of length >= 2");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const Eigen::Map<const Vector> va(ra.data(), static_cast<Eigen::Index>(ra.size()));
  const Eigen::Map<const Vector> vb(rb.data(), static_cast<Eigen::Index>(rb.size()));
  const Vector ca = va.array() - va.mean();
  const Vector cb = vb.array() - vb.mean();
  const double denom = ca.norm() * cb.norm();
  if (!(denom > 0.0)) throw DegenerateInputError("spearman: constant series");
  return ca.dot(cb) / denom;
}

}  // namespace pfc
