#pragma once

// Straight-line interpolation between a start feature configuration and a
// collapsed end configuration, metric curves along the line, monotonicity
// verdicts, and the relative layer coordinate of a recorded stack.

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pfc/core.hpp"
#include "pfc/etf.hpp"
#include "pfc/metrics.hpp"
#include "pfc/random.hpp"

namespace pfc {

enum class MetricKind { Pfc1, Pfc2, Pfc3 };

inline std::string_view to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::Pfc1: return "PFC1";
    case MetricKind::Pfc2: return "PFC2";
    case MetricKind::Pfc3: return "PFC3";
  }
  return "?";
}

inline MetricKind parse_metric_kind(std::string_view s) {
  if (s == "PFC1" || s == "pfc1") return MetricKind::Pfc1;
  if (s == "PFC2" || s == "pfc2") return MetricKind::Pfc2;
  if (s == "PFC3" || s == "pfc3") return MetricKind::Pfc3;
  throw ValidationError("unknown metric kind '" + std::string(s) + "'");
}

inline std::vector<double> uniform_grid(std::size_t points = 1001) {
  if (points < 2) throw ValidationError("uniform_grid: need at least 2 points");
  std::vector<double> grid(points);
  const double last = static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i) grid[i] = static_cast<double>(i) / last;
  grid.back() = 1.0;
  return grid;
}

class InterpolationPath {
 public:
  InterpolationPath(FeatureSet start, FeatureSet end, std::vector<double> grid = uniform_grid())
      : start_(std::move(start)), end_(std::move(end)), grid_(std::move(grid)) {
    if (!start_.same_shape(end_))
      throw DimensionError("InterpolationPath: start and end differ in K, n or d");
    if (grid_.size() < 2 || grid_.front() != 0.0 || grid_.back() != 1.0)
      throw ValidationError("InterpolationPath: grid must start at 0 and end at 1");
    for (std::size_t i = 1; i < grid_.size(); ++i)
      if (!(grid_[i] > grid_[i - 1]))
        throw ValidationError("InterpolationPath: grid must be strictly increasing");
  }

  const FeatureSet& start() const noexcept { return start_; }
  const FeatureSet& end() const noexcept { return end_; }
  const std::vector<double>& grid() const noexcept { return grid_; }

 private:
  FeatureSet start_;
  FeatureSet end_;
  std::vector<double> grid_;
};

/// Features at position t on the line: (1 - t) start + t end, columnwise.
inline FeatureSet interpolate(const InterpolationPath& path, double t) {
  if (!(t >= 0.0 && t <= 1.0))
    throw RangeError("interpolate: t = " + std::to_string(t) + " outside [0, 1]");
  const auto& a = path.start();
  Matrix h = (1.0 - t) * a.features() + t * path.end().features();
  return FeatureSet(std::move(h), a.num_classes(), a.per_class());
}

struct MetricCurve {
  std::vector<double> ts;
  std::vector<double> values;
  MetricKind kind = MetricKind::Pfc1;
};

inline double evaluate_metric(const FeatureSet& fs, MetricKind kind, const Matrix& gram_target) {
  switch (kind) {
    case MetricKind::Pfc1: return pfc1(fs);
    case MetricKind::Pfc2: return pfc2(fs, gram_target);
    case MetricKind::Pfc3: return pfc3(fs);
  }
  return 0.0;
}

inline MetricCurve metric_curve(const InterpolationPath& path, MetricKind kind,
                                const Matrix& gram_target) {
  MetricCurve curve;
  curve.kind = kind;
  curve.ts = path.grid();
  curve.values.reserve(curve.ts.size());
  for (double t : curve.ts) {
    try {
      curve.values.push_back(evaluate_metric(interpolate(path, t), kind, gram_target));
    } catch (const DegenerateInputError& e) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "metric_curve(" << to_string(kind) << "): degenerate at t = " << t << ": " << e.what();
      throw DegenerateInputError(msg.str());
    }
  }
  return curve;
}

inline MetricCurve metric_curve(const InterpolationPath& path, MetricKind kind,
                                const EtfFrame& target) {
  return metric_curve(path, kind, target.gram_target);
}

inline MetricCurve metric_curve(const InterpolationPath& path, MetricKind kind) {
  return metric_curve(path, kind, etf_gram_target(path.start().num_classes()));
}

struct AssumptionCheck {
  bool satisfied = false;
  double value = 0.0;  // sum_k <h_k(0) - h_G(0), h_k(1) - h_G(1)>
};

/// Sign condition under which PFC1 decreases strictly along the line.
inline AssumptionCheck check_theorem1_assumption(const InterpolationPath& path) {
  const Matrix c0 = centered_class_mean_matrix(path.start());
  const Matrix c1 = centered_class_mean_matrix(path.end());
  const double value = c0.cwiseProduct(c1).sum();
  return {value >= 0.0, value};
}

enum class Monotonicity { StrictlyDecreasing, Nonincreasing, Violated };

inline std::string_view to_string(Monotonicity m) {
  switch (m) {
    case Monotonicity::StrictlyDecreasing: return "strictly-decreasing";
    case Monotonicity::Nonincreasing: return "nonincreasing";
    case Monotonicity::Violated: return "violated";
  }
  return "?";
}

struct MonotonicityVerdict {
  Monotonicity kind = Monotonicity::StrictlyDecreasing;
  std::optional<std::size_t> first_violation;  // index i with values[i+1] - values[i] too large
};

/// A step i -> i+1 is a violation when it rises by more than
/// slack_rel * max|values|. Without violations the curve is strictly
/// decreasing if every step is negative, nonincreasing otherwise.
inline MonotonicityVerdict monotonicity_report(std::span<const double> values, double slack_rel) {
  if (values.empty()) throw ValidationError("monotonicity_report: empty curve");
  double scale = 0.0;
  for (double v : values) scale = std::max(scale, std::abs(v));
  const double tol = slack_rel * scale;
  bool strict = true;
  for (std::size_t i = 0; i + 1 < values.size(); ++i) {
    const double step = values[i + 1] - values[i];
    if (!(step <= tol)) return {Monotonicity::Violated, i};
    if (!(step < 0.0)) strict = false;
  }
  return {strict ? Monotonicity::StrictlyDecreasing : Monotonicity::Nonincreasing, std::nullopt};
}

inline MonotonicityVerdict monotonicity_report(const MetricCurve& curve, double slack_rel) {
  return monotonicity_report(std::span<const double>(curve.values), slack_rel);
}

/// Cumulative per-sample path length of each layer, normalized to [0, 1].
inline std::vector<double> relative_positions(const LayerStack& stack) {
  stack.validate();
  if (stack.size() < 2) throw ValidationError("relative_positions: need at least 2 layers");
  std::vector<double> cumulative(stack.size(), 0.0);
  for (std::size_t l = 0; l + 1 < stack.size(); ++l) {
    const Matrix step = stack[l + 1].features() - stack[l].features();
    cumulative[l + 1] = cumulative[l] + step.colwise().norm().sum();
  }
  const double total = cumulative.back();
  if (!(total > 0.0)) throw DegenerateInputError("relative_positions: zero total path length");
  for (double& p : cumulative) p /= total;
  cumulative.back() = 1.0;
  return cumulative;
}

/// Every sample placed exactly on its class mean; class means are
/// `centered_means` (d x K) shifted by `offset`.
inline FeatureSet collapsed_features(const Matrix& centered_means, const Vector& offset,
                                     std::size_t per_class) {
  const auto num_classes = static_cast<std::size_t>(centered_means.cols());
  Matrix h(centered_means.rows(), static_cast<Eigen::Index>(num_classes * per_class));
  for (std::size_t k = 0; k < num_classes; ++k) {
    const Vector mean = centered_means.col(static_cast<Eigen::Index>(k)) + offset;
    for (std::size_t i = 0; i < per_class; ++i)
      h.col(static_cast<Eigen::Index>(k * per_class + i)) = mean;
  }
  return FeatureSet(std::move(h), num_classes, per_class);
}

/// Seeded (start, collapsed end) pair whose inner-product sign condition holds.
/// The start has Gaussian samples around Gaussian class offsets; the end is a
/// scaled simplex ETF translated by a random global mean. The ETF sign is
/// flipped when needed, which leaves its Gram unchanged.
inline InterpolationPath theorem1_fixture(std::uint64_t seed, std::size_t num_classes,
                                          std::size_t per_class, std::size_t dim,
                                          std::vector<double> grid = uniform_grid()) {
  auto rng = derive_rng(seed, 0x7431ULL);
  const auto d = static_cast<Eigen::Index>(dim);
  const auto nk = static_cast<Eigen::Index>(num_classes * per_class);
  Matrix start = gaussian_matrix(d, nk, rng);
  const Matrix offsets = gaussian_matrix(d, static_cast<Eigen::Index>(num_classes), rng);
  for (std::size_t k = 0; k < num_classes; ++k)
    start.middleCols(static_cast<Eigen::Index>(k * per_class),
                     static_cast<Eigen::Index>(per_class))
        .colwise() += offsets.col(static_cast<Eigen::Index>(k));
  std::uniform_real_distribution<double> scale_dist(0.5, 2.0);
  const double scale = scale_dist(rng);
  const Vector global = gaussian_matrix(d, 1, rng).col(0);
  const EtfFrame etf = build_etf(num_classes, dim, std::nullopt, rng());

  FeatureSet start_fs(std::move(start), num_classes, per_class);
  Matrix means = scale * etf.frame;
  if (centered_class_mean_matrix(start_fs).cwiseProduct(means).sum() < 0.0) means = -means;
  return InterpolationPath(std::move(start_fs), collapsed_features(means, global, per_class),
                           std::move(grid));
}

/// Seeded pair whose centered class means differ from an exact ETF end by a
/// centered perturbation of Frobenius norm `relative_cost * ||H~(1)||_F`.
inline InterpolationPath theorem2_fixture(std::uint64_t seed, std::size_t num_classes,
                                          std::size_t per_class, std::size_t dim,
                                          double relative_cost = 0.01,
                                          std::vector<double> grid = uniform_grid()) {
  auto rng = derive_rng(seed, 0x7432ULL);
  const auto d = static_cast<Eigen::Index>(dim);
  const auto kk = static_cast<Eigen::Index>(num_classes);
  std::uniform_real_distribution<double> scale_dist(0.5, 2.0);
  const double scale = scale_dist(rng);
  const Vector global = gaussian_matrix(d, 1, rng).col(0);
  const EtfFrame etf = build_etf(num_classes, dim, std::nullopt, rng());
  const Matrix end_means = scale * etf.frame;

  Matrix delta = gaussian_matrix(d, kk, rng) * centering_matrix(num_classes);
  delta *= relative_cost * end_means.norm() / delta.norm();
  const Matrix start_means = end_means + delta;

  // Within-class scatter with exactly zero per-class mean.
  Matrix start(d, kk * static_cast<Eigen::Index>(per_class));
  for (std::size_t k = 0; k < num_classes; ++k) {
    Matrix noise = gaussian_matrix(d, static_cast<Eigen::Index>(per_class), rng);
    const Vector noise_mean = noise.rowwise().mean();
    noise.colwise() -= noise_mean;
    noise.colwise() += start_means.col(static_cast<Eigen::Index>(k)) + global;
    start.middleCols(static_cast<Eigen::Index>(k * per_class),
                     static_cast<Eigen::Index>(per_class)) = noise;
  }
  return InterpolationPath(FeatureSet(std::move(start), num_classes, per_class),
                           collapsed_features(end_means, global, per_class), std::move(grid));
}

}  // namespace pfc
