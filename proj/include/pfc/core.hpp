#pragma once

// Feature containers and the class statistics every collapse metric is built on.
//
// Features are stored as a d x (K*n) matrix whose columns are grouped by class:
// columns [k*n, (k+1)*n) hold the n samples of class k.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace pfc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Error taxonomy. The CLI maps the first group to exit code 1 and the
// numeric group to exit code 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct DimensionError : ValidationError {
  using ValidationError::ValidationError;
};
struct RangeError : ValidationError {
  using ValidationError::ValidationError;
};
struct FormatError : ValidationError {
  using ValidationError::ValidationError;
};
struct NumericError : Error {
  using Error::Error;
};
struct DegenerateInputError : NumericError {
  using NumericError::NumericError;
};
struct DivergenceError : NumericError {
  DivergenceError(const std::string& what, std::size_t epoch)
      : NumericError(what + " (epoch " + std::to_string(epoch) + ")"), epoch(epoch) {}
  std::size_t epoch;
};

/// One layer's features for a balanced K-class, n-per-class dataset.
class FeatureSet {
 public:
  FeatureSet(Matrix features, std::size_t num_classes, std::size_t per_class)
      : features_(std::move(features)), num_classes_(num_classes), per_class_(per_class) {
    if (num_classes_ < 2) throw ValidationError("FeatureSet: need at least 2 classes");
    if (per_class_ < 1) throw ValidationError("FeatureSet: need at least 1 sample per class");
    if (features_.rows() < 1) throw DimensionError("FeatureSet: feature dimension must be >= 1");
    if (static_cast<std::size_t>(features_.cols()) != num_classes_ * per_class_)
      throw DimensionError("FeatureSet: expected " + std::to_string(num_classes_ * per_class_) +
                           " columns, got " + std::to_string(features_.cols()));
    if (!features_.allFinite()) throw ValidationError("FeatureSet: non-finite entry");
  }

  const Matrix& features() const noexcept { return features_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t per_class() const noexcept { return per_class_; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(features_.rows()); }
  std::size_t num_samples() const noexcept { return num_classes_ * per_class_; }

  /// Columns of class k.
  auto class_block(std::size_t k) const {
    return features_.middleCols(static_cast<Eigen::Index>(k * per_class_),
                                static_cast<Eigen::Index>(per_class_));
  }
  auto sample(std::size_t k, std::size_t i) const {
    return features_.col(static_cast<Eigen::Index>(k * per_class_ + i));
  }

  bool same_shape(const FeatureSet& other) const noexcept {
    return num_classes_ == other.num_classes_ && per_class_ == other.per_class_ &&
           dim() == other.dim();
  }

 private:
  Matrix features_;
  std::size_t num_classes_;
  std::size_t per_class_;
};

/// Ordered features of layers 0..L of one network; layer 0 is the block input.
struct LayerStack {
  std::vector<FeatureSet> layers;
  std::size_t epoch = 0;

  std::size_t size() const noexcept { return layers.size(); }
  const FeatureSet& operator[](std::size_t l) const { return layers.at(l); }

  void validate() const {
    if (layers.empty()) throw ValidationError("LayerStack: empty");
    for (const auto& fs : layers)
      if (!fs.same_shape(layers.front()))
        throw DimensionError("LayerStack: layers disagree in K, n or d");
  }
};

struct ClassStats {
  Matrix class_means;  // d x K
  Vector global_mean;  // d
  double tr_within = 0.0;
  double tr_between = 0.0;
};

inline Matrix class_means(const FeatureSet& fs) {
  Matrix means(fs.dim(), fs.num_classes());
  const double inv_n = 1.0 / static_cast<double>(fs.per_class());
  for (std::size_t k = 0; k < fs.num_classes(); ++k)
    means.col(static_cast<Eigen::Index>(k)) = fs.class_block(k).rowwise().sum() * inv_n;
  return means;
}

/// Class means, global mean and the traces of the within/between class
/// covariances. Only traces are formed; the d x d matrices never are.
inline ClassStats class_stats(const FeatureSet& fs) {
  ClassStats s;
  s.class_means = class_means(fs);
  s.global_mean = s.class_means.rowwise().mean();

  double within = 0.0;
  for (std::size_t k = 0; k < fs.num_classes(); ++k) {
    const auto mean_k = s.class_means.col(static_cast<Eigen::Index>(k));
    within += (fs.class_block(k).colwise() - mean_k).squaredNorm();
  }
  s.tr_within = within / static_cast<double>(fs.num_samples());
  s.tr_between = (s.class_means.colwise() - s.global_mean).squaredNorm() /
                 static_cast<double>(fs.num_classes());
  return s;
}

/// d x K matrix whose column k is h_k - h_G.
inline Matrix centered_class_mean_matrix(const FeatureSet& fs) {
  Matrix means = class_means(fs);
  const Vector global = means.rowwise().mean();
  means.colwise() -= global;
  return means;
}

/// Labels 0..K-1 for the class-contiguous column layout.
inline std::vector<int> block_labels(std::size_t num_classes, std::size_t per_class) {
  std::vector<int> labels(num_classes * per_class);
  for (std::size_t j = 0; j < labels.size(); ++j) labels[j] = static_cast<int>(j / per_class);
  return labels;
}

}  // namespace pfc
