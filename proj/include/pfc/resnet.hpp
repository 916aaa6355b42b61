#pragma once

// Fully connected residual network trained from scratch with SGD.
//
//   x^0     = relu(W_in x + b_in)                    (D -> d embedding)
//   x^{l+1} = x^l + relu(W_l x^l + b_l),  l < L      (residual blocks)
//   logits  = W_out x^L + b_out
//
// Features x^0..x^L of the whole training set are recorded at snapshot
// epochs and scored with the collapse metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "pfc/core.hpp"
#include "pfc/data.hpp"
#include "pfc/metrics.hpp"
#include "pfc/random.hpp"

namespace pfc {

struct TrainConfig {
  std::size_t num_blocks = 6;
  std::size_t width = 64;
  std::size_t input_dim = 16;
  std::size_t num_classes = 4;
  std::size_t per_class = 256;
  double lr = 0.01;
  double lr_decay = 0.1;
  std::vector<std::size_t> decay_epochs{100, 200};
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool decay_biases = true;
  std::size_t batch_size = 128;
  std::size_t epochs = 300;
  std::uint64_t seed = 0;
  std::size_t record_stride = 10;
  double block_init_gain = 1.0;  // multiplies the init std of residual-branch weights

  void validate() const {
    if (width < 1 || input_dim < 1 || num_classes < 2 || per_class < 1 || batch_size < 1 || epochs < 1)
      throw ValidationError("TrainConfig: counts must be positive (K >= 2)");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("TrainConfig: momentum must lie in [0, 1)");
    if (!(block_init_gain >= 0.0)) throw ValidationError("TrainConfig: block_init_gain must be >= 0");
    if (!(lr >= 0.0) || !(weight_decay >= 0.0) || !(lr_decay > 0.0))
      throw ValidationError("TrainConfig: lr, weight_decay must be >= 0 and lr_decay > 0");
    for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
      if (decay_epochs[i] >= epochs) throw ValidationError("TrainConfig: decay epoch beyond training");
      if (i > 0 && decay_epochs[i] <= decay_epochs[i - 1])
        throw ValidationError("TrainConfig: decay epochs must be strictly increasing");
    }
  }

  /// Learning rate used during 1-based epoch `epoch`; each milestone m
  /// applies from epoch m + 1 on, i.e. after m full epochs.
  double lr_at(std::size_t epoch) const {
    double rate = lr;
    for (std::size_t m : decay_epochs)
      if (epoch > m) rate *= lr_decay;
    return rate;
  }
};

/// Parameters in a fixed order: W_in, b_in, (W_l, b_l) for each block, W_out, b_out.
/// Biases are stored as single-column matrices.
struct ResnetParams {
  std::vector<Matrix> tensors;
  std::size_t num_blocks = 0;

  Matrix& w_in() { return tensors[0]; }
  Matrix& b_in() { return tensors[1]; }
  Matrix& w_block(std::size_t l) { return tensors[2 + 2 * l]; }
  Matrix& b_block(std::size_t l) { return tensors[3 + 2 * l]; }
  Matrix& w_out() { return tensors[2 + 2 * num_blocks]; }
  Matrix& b_out() { return tensors[3 + 2 * num_blocks]; }
  const Matrix& w_in() const { return tensors[0]; }
  const Matrix& b_in() const { return tensors[1]; }
  const Matrix& w_block(std::size_t l) const { return tensors[2 + 2 * l]; }
  const Matrix& b_block(std::size_t l) const { return tensors[3 + 2 * l]; }
  const Matrix& w_out() const { return tensors[2 + 2 * num_blocks]; }
  const Matrix& b_out() const { return tensors[3 + 2 * num_blocks]; }

  static bool is_bias(std::size_t index) { return index % 2 == 1; }

  static ResnetParams zeros(std::size_t input_dim, std::size_t width, std::size_t num_blocks,
                            std::size_t num_classes) {
    const auto d = static_cast<Eigen::Index>(width);
    ResnetParams p;
    p.num_blocks = num_blocks;
    p.tensors.push_back(Matrix::Zero(d, static_cast<Eigen::Index>(input_dim)));
    p.tensors.push_back(Matrix::Zero(d, 1));
    for (std::size_t l = 0; l < num_blocks; ++l) {
      p.tensors.push_back(Matrix::Zero(d, d));
      p.tensors.push_back(Matrix::Zero(d, 1));
    }
    p.tensors.push_back(Matrix::Zero(static_cast<Eigen::Index>(num_classes), d));
    p.tensors.push_back(Matrix::Zero(static_cast<Eigen::Index>(num_classes), 1));
    return p;
  }

  /// Weights ~ N(0, 2 / fan_in), biases zero. Residual-branch weights get
  /// their std multiplied by block_gain.
  static ResnetParams kaiming(std::size_t input_dim, std::size_t width, std::size_t num_blocks,
                              std::size_t num_classes, std::uint64_t seed, double block_gain = 1.0) {
    ResnetParams p = zeros(input_dim, width, num_blocks, num_classes);
    auto rng = derive_rng(seed, 0x4e7ULL);
    for (std::size_t i = 0; i < p.tensors.size(); i += 2) {
      Matrix& w = p.tensors[i];
      const bool block = i >= 2 && i < 2 + 2 * num_blocks;
      const double std_dev = std::sqrt(2.0 / static_cast<double>(w.cols())) * (block ? block_gain : 1.0);
      w = gaussian_matrix(w.rows(), w.cols(), rng, std_dev);
    }
    return p;
  }

  std::size_t input_dim() const { return static_cast<std::size_t>(tensors[0].cols()); }
  std::size_t width() const { return static_cast<std::size_t>(tensors[0].rows()); }
  std::size_t num_classes() const { return static_cast<std::size_t>(tensors.back().rows()); }
};

struct ForwardState {
  Matrix logits;                    // K x B
  std::vector<Matrix> features;     // x^0..x^L, each d x B
  std::vector<Matrix> pre_acts;     // pre-activation of the embedding, then of each block
};

inline ForwardState resnet_forward(const ResnetParams& params, const Matrix& batch) {
  if (batch.rows() != static_cast<Eigen::Index>(params.input_dim()))
    throw DimensionError("resnet_forward: batch rows must equal the input dimension");
  ForwardState s;
  s.features.reserve(params.num_blocks + 1);
  s.pre_acts.reserve(params.num_blocks + 1);

  Matrix z = params.w_in() * batch;
  z.colwise() += params.b_in().col(0);
  s.features.push_back(z.cwiseMax(0.0));
  s.pre_acts.push_back(std::move(z));
  for (std::size_t l = 0; l < params.num_blocks; ++l) {
    const Matrix& x = s.features.back();
    Matrix zl = params.w_block(l) * x;
    zl.colwise() += params.b_block(l).col(0);
    Matrix next = x + zl.cwiseMax(0.0);
    s.pre_acts.push_back(std::move(zl));
    s.features.push_back(std::move(next));
  }
  s.logits = params.w_out() * s.features.back();
  s.logits.colwise() += params.b_out().col(0);
  return s;
}

/// Mean cross-entropy of the logits against integer labels.
inline double cross_entropy(const Matrix& logits, std::span<const int> labels) {
  double total = 0.0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const auto col = logits.col(j);
    const double m = col.maxCoeff();
    total += m + std::log((col.array() - m).exp().sum()) - col(labels[static_cast<std::size_t>(j)]);
  }
  return total / static_cast<double>(logits.cols());
}

inline std::size_t count_correct(const Matrix& logits, std::span<const int> labels) {
  std::size_t correct = 0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    Eigen::Index best = 0;
    logits.col(j).maxCoeff(&best);
    if (best == labels[static_cast<std::size_t>(j)]) ++correct;
  }
  return correct;
}

/// Gradients of the mean cross-entropy (no weight decay), same layout as params.
inline std::vector<Matrix> resnet_backward(const ResnetParams& params, const Matrix& batch,
                                           std::span<const int> labels, const ForwardState& state) {
  const Eigen::Index b = batch.cols();
  if (static_cast<Eigen::Index>(labels.size()) != b)
    throw DimensionError("resnet_backward: one label per batch column required");
  std::vector<Matrix> grads(params.tensors.size());

  Matrix dlogits = state.logits.rowwise() - state.logits.colwise().maxCoeff();
  dlogits = dlogits.array().exp();
  dlogits.array().rowwise() /= dlogits.colwise().sum().array();
  for (Eigen::Index j = 0; j < b; ++j) dlogits(labels[static_cast<std::size_t>(j)], j) -= 1.0;
  dlogits /= static_cast<double>(b);

  const std::size_t L = params.num_blocks;
  grads[2 + 2 * L] = dlogits * state.features[L].transpose();
  grads[3 + 2 * L] = dlogits.rowwise().sum();
  Matrix g = params.w_out().transpose() * dlogits;

  for (std::size_t l = L; l-- > 0;) {
    const Matrix dz = g.cwiseProduct((state.pre_acts[l + 1].array() > 0.0).cast<double>().matrix());
    grads[2 + 2 * l] = dz * state.features[l].transpose();
    grads[3 + 2 * l] = dz.rowwise().sum();
    g += params.w_block(l).transpose() * dz;
  }
  const Matrix dz = g.cwiseProduct((state.pre_acts[0].array() > 0.0).cast<double>().matrix());
  grads[0] = dz * batch.transpose();
  grads[1] = dz.rowwise().sum();
  return grads;
}

struct LayerMetrics {
  // One entry per layer 0..L; NaN where a metric's denominator vanished.
  std::vector<PfcReport> layers;
};

struct Snapshot {
  std::size_t epoch = 0;
  LayerStack stack;
  LayerMetrics metrics;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainTrace {
  std::vector<double> loss;      // per epoch, mean minibatch loss before each update
  std::vector<double> accuracy;  // per epoch, minibatch accuracy before each update
  std::vector<Snapshot> snapshots;
  ResnetParams params;
};

/// Full-data forward pass recorded as a LayerStack with per-layer metrics.
inline Snapshot take_snapshot(const ResnetParams& params, const LabeledData& data, std::size_t epoch) {
  const ForwardState s = resnet_forward(params, data.inputs.features());
  for (const Matrix& f : s.features)
    if (!f.allFinite()) throw DivergenceError("train: features are not finite", epoch);
  Snapshot snap;
  snap.epoch = epoch;
  snap.stack.epoch = epoch;
  for (const Matrix& f : s.features) {
    snap.stack.layers.emplace_back(f, data.inputs.num_classes(), data.inputs.per_class());
    snap.metrics.layers.push_back(pfc_report_or_nan(snap.stack.layers.back()));
  }
  snap.loss = cross_entropy(s.logits, data.labels);
  snap.accuracy = static_cast<double>(count_correct(s.logits, data.labels)) /
                  static_cast<double>(data.labels.size());
  return snap;
}

/// SGD with heavy-ball momentum (v <- m v + g, theta <- theta - lr v), where g
/// includes the L2 term weight_decay * theta. Snapshots are taken every
/// record_stride epochs and after the final epoch.
inline TrainTrace train(const TrainConfig& cfg, const LabeledData& data) {
  cfg.validate();
  const FeatureSet& inputs = data.inputs;
  if (inputs.dim() != cfg.input_dim || inputs.num_classes() != cfg.num_classes ||
      inputs.per_class() != cfg.per_class)
    throw DimensionError("train: data shape does not match the configuration");
  if (data.labels.size() != inputs.num_samples()) throw DimensionError("train: label count mismatch");

  TrainTrace trace;
  trace.params = ResnetParams::kaiming(cfg.input_dim, cfg.width, cfg.num_blocks, cfg.num_classes, cfg.seed,
                                         cfg.block_init_gain);
  ResnetParams& params = trace.params;
  std::vector<Matrix> velocity;
  for (const Matrix& t : params.tensors) velocity.push_back(Matrix::Zero(t.rows(), t.cols()));

  const std::size_t total = inputs.num_samples();
  std::vector<std::size_t> order(total);
  Matrix batch;
  std::vector<int> batch_labels;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    auto rng = derive_rng(cfg.seed, 0x5eed0000ULL + epoch);
    std::shuffle(order.begin(), order.end(), rng);
    const double rate = cfg.lr_at(epoch);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < total; start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, total - start);
      batch.resize(static_cast<Eigen::Index>(cfg.input_dim), static_cast<Eigen::Index>(count));
      batch_labels.resize(count);
      for (std::size_t j = 0; j < count; ++j) {
        batch.col(static_cast<Eigen::Index>(j)) = inputs.features().col(static_cast<Eigen::Index>(order[start + j]));
        batch_labels[j] = data.labels[order[start + j]];
      }
      const ForwardState state = resnet_forward(params, batch);
      const double loss = cross_entropy(state.logits, batch_labels);
      if (!std::isfinite(loss)) throw DivergenceError("train: loss is not finite", epoch);
      loss_sum += loss * static_cast<double>(count);
      correct += count_correct(state.logits, batch_labels);

      std::vector<Matrix> grads = resnet_backward(params, batch, batch_labels, state);
      for (std::size_t i = 0; i < grads.size(); ++i) {
        if (cfg.weight_decay > 0.0 && (cfg.decay_biases || !ResnetParams::is_bias(i)))
          grads[i] += cfg.weight_decay * params.tensors[i];
        velocity[i] = cfg.momentum * velocity[i] + grads[i];
        params.tensors[i] -= rate * velocity[i];
      }
    }
    for (const Matrix& t : params.tensors)
      if (!t.allFinite()) throw DivergenceError("train: parameters are not finite", epoch);
    trace.loss.push_back(loss_sum / static_cast<double>(total));
    trace.accuracy.push_back(static_cast<double>(correct) / static_cast<double>(total));

    const bool record = (cfg.record_stride > 0 && epoch % cfg.record_stride == 0) || epoch == cfg.epochs;
    if (record) trace.snapshots.push_back(take_snapshot(params, data, epoch));
  }
  return trace;
}

}  // namespace pfc
