#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pfc/data.hpp"
#include "pfc/resnet.hpp"

using namespace pfc;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.num_blocks = 2;
  cfg.width = 4;
  cfg.input_dim = 3;
  cfg.num_classes = 2;
  cfg.per_class = 2;
  cfg.batch_size = 4;
  cfg.epochs = 5;
  cfg.decay_epochs = {};
  cfg.record_stride = 1;
  return cfg;
}

}  // namespace

TEST(Forward, ZeroBlocksAreIdentity) {
  ResnetParams p = ResnetParams::kaiming(3, 4, 3, 2, 1);
  for (std::size_t l = 0; l < 3; ++l) {
    p.w_block(l).setZero();
    p.b_block(l).setZero();
  }
  auto rng = derive_rng(1, 1);
  const ForwardState s = resnet_forward(p, gaussian_matrix(3, 5, rng));
  for (const Matrix& f : s.features) EXPECT_EQ(f, s.features.front());
}

TEST(Forward, NoBlocksIsLinearHeadOnEmbedding) {
  const ResnetParams p = ResnetParams::kaiming(3, 4, 0, 2, 2);
  auto rng = derive_rng(2, 1);
  const Matrix x = gaussian_matrix(3, 5, rng);
  const ForwardState s = resnet_forward(p, x);
  ASSERT_EQ(s.features.size(), 1u);
  Matrix expected = p.w_out() * s.features[0];
  expected.colwise() += p.b_out().col(0);
  EXPECT_EQ(s.logits, expected);
}

TEST(Forward, SingleBlockHandExample) {
  // The embedding output is nonnegative, so the block's pre-activation
  // (1, -1) is produced with a bias: x0 = (1, 1), W_0 = I, b_0 = (0, -2).
  ResnetParams p = ResnetParams::zeros(2, 2, 1, 2);
  p.w_in().setIdentity();
  p.w_block(0).setIdentity();
  p.b_block(0) << 0, -2;
  Matrix x(2, 1);
  x << 1, 1;
  const ForwardState s = resnet_forward(p, x);
  EXPECT_EQ(s.pre_acts[1](0, 0), 1.0);
  EXPECT_EQ(s.pre_acts[1](1, 0), -1.0);
  EXPECT_EQ(s.features[1](0, 0), 2.0);
  EXPECT_EQ(s.features[1](1, 0), 1.0);
}

TEST(Forward, RejectsWrongInputDim) {
  const ResnetParams p = ResnetParams::kaiming(3, 4, 1, 2, 0);
  EXPECT_THROW(resnet_forward(p, Matrix::Zero(4, 2)), DimensionError);
}

TEST(Backward, FiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ResnetParams p = ResnetParams::kaiming(3, 4, 2, 2, seed);
    for (std::size_t i = 1; i < p.tensors.size(); i += 2) {
      auto rng = derive_rng(seed, 50 + i);
      p.tensors[i] = gaussian_matrix(p.tensors[i].rows(), 1, rng, 0.1);
    }
    const LabeledData data = gen_gaussian_mixture(2, 3, 2, 2.0, seed);
    const Matrix& x = data.inputs.features();
    const auto grads = resnet_backward(p, x, data.labels, resnet_forward(p, x));
    for (std::size_t i = 0; i < p.tensors.size(); ++i) {
      const Matrix fd = oracle::finite_difference(
          p.tensors[i], [&] { return cross_entropy(resnet_forward(p, x).logits, data.labels); }, 1e-6);
      // Dead ReLUs can zero a whole tensor gradient; the floor keeps roundoff out of the ratio.
      const double scale = std::max(1e-6, fd.cwiseAbs().maxCoeff());
      EXPECT_LE((grads[i] - fd).cwiseAbs().maxCoeff() / scale, 1e-4) << "seed " << seed << " tensor " << i;
    }
  }
}

TEST(Backward, UniformLogitsGiveSoftmaxMinusOneHot) {
  ResnetParams p = ResnetParams::kaiming(3, 4, 1, 3, 4);
  p.w_out().setZero();
  const LabeledData data = gen_gaussian_mixture(3, 3, 2, 1.0, 4);
  const Matrix& x = data.inputs.features();
  const auto grads = resnet_backward(p, x, data.labels, resnet_forward(p, x));
  // Two samples per class: each output bias gets 6 * (1/3) - 2 = 0, over B = 6.
  const Matrix& db_out = grads.back();
  EXPECT_LE(db_out.cwiseAbs().maxCoeff(), 1e-16);
  // The output weight gradient is sum_j (1/3 - onehot_j) x_j^T / 6.
  const ForwardState s = resnet_forward(p, x);
  Matrix expected = Matrix::Zero(3, 4);
  for (Eigen::Index j = 0; j < 6; ++j)
    for (Eigen::Index k = 0; k < 3; ++k)
      expected.row(k) += ((1.0 / 3.0) - (data.labels[j] == k ? 1.0 : 0.0)) * s.features.back().col(j).transpose() / 6.0;
  EXPECT_LE((grads[grads.size() - 2] - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Backward, BatchMeanLinearity) {
  const ResnetParams p = ResnetParams::kaiming(3, 4, 2, 2, 6);
  auto rng = derive_rng(6, 1);
  const Matrix a = gaussian_matrix(3, 1, rng), b = gaussian_matrix(3, 1, rng);
  Matrix ab(3, 2), aa(3, 2);
  ab << a, b;
  aa << a, a;
  const std::vector<int> la{0}, lb{1}, lab{0, 1}, laa{0, 0};
  const auto ga = resnet_backward(p, a, la, resnet_forward(p, a));
  const auto gb = resnet_backward(p, b, lb, resnet_forward(p, b));
  const auto gab = resnet_backward(p, ab, lab, resnet_forward(p, ab));
  const auto gaa = resnet_backward(p, aa, laa, resnet_forward(p, aa));
  for (std::size_t i = 0; i < ga.size(); ++i) {
    EXPECT_LE((gab[i] - 0.5 * (ga[i] + gb[i])).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LE((gaa[i] - ga[i]).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Config, Validation) {
  TrainConfig cfg = tiny_config();
  cfg.momentum = 1.0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = tiny_config();
  cfg.decay_epochs = {3, 2};
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.decay_epochs = {5};
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = tiny_config();
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(Config, LearningRateSchedule) {
  TrainConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.lr_at(1), 0.01);
  EXPECT_DOUBLE_EQ(cfg.lr_at(100), 0.01);
  EXPECT_DOUBLE_EQ(cfg.lr_at(101), 0.001);
  EXPECT_NEAR(cfg.lr_at(201), 0.0001, 1e-18);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  TrainConfig cfg = tiny_config();
  cfg.lr = 0.0;
  cfg.epochs = 1;
  const LabeledData data = gen_gaussian_mixture(2, 3, 2, 2.0, 1);
  const TrainTrace t = train(cfg, data);
  const ResnetParams init = ResnetParams::kaiming(3, 4, 2, 2, cfg.seed);
  EXPECT_EQ(t.params.tensors, init.tensors);
  ASSERT_EQ(t.loss.size(), 1u);
  EXPECT_NEAR(t.loss[0], cross_entropy(resnet_forward(init, data.inputs.features()).logits, data.labels), 1e-15);
}

TEST(Train, SingleStepIsPlainGradientStep) {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  cfg.lr = 0.1;
  const LabeledData data = gen_gaussian_mixture(2, 3, 2, 2.0, 2);
  const TrainTrace t = train(cfg, data);
  const ResnetParams init = ResnetParams::kaiming(3, 4, 2, 2, cfg.seed);
  // The full batch is one shuffled step; the mean gradient does not depend on order
  // up to rounding.
  const Matrix& x = data.inputs.features();
  const auto g = resnet_backward(init, x, data.labels, resnet_forward(init, x));
  for (std::size_t i = 0; i < g.size(); ++i)
    EXPECT_LE((t.params.tensors[i] - (init.tensors[i] - 0.1 * g[i])).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Train, WeightDecayEntersBeforeMomentum) {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.5;
  cfg.decay_biases = false;
  cfg.lr = 0.1;
  const LabeledData data = gen_gaussian_mixture(2, 3, 2, 2.0, 2);
  const TrainTrace t = train(cfg, data);
  const ResnetParams init = ResnetParams::kaiming(3, 4, 2, 2, cfg.seed);
  const Matrix& x = data.inputs.features();
  const auto g = resnet_backward(init, x, data.labels, resnet_forward(init, x));
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Matrix step = ResnetParams::is_bias(i) ? g[i] : Matrix(g[i] + 0.5 * init.tensors[i]);
    EXPECT_LE((t.params.tensors[i] - (init.tensors[i] - 0.1 * step)).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Train, SnapshotsAndDeterminism) {
  TrainConfig cfg = tiny_config();
  cfg.record_stride = 2;
  const LabeledData data = gen_gaussian_mixture(2, 3, 2, 2.0, 3);
  const TrainTrace a = train(cfg, data), b = train(cfg, data);
  EXPECT_EQ(a.loss, b.loss);
  ASSERT_EQ(a.snapshots.size(), 3u);  // epochs 2, 4 and the final 5
  EXPECT_EQ(a.snapshots.back().epoch, 5u);
  for (const Snapshot& s : a.snapshots) {
    EXPECT_GE(s.epoch, 1u);
    EXPECT_LE(s.epoch, cfg.epochs);
    EXPECT_EQ(s.stack.size(), cfg.num_blocks + 1);
    EXPECT_EQ(s.metrics.layers.size(), cfg.num_blocks + 1);
  }
}

TEST(Train, RejectsMismatchedData) {
  TrainConfig cfg = tiny_config();
  EXPECT_THROW(train(cfg, gen_gaussian_mixture(3, 3, 2, 2.0, 3)), DimensionError);
}

TEST(Train, DivergenceReportsEpoch) {
  TrainConfig cfg = tiny_config();
  cfg.lr = 1e6;
  cfg.epochs = 50;
  const LabeledData data = gen_gaussian_mixture(2, 3, 2, 5.0, 3);
  try {
    train(cfg, data);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GE(e.epoch, 1u);
  }
}

TEST(GaussianMixture, ZeroScaleIsChance) {
  const LabeledData d = gen_gaussian_mixture(4, 16, 1000, 0.0, 1);
  EXPECT_NEAR(pfc3(d.inputs), 0.25, 0.1);
}

TEST(GaussianMixture, NoiselessSamplesSitOnMeans) {
  const LabeledData d = gen_gaussian_mixture(3, 5, 1, 2.0, 1, 0.0);
  EXPECT_EQ(pfc1(d.inputs), 0.0);
  EXPECT_EQ(pfc3(d.inputs), 1.0);
  for (Eigen::Index k = 0; k < 3; ++k) EXPECT_NEAR(d.means.col(k).norm(), 2.0, 1e-14);
}

TEST(GaussianMixture, EmpiricalMeansConverge) {
  const std::size_t n = 400, dim = 8;
  const LabeledData d = gen_gaussian_mixture(3, dim, n, 3.0, 5);
  const Matrix means = class_means(d.inputs);
  for (Eigen::Index k = 0; k < 3; ++k)
    EXPECT_LT((means.col(k) - d.means.col(k)).norm(), 3.0 * std::sqrt(static_cast<double>(dim) / n));
  EXPECT_EQ(d.labels, block_labels(3, n));
}

TEST(GaussianMixture, Deterministic) {
  EXPECT_EQ(gen_gaussian_mixture(3, 4, 5, 1.0, 9).inputs.features(),
            gen_gaussian_mixture(3, 4, 5, 1.0, 9).inputs.features());
  EXPECT_THROW(gen_gaussian_mixture(1, 4, 5, 1.0, 9), ValidationError);
}
