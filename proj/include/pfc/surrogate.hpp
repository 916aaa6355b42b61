#pragma once

// Unconstrained feature models.
//
//   UFM :  loss(W, H) + (lambda_W / 2) ||W||^2 + (lambda_H / 2) ||H||^2
//   MUFM:  loss(W, H) + (lambda_W / 2K) ||W||^2 + (lambda / 2Kn) ||H - X||^2
//
// with loss = (1/2Kn) ||WH - Y||^2 (MSE) or the mean cross-entropy of the
// columns of WH (CE). The multilayer form of MUFM, where every intermediate
// layer is a free variable tied by sum_l ||H^{l+1} - H^l||^2, reduces to the
// single-layer form because the optimal intermediates are equally spaced on
// the segment from X to H.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "pfc/core.hpp"
#include "pfc/metrics.hpp"
#include "pfc/random.hpp"

namespace pfc {

enum class ModelKind { Ufm, Mufm };
enum class LossKind { Mse, Ce };

inline std::string_view to_string(ModelKind m) { return m == ModelKind::Ufm ? "UFM" : "MUFM"; }
inline std::string_view to_string(LossKind l) { return l == LossKind::Mse ? "MSE" : "CE"; }

inline LossKind parse_loss_kind(std::string_view s) {
  if (s == "MSE" || s == "mse") return LossKind::Mse;
  if (s == "CE" || s == "ce") return LossKind::Ce;
  throw ValidationError("unknown loss '" + std::string(s) + "'");
}

/// K x Kn block one-hot matrix I_K (x) 1_n^T.
inline Matrix block_label_matrix(std::size_t num_classes, std::size_t per_class) {
  Matrix y = Matrix::Zero(static_cast<Eigen::Index>(num_classes),
                          static_cast<Eigen::Index>(num_classes * per_class));
  for (std::size_t k = 0; k < num_classes; ++k)
    y.block(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k * per_class), 1,
            static_cast<Eigen::Index>(per_class))
        .setOnes();
  return y;
}

struct SolveProblem {
  ModelKind kind = ModelKind::Mufm;
  LossKind loss = LossKind::Mse;
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  std::size_t per_class = 0;
  std::optional<Matrix> data;  // X, d x Kn; MUFM only
  double lambda_w = 0.0;
  double lambda = 0.0;  // MUFM transport coefficient, or lambda_H for UFM
  Matrix labels;        // Y, K x Kn
  std::uint64_t seed = 0;

  std::size_t num_samples() const noexcept { return num_classes * per_class; }

  void validate() const {
    if (num_classes < 2 || per_class < 1 || dim < 1)
      throw ValidationError("SolveProblem: need K >= 2, n >= 1, d >= 1");
    if (!(lambda_w > 0.0) || !(lambda > 0.0))
      throw ValidationError("SolveProblem: regularization coefficients must be positive");
    const auto kn = static_cast<Eigen::Index>(num_samples());
    if (kind == ModelKind::Mufm) {
      if (!data) throw ValidationError("SolveProblem: MUFM requires a data matrix");
      if (data->rows() != static_cast<Eigen::Index>(dim) || data->cols() != kn)
        throw DimensionError("SolveProblem: data matrix must be d x Kn");
      if (!data->allFinite()) throw ValidationError("SolveProblem: non-finite data");
    } else if (data) {
      throw ValidationError("SolveProblem: UFM takes no data matrix");
    }
    if (labels.rows() != static_cast<Eigen::Index>(num_classes) || labels.cols() != kn)
      throw DimensionError("SolveProblem: label matrix must be K x Kn");
    for (Eigen::Index j = 0; j < kn; ++j) {
      const auto col = labels.col(j);
      if ((col.array() == 1.0).count() != 1 || (col.array() == 0.0).count() != col.size() - 1)
        throw ValidationError("SolveProblem: each label column must be one-hot");
    }
  }
};

inline SolveProblem make_mufm_problem(LossKind loss, Matrix data, std::size_t num_classes,
                                      std::size_t per_class, double lambda_w, double lambda,
                                      std::uint64_t seed) {
  SolveProblem p;
  p.kind = ModelKind::Mufm;
  p.loss = loss;
  p.num_classes = num_classes;
  p.per_class = per_class;
  p.dim = static_cast<std::size_t>(data.rows());
  p.data = std::move(data);
  p.lambda_w = lambda_w;
  p.lambda = lambda;
  p.labels = block_label_matrix(num_classes, per_class);
  p.seed = seed;
  p.validate();
  return p;
}

inline SolveProblem make_ufm_problem(LossKind loss, std::size_t num_classes, std::size_t dim,
                                     std::size_t per_class, double lambda_w, double lambda_h,
                                     std::uint64_t seed) {
  SolveProblem p;
  p.kind = ModelKind::Ufm;
  p.loss = loss;
  p.num_classes = num_classes;
  p.dim = dim;
  p.per_class = per_class;
  p.lambda_w = lambda_w;
  p.lambda = lambda_h;
  p.labels = block_label_matrix(num_classes, per_class);
  p.seed = seed;
  p.validate();
  return p;
}

namespace detail {

inline void check_shapes(const SolveProblem& p, const Matrix& w, const Matrix& h) {
  const auto k = static_cast<Eigen::Index>(p.num_classes);
  const auto d = static_cast<Eigen::Index>(p.dim);
  const auto kn = static_cast<Eigen::Index>(p.num_samples());
  if (w.rows() != k || w.cols() != d) throw DimensionError("surrogate: W must be K x d");
  if (h.rows() != d || h.cols() != kn) throw DimensionError("surrogate: H must be d x Kn");
}

/// Column-wise softmax with max subtraction.
inline Matrix softmax_columns(const Matrix& logits) {
  Matrix p = logits.rowwise() - logits.colwise().maxCoeff();
  p = p.array().exp();
  p.array().rowwise() /= p.colwise().sum().array();
  return p;
}

/// Data-fit term and its gradient with respect to the logits WH.
inline double fit_term(LossKind loss, const Matrix& logits, const Matrix& labels,
                       Matrix* dlogits) {
  const double inv_n = 1.0 / static_cast<double>(logits.cols());
  if (loss == LossKind::Mse) {
    Matrix residual = logits - labels;
    const double value = 0.5 * inv_n * residual.squaredNorm();
    if (dlogits) *dlogits = inv_n * residual;
    return value;
  }
  const Eigen::RowVectorXd col_max = logits.colwise().maxCoeff();
  const Matrix shifted = logits.rowwise() - col_max;
  const Eigen::RowVectorXd log_sum = shifted.array().exp().colwise().sum().log();
  const double value =
      inv_n * ((log_sum.array()).sum() - shifted.cwiseProduct(labels).sum());
  if (dlogits) *dlogits = inv_n * (softmax_columns(logits) - labels);
  return value;
}

struct Evaluation {
  double objective = 0.0;
  Matrix dw;
  Matrix dh;
};

inline Evaluation evaluate(const SolveProblem& p, const Matrix& w, const Matrix& h,
                           bool with_gradients) {
  check_shapes(p, w, h);
  Evaluation e;
  Matrix dlogits;
  const Matrix logits = w * h;
  e.objective = fit_term(p.loss, logits, p.labels, with_gradients ? &dlogits : nullptr);
  const double k = static_cast<double>(p.num_classes);
  const double kn = static_cast<double>(p.num_samples());
  if (p.kind == ModelKind::Ufm) {
    e.objective += 0.5 * p.lambda_w * w.squaredNorm() + 0.5 * p.lambda * h.squaredNorm();
    if (with_gradients) {
      e.dw = dlogits * h.transpose() + p.lambda_w * w;
      e.dh = w.transpose() * dlogits + p.lambda * h;
    }
  } else {
    const Matrix gap = h - *p.data;
    e.objective += p.lambda_w / (2.0 * k) * w.squaredNorm() + p.lambda / (2.0 * kn) * gap.squaredNorm();
    if (with_gradients) {
      e.dw = dlogits * h.transpose() + (p.lambda_w / k) * w;
      e.dh = w.transpose() * dlogits + (p.lambda / kn) * gap;
    }
  }
  return e;
}

}  // namespace detail

inline double objective(const SolveProblem& p, const Matrix& w, const Matrix& h) {
  return detail::evaluate(p, w, h, false).objective;
}

struct Gradients {
  Matrix dw;
  Matrix dh;
};

/// Analytic gradients of `objective` with respect to W and H.
inline Gradients gradients(const SolveProblem& p, const Matrix& w, const Matrix& h) {
  auto e = detail::evaluate(p, w, h, true);
  return {std::move(e.dw), std::move(e.dh)};
}

/// Minimizer over W of the MUFM-MSE objective for fixed H:
/// W* = Y H^T (H H^T + n lambda_W I)^{-1}.
inline Matrix closed_form_w(const Matrix& h, const Matrix& labels, double lambda_w,
                            std::size_t per_class) {
  if (labels.cols() != h.cols()) throw DimensionError("closed_form_w: Y and H disagree in columns");
  Matrix gram = h * h.transpose();
  gram.diagonal().array() += static_cast<double>(per_class) * lambda_w;
  // gram is symmetric positive definite, so W^T = gram^{-1} H Y^T.
  return gram.llt().solve(h * labels.transpose()).transpose();
}

/// (lambda / 2Kn) ||H - X||^2 and its expansion into the ||H||^2, Tr(X H^T)
/// and ||X||^2 terms. The two routes agree up to rounding.
inline double transport_regularizer(double lambda, std::size_t num_classes,
                                    std::size_t per_class, const Matrix& h, const Matrix& x) {
  const double kn = static_cast<double>(num_classes * per_class);
  return lambda / (2.0 * kn) * (h - x).squaredNorm();
}

inline double transport_regularizer_expanded(double lambda, std::size_t num_classes,
                                             std::size_t per_class, const Matrix& h,
                                             const Matrix& x) {
  const double kn = static_cast<double>(num_classes * per_class);
  return lambda / (2.0 * kn) * h.squaredNorm() - lambda / kn * (x * h.transpose()).trace() +
         lambda / (2.0 * kn) * x.squaredNorm();
}

struct MultilayerCollapse {
  std::vector<Matrix> layers;  // H^0 = X, ..., H^L = H_last
  double regularizer = 0.0;    // sum_l ||H^{l+1} - H^l||_F^2
};

inline double layer_transport_cost(const std::vector<Matrix>& layers) {
  double cost = 0.0;
  for (std::size_t l = 0; l + 1 < layers.size(); ++l)
    cost += (layers[l + 1] - layers[l]).squaredNorm();
  return cost;
}

/// Equally spaced intermediates H^l = X + (l/L)(H_last - X), which minimize
/// the transport cost for fixed endpoints; the minimum is ||H_last - X||^2 / L.
inline MultilayerCollapse collapse_multilayer(const Matrix& x, const Matrix& h_last,
                                              std::size_t num_blocks) {
  if (num_blocks < 1) throw ValidationError("collapse_multilayer: need L >= 1");
  if (x.rows() != h_last.rows() || x.cols() != h_last.cols())
    throw DimensionError("collapse_multilayer: X and H_last differ in shape");
  MultilayerCollapse out;
  out.layers.reserve(num_blocks + 1);
  const double L = static_cast<double>(num_blocks);
  for (std::size_t l = 0; l < num_blocks; ++l)
    out.layers.push_back(x + (static_cast<double>(l) / L) * (h_last - x));
  out.layers.push_back(h_last);
  out.regularizer = layer_transport_cost(out.layers);
  return out;
}

/// Objective of the multilayer MUFM with free intermediate layers
/// (layers.front() must be X, layers.back() is the last-layer H).
inline double multilayer_objective(const SolveProblem& p, const Matrix& w,
                                   const std::vector<Matrix>& layers) {
  if (p.kind != ModelKind::Mufm) throw ValidationError("multilayer_objective: MUFM only");
  if (layers.size() < 2) throw ValidationError("multilayer_objective: need X and H^L");
  if (layers.front() != *p.data)
    throw ValidationError("multilayer_objective: first layer must equal the data matrix");
  detail::check_shapes(p, w, layers.back());
  const double k = static_cast<double>(p.num_classes);
  const double kn = static_cast<double>(p.num_samples());
  return detail::fit_term(p.loss, w * layers.back(), p.labels, nullptr) +
         p.lambda_w / (2.0 * k) * w.squaredNorm() +
         p.lambda / (2.0 * kn) * layer_transport_cost(layers);
}

struct SolveOptions {
  double lr = 0.1;
  std::size_t epochs = 50000;
  double init_scale = 1.0;
  std::size_t trace_stride = 100;
  double early_stop_grad_norm = 0.0;  // 0 disables; otherwise stop when ||(dW, dH)|| falls below
};

struct TracePoint {
  std::size_t epoch = 0;
  double objective = 0.0;
};

struct SolveResult {
  Matrix w;
  Matrix h;
  std::vector<TracePoint> objective_trace;
  double final_grad_norm = 0.0;
  std::size_t epochs_run = 0;
};

/// Seeded standard-normal initialization (scaled by init_scale).
inline std::pair<Matrix, Matrix> initial_point(const SolveProblem& p, double init_scale) {
  auto rng = derive_rng(p.seed, 0x5017ULL);
  Matrix w = gaussian_matrix(static_cast<Eigen::Index>(p.num_classes),
                             static_cast<Eigen::Index>(p.dim), rng, 1.0) * init_scale;
  Matrix h = gaussian_matrix(static_cast<Eigen::Index>(p.dim),
                             static_cast<Eigen::Index>(p.num_samples()), rng, 1.0) * init_scale;
  return {std::move(w), std::move(h)};
}

/// Observer invoked at every trace point with (epoch, objective, W, H).
using SolveObserver = std::function<void(std::size_t, double, const Matrix&, const Matrix&)>;

/// Full-batch plain gradient descent on (W, H) jointly. The trace holds the
/// objective at epoch 0, every trace_stride epochs, and the final epoch.
inline SolveResult solve(const SolveProblem& p, const SolveOptions& opt,
                         const SolveObserver& observer = {}) {
  p.validate();
  if (!(opt.lr >= 0.0)) throw ValidationError("solve: learning rate must be >= 0");
  if (opt.epochs < 1) throw ValidationError("solve: need at least one epoch");
  const std::size_t stride = std::max<std::size_t>(1, opt.trace_stride);

  SolveResult r;
  std::tie(r.w, r.h) = initial_point(p, opt.init_scale);

  auto record = [&](std::size_t epoch, double value) {
    r.objective_trace.push_back({epoch, value});
    if (observer) observer(epoch, value, r.w, r.h);
  };

  for (std::size_t epoch = 0;; ++epoch) {
    auto e = detail::evaluate(p, r.w, r.h, true);
    if (!std::isfinite(e.objective)) throw DivergenceError("solve: objective is not finite", epoch);
    r.final_grad_norm = std::sqrt(e.dw.squaredNorm() + e.dh.squaredNorm());
    const bool done = epoch == opt.epochs ||
                      (opt.early_stop_grad_norm > 0.0 && r.final_grad_norm < opt.early_stop_grad_norm);
    if (epoch % stride == 0 || done) record(epoch, e.objective);
    if (done) {
      r.epochs_run = epoch;
      break;
    }
    r.w -= opt.lr * e.dw;
    r.h -= opt.lr * e.dh;
  }
  return r;
}

/// Exact alternating minimization for the MSE objectives: W from its closed
/// form, then H from the normal equations of the H-subproblem. Starts from
/// the same seeded point as `solve`; the trace records every `trace_stride`
/// sweeps plus the last.
inline SolveResult solve_block_coordinate(const SolveProblem& p, std::size_t sweeps,
                                          double init_scale = 1.0, std::size_t trace_stride = 100) {
  p.validate();
  if (p.loss != LossKind::Mse) throw ValidationError("solve_block_coordinate: MSE loss only");
  if (sweeps < 1) throw ValidationError("solve_block_coordinate: need at least one sweep");
  const std::size_t stride = std::max<std::size_t>(1, trace_stride);
  const double kn = static_cast<double>(p.num_samples());
  const auto d = static_cast<Eigen::Index>(p.dim);

  SolveResult r;
  std::tie(r.w, r.h) = initial_point(p, init_scale);
  r.objective_trace.push_back({0, objective(p, r.w, r.h)});
  for (std::size_t sweep = 1; sweep <= sweeps; ++sweep) {
    // UFM penalizes W with lambda_W / 2 instead of lambda_W / 2K.
    const double w_ridge = p.kind == ModelKind::Ufm ? static_cast<double>(p.num_classes) * p.lambda_w : p.lambda_w;
    r.w = closed_form_w(r.h, p.labels, w_ridge, p.per_class);
    Matrix lhs = r.w.transpose() * r.w;
    Matrix rhs = r.w.transpose() * p.labels;
    if (p.kind == ModelKind::Mufm) {
      lhs += p.lambda * Matrix::Identity(d, d);
      rhs += p.lambda * *p.data;
    } else {
      lhs += kn * p.lambda * Matrix::Identity(d, d);
    }
    r.h = lhs.llt().solve(rhs);
    const double value = objective(p, r.w, r.h);
    if (!std::isfinite(value)) throw DivergenceError("solve_block_coordinate: objective is not finite", sweep);
    if (sweep % stride == 0 || sweep == sweeps) r.objective_trace.push_back({sweep, value});
  }
  const Gradients g = gradients(p, r.w, r.h);
  r.final_grad_norm = std::sqrt(g.dw.squaredNorm() + g.dh.squaredNorm());
  r.epochs_run = sweeps;
  return r;
}

/// Gradient descent on the intermediate layers H^1..H^{L-1} of
/// sum_l ||H^{l+1} - H^l||^2 with X and H^L held fixed, starting from a
/// seeded Gaussian guess. Used to check that equal spacing is the minimizer.
inline std::vector<Matrix> descend_intermediates(const Matrix& x, const Matrix& h_last,
                                                 std::size_t num_blocks, std::uint64_t seed,
                                                 std::size_t iterations = 20000) {
  if (num_blocks < 1) throw ValidationError("descend_intermediates: need L >= 1");
  if (x.rows() != h_last.rows() || x.cols() != h_last.cols())
    throw DimensionError("descend_intermediates: X and H_last differ in shape");
  auto rng = derive_rng(seed, 0x1a7eULL);
  std::vector<Matrix> layers{x};
  for (std::size_t l = 1; l < num_blocks; ++l) layers.push_back(gaussian_matrix(x.rows(), x.cols(), rng));
  layers.push_back(h_last);
  // The Hessian is 2 x (tridiagonal Laplacian), so its eigenvalues lie below 8.
  constexpr double step = 1.0 / 8.0;
  std::vector<Matrix> grad(layers.size());
  for (std::size_t it = 0; it < iterations; ++it) {
    for (std::size_t l = 1; l < num_blocks; ++l)
      grad[l] = 2.0 * (2.0 * layers[l] - layers[l - 1] - layers[l + 1]);
    for (std::size_t l = 1; l < num_blocks; ++l) layers[l] -= step * grad[l];
  }
  return layers;
}

struct SweepRow {
  double lambda = 0.0;
  double objective = 0.0;
  PfcReport metrics;
  double alignment = 0.0;
};

/// One MUFM solve per lambda with shared data, seed and options; rows in lambda order.
inline std::vector<SweepRow> sweep_lambda(const SolveProblem& base, const std::vector<double>& lambdas,
                                          const SolveOptions& opt,
                                          std::vector<SolveResult>* results = nullptr) {
  if (base.kind != ModelKind::Mufm) throw ValidationError("sweep_lambda: MUFM problems only");
  std::vector<SweepRow> rows;
  rows.reserve(lambdas.size());
  for (double lambda : lambdas) {
    SolveProblem p = base;
    p.lambda = lambda;
    try {
      SolveResult r = solve(p, opt);
      const FeatureSet fs(r.h, p.num_classes, p.per_class);
      rows.push_back({lambda, r.objective_trace.back().objective, pfc_report(fs),
                      alignment(r.h, *p.data)});
      if (results) results->push_back(std::move(r));
    } catch (const NumericError& e) {
      throw NumericError("sweep_lambda(lambda = " + std::to_string(lambda) + "): " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("sweep_lambda(lambda = " + std::to_string(lambda) + "): " + e.what());
    }
  }
  return rows;
}

}  // namespace pfc
