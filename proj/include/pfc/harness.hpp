#pragma once

// Experiment recipes behind the CLI. A config is a JSON object
//
//   { "kind": "solve-mufm", "seed": 0, "out": "runs/mufm", "params": { ... } }
//
// Parameters are resolved against per-kind defaults; unknown keys are
// rejected before anything is written. Every run writes its artifacts plus
// manifest.json (resolved config, seed, thread count, artifact SHA-256s and
// a summary) into the output directory.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "pfc/core.hpp"
#include "pfc/data.hpp"
#include "pfc/etf.hpp"
#include "pfc/geodesic.hpp"
#include "pfc/io.hpp"
#include "pfc/metrics.hpp"
#include "pfc/mnist.hpp"
#include "pfc/resnet.hpp"
#include "pfc/surrogate.hpp"

namespace pfc::harness {

using Json = nlohmann::ordered_json;

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> kinds{
      "etf-check",  "interpolate",  "theorem1",      "theorem2",  "solve-ufm",
      "solve-mufm", "sweep-lambda", "train-resnet",  "pfc-report", "equivalence-thm3"};
  return kinds;
}

inline bool is_experiment_kind(const std::string& kind) {
  const auto& kinds = experiment_kinds();
  return std::find(kinds.begin(), kinds.end(), kind) != kinds.end();
}

struct ExperimentConfig {
  std::string kind;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;  // empty: "runs/<kind>"
  Json params = Json::object();
};

inline ExperimentConfig parse_config(const std::string& text, const std::string& context = "config") {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos)
    throw ValidationError(context + ": empty config");
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw FormatError(context + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError(context + ": top level must be an object");
  ExperimentConfig cfg;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    try {
      if (key == "kind") cfg.kind = it->get<std::string>();
      else if (key == "seed") cfg.seed = it->get<std::uint64_t>();
      else if (key == "out") cfg.out_dir = it->get<std::string>();
      else if (key == "params") {
        if (!it->is_object()) throw ValidationError(context + ": params must be an object");
        cfg.params = *it;
      } else {
        throw ValidationError(context + ": unknown top-level key '" + key + "'");
      }
    } catch (const Json::exception& e) {
      throw ValidationError(context + ": bad value for '" + key + "': " + e.what());
    }
  }
  if (!cfg.kind.empty() && !is_experiment_kind(cfg.kind))
    throw ValidationError(context + ": unknown experiment kind '" + cfg.kind + "'");
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream probe(path);
  if (!probe) throw ValidationError("cannot open config '" + path.string() + "'");
  return parse_config(read_text_file(path), path.string());
}

/// Applies "key=value" to the params block. The value is read as JSON when
/// it parses, otherwise kept as a string.
inline void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError("override '" + assignment + "': expected key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  Json parsed = Json::parse(value, nullptr, false);
  cfg.params[key] = parsed.is_discarded() ? Json(value) : parsed;
}

/// Reads parameters with defaults, records the resolved values and rejects
/// keys nobody asked for.
class ParamReader {
 public:
  explicit ParamReader(const Json& params) : params_(params) {
    if (!params_.is_object()) throw ValidationError("params must be an object");
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    T value = std::move(fallback);
    if (params_.contains(key)) {
      try {
        value = params_.at(key).get<T>();
      } catch (const Json::exception& e) {
        throw ValidationError("parameter '" + key + "': " + e.what());
      }
    }
    resolved_[key] = value;
    return value;
  }

  void finish() const {
    for (auto it = params_.begin(); it != params_.end(); ++it)
      if (!used_.count(it.key())) throw ValidationError("unknown parameter '" + it.key() + "'");
  }

  const Json& resolved() const noexcept { return resolved_; }

 private:
  const Json& params_;
  std::set<std::string> used_;
  Json resolved_ = Json::object();
};

/// Writes files into the run directory and remembers their checksums.
class ArtifactSink {
 public:
  explicit ArtifactSink(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  void text(const std::string& name, const std::string& content) {
    write_text_file(dir_ / name, content);
    checksums_[name] = sha256_hex(content);
  }
  void csv(const std::string& name, const CsvTable& table) { text(name, table.to_string()); }
  void features(const std::string& name, const FeatureSet& fs) { text(name, feature_set_to_string(fs)); }

  const std::filesystem::path& dir() const noexcept { return dir_; }
  const Json& checksums() const noexcept { return checksums_; }

 private:
  std::filesystem::path dir_;
  Json checksums_ = Json::object();
};

struct RunResult {
  std::filesystem::path out_dir;
  Json manifest;
};

// ---------------------------------------------------------------------------
// Shared pieces

inline Json report_json(const PfcReport& r) { return {{"pfc1", r.pfc1}, {"pfc2", r.pfc2}, {"pfc3", r.pfc3}}; }

inline MetricKind metric_from_name(const std::string& name) { return parse_metric_kind(name); }

/// Observed per-layer metrics with the straight-line prediction from the
/// first to the last layer sampled at each layer's relative position.
inline CsvTable pfc_report_table(const LayerStack& stack) {
  const std::vector<double> positions = relative_positions(stack);
  const InterpolationPath path(stack.layers.front(), stack.layers.back());
  CsvTable t;
  t.header = {"layer", "relative_position", "pfc1", "pfc2", "pfc3",
              "predicted_pfc1", "predicted_pfc2", "predicted_pfc3"};
  for (std::size_t l = 0; l < stack.size(); ++l) {
    const PfcReport observed = pfc_report_or_nan(stack[l]);
    const PfcReport predicted = pfc_report_or_nan(interpolate(path, positions[l]));
    t.add_numeric_row({static_cast<double>(l), positions[l], observed.pfc1, observed.pfc2, observed.pfc3,
                       predicted.pfc1, predicted.pfc2, predicted.pfc3});
  }
  return t;
}

struct DataParams {
  std::string source = "gaussian";  // or "mnist"
  std::size_t num_classes = 5, dim = 20, per_class = 100;
  double mean_scale = 1.0;
  double noise_std = 1.0;
  std::string images, labels;  // MNIST IDX paths

  static DataParams read(ParamReader& pr, std::size_t k, std::size_t d, std::size_t n, double mean_scale) {
    DataParams p;
    p.source = pr.get<std::string>("data", "gaussian");
    if (p.source != "gaussian" && p.source != "mnist")
      throw ValidationError("parameter 'data' must be 'gaussian' or 'mnist'");
    p.per_class = pr.get<std::size_t>("n", n);
    if (p.source == "gaussian") {
      p.num_classes = pr.get<std::size_t>("K", k);
      p.dim = pr.get<std::size_t>("d", d);
      p.mean_scale = pr.get<double>("mean_scale", mean_scale);
      p.noise_std = pr.get<double>("noise_std", 1.0);
    } else {
      p.images = pr.get<std::string>("images", "");
      p.labels = pr.get<std::string>("labels", "");
      if (p.images.empty() || p.labels.empty())
        throw ValidationError("mnist data needs 'images' and 'labels' paths");
    }
    return p;
  }

  LabeledData load(std::uint64_t seed) const {
    if (source == "mnist") return load_mnist_idx(images, labels, per_class);
    return gen_gaussian_mixture(num_classes, dim, per_class, mean_scale, seed, noise_std);
  }
};

struct SolverParams {
  std::string method = "gd";  // or "bcd" (MSE only)
  SolveOptions options;
  std::size_t bcd_sweeps = 20000;

  static SolverParams read(ParamReader& pr) {
    SolverParams s;
    s.method = pr.get<std::string>("method", "gd");
    if (s.method != "gd" && s.method != "bcd")
      throw ValidationError("parameter 'method' must be 'gd' or 'bcd'");
    s.options.lr = pr.get<double>("lr", 0.1);
    s.options.epochs = pr.get<std::size_t>("epochs", 50000);
    s.options.init_scale = pr.get<double>("init_scale", 1.0);
    s.options.trace_stride = pr.get<std::size_t>("trace_stride", 100);
    s.options.early_stop_grad_norm = pr.get<double>("early_stop_grad_norm", 0.0);
    s.bcd_sweeps = pr.get<std::size_t>("bcd_sweeps", 20000);
    return s;
  }

  SolveResult run(const SolveProblem& p, const SolveObserver& observer) const {
    if (method == "bcd") return solve_block_coordinate(p, bcd_sweeps, options.init_scale, options.trace_stride);
    return solve(p, options, observer);
  }
};

inline std::vector<double> default_lambda_grid() {
  return {0.0005, 0.001, 0.002, 0.004, 0.006, 0.008, 0.01, 0.015, 0.02};
}

// ---------------------------------------------------------------------------
// Recipes. Each `prepare_*` resolves parameters and returns the work to run
// once the output directory exists.

using Work = std::function<Json(ArtifactSink&)>;

inline Work prepare_etf_check(ParamReader& pr, std::uint64_t seed) {
  auto classes = pr.get<std::vector<std::size_t>>("classes", {2, 3, 4, 5, 6, 7, 8, 9, 10});
  auto offsets = pr.get<std::vector<std::size_t>>("dim_offsets", {0, 3});
  return [=](ArtifactSink& sink) {
    CsvTable t;
    t.header = {"K", "d", "max_norm_error", "max_cosine_error", "gram_target_norm"};
    double worst_norm = 0.0, worst_cos = 0.0, worst_gram = 0.0;
    for (std::size_t k : classes)
      for (std::size_t off : offsets) {
        const std::size_t d = k + off;
        const EtfFrame etf = build_etf(k, d, std::nullopt, seed);
        double norm_err = 0.0, cos_err = 0.0;
        for (Eigen::Index a = 0; a < etf.frame.cols(); ++a) {
          norm_err = std::max(norm_err, std::abs(etf.frame.col(a).norm() - 1.0));
          for (Eigen::Index b = a + 1; b < etf.frame.cols(); ++b) {
            const double c = etf.frame.col(a).dot(etf.frame.col(b)) /
                             (etf.frame.col(a).norm() * etf.frame.col(b).norm());
            cos_err = std::max(cos_err, std::abs(c + 1.0 / static_cast<double>(k - 1)));
          }
        }
        const double gram_norm = etf.gram_target.norm();
        worst_norm = std::max(worst_norm, norm_err);
        worst_cos = std::max(worst_cos, cos_err);
        worst_gram = std::max(worst_gram, std::abs(gram_norm - 1.0));
        t.add_numeric_row({static_cast<double>(k), static_cast<double>(d), norm_err, cos_err, gram_norm});
      }
    sink.csv("etf_check.csv", t);
    return Json{{"max_norm_error", worst_norm}, {"max_cosine_error", worst_cos},
                {"max_gram_norm_error", worst_gram}};
  };
}

inline void add_curve_rows(CsvTable& t, const MetricCurve& c) {
  for (std::size_t i = 0; i < c.ts.size(); ++i)
    t.add_row({format_double(c.ts[i]), format_double(c.values[i]), std::string(to_string(c.kind))});
}

inline Work prepare_interpolate(ParamReader& pr, std::uint64_t seed) {
  const auto start = pr.get<std::string>("start", "");
  const auto end = pr.get<std::string>("end", "");
  const auto k = pr.get<std::size_t>("K", 4);
  const auto n = pr.get<std::size_t>("n", 10);
  const auto d = pr.get<std::size_t>("d", 8);
  const auto points = pr.get<std::size_t>("grid_points", 1001);
  const auto metrics = pr.get<std::vector<std::string>>("metrics", {"pfc1", "pfc2", "pfc3"});
  const auto slack = pr.get<double>("slack_rel", 1e-10);
  if (start.empty() != end.empty()) throw ValidationError("interpolate: give both 'start' and 'end' or neither");
  std::vector<MetricKind> kinds;
  for (const auto& m : metrics) kinds.push_back(metric_from_name(m));
  return [=](ArtifactSink& sink) {
    const auto grid = uniform_grid(points);
    const InterpolationPath path = start.empty()
                                       ? theorem1_fixture(seed, k, n, d, grid)
                                       : InterpolationPath(read_feature_set(start), read_feature_set(end), grid);
    CsvTable t;
    t.header = {"t", "value", "metric_kind"};
    Json verdicts = Json::object();
    for (MetricKind kind : kinds) {
      const MetricCurve c = metric_curve(path, kind);
      add_curve_rows(t, c);
      verdicts[std::string(to_string(kind))] = std::string(to_string(monotonicity_report(c, slack).kind));
    }
    sink.csv("curve.csv", t);
    const AssumptionCheck a = check_theorem1_assumption(path);
    return Json{{"verdicts", verdicts}, {"inner_product_assumption", a.satisfied}, {"inner_product", a.value}};
  };
}

inline Work prepare_path_family(ParamReader& pr, std::uint64_t seed, bool second) {
  const auto paths = pr.get<std::size_t>("paths", 100);
  const auto k = pr.get<std::size_t>("K", 4);
  const auto n = pr.get<std::size_t>("n", 10);
  const auto d = pr.get<std::size_t>("d", 8);
  const auto points = pr.get<std::size_t>("grid_points", 1001);
  const double slack = pr.get<double>("slack_rel", 1e-10);
  const double cost = second ? pr.get<double>("relative_cost", 0.01) : 0.0;
  if (paths < 1) throw ValidationError("'paths' must be >= 1");
  return [=](ArtifactSink& sink) {
    const auto grid = uniform_grid(points);
    const MetricKind kind = second ? MetricKind::Pfc2 : MetricKind::Pfc1;
    CsvTable t;
    t.header = {"path", "seed", "inner_product", "initial", "final", "verdict", "first_violation"};
    std::size_t strict = 0, nonincreasing = 0;
    bool assumption_ok = true;
    double worst_final = 0.0;
    for (std::size_t i = 0; i < paths; ++i) {
      const std::uint64_t path_seed = seed + i;
      const InterpolationPath path = second ? theorem2_fixture(path_seed, k, n, d, cost, grid)
                                            : theorem1_fixture(path_seed, k, n, d, grid);
      const AssumptionCheck a = check_theorem1_assumption(path);
      assumption_ok = assumption_ok && a.satisfied;
      const MetricCurve c = metric_curve(path, kind);
      const MonotonicityVerdict v = monotonicity_report(c, slack);
      if (v.kind == Monotonicity::StrictlyDecreasing) ++strict;
      if (v.kind != Monotonicity::Violated) ++nonincreasing;
      worst_final = std::max(worst_final, std::abs(c.values.back()));
      t.add_row({std::to_string(i), std::to_string(path_seed), format_double(a.value),
                 format_double(c.values.front()), format_double(c.values.back()),
                 std::string(to_string(v.kind)),
                 v.first_violation ? std::to_string(*v.first_violation) : std::string("")});
    }
    sink.csv(second ? "theorem2.csv" : "theorem1.csv", t);
    return Json{{"paths", paths},
                {"strictly_decreasing", strict},
                {"nonincreasing", nonincreasing},
                {"assumption_satisfied_all", assumption_ok},
                {"max_final_value", worst_final}};
  };
}

inline CsvTable solve_trace_header() {
  CsvTable t;
  t.header = {"lambda", "epoch", "objective", "pfc1", "pfc2", "pfc3", "alignment"};
  return t;
}

inline Work prepare_solve(ParamReader& pr, std::uint64_t seed, ModelKind model) {
  const LossKind loss = parse_loss_kind(pr.get<std::string>("loss", "mse"));
  const double lambda_w = pr.get<double>("lambda_w", 0.005);
  std::optional<DataParams> data;
  std::size_t k = 0, d = 0, n = 0;
  double lambda = 0.0;
  if (model == ModelKind::Mufm) {
    data = DataParams::read(pr, 5, 20, 100, 1.0);
    lambda = pr.get<double>("lambda", 0.001);
  } else {
    k = pr.get<std::size_t>("K", 5);
    d = pr.get<std::size_t>("d", 20);
    n = pr.get<std::size_t>("n", 100);
    lambda = pr.get<double>("lambda_h", 0.001);
  }
  const SolverParams solver = SolverParams::read(pr);
  return [=](ArtifactSink& sink) {
    SolveProblem p;
    std::optional<Matrix> x;
    if (model == ModelKind::Mufm) {
      LabeledData ld = data->load(seed);
      x = ld.inputs.features();
      sink.features("data.txt", ld.inputs);
      p = make_mufm_problem(loss, *x, ld.inputs.num_classes(), ld.inputs.per_class(), lambda_w, lambda, seed);
    } else {
      p = make_ufm_problem(loss, k, d, n, lambda_w, lambda, seed);
    }
    CsvTable trace = solve_trace_header();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    auto observe = [&](std::size_t epoch, double value, const Matrix&, const Matrix& h) {
      const PfcReport r = pfc_report_or_nan(FeatureSet(h, p.num_classes, p.per_class));
      trace.add_numeric_row({lambda, static_cast<double>(epoch), value, r.pfc1, r.pfc2, r.pfc3,
                             x ? alignment(h, *x) : nan});
    };
    const SolveResult r = solver.run(p, observe);
    if (solver.method == "bcd") {
      // The block-coordinate path has no observer; only endpoints carry metrics.
      for (const TracePoint& tp : r.objective_trace) {
        const bool last = &tp == &r.objective_trace.back();
        const PfcReport m = last ? pfc_report_or_nan(FeatureSet(r.h, p.num_classes, p.per_class))
                                 : PfcReport{nan, nan, nan};
        trace.add_numeric_row({lambda, static_cast<double>(tp.epoch), tp.objective, m.pfc1, m.pfc2, m.pfc3,
                               last && x ? alignment(r.h, *x) : nan});
      }
    }
    sink.csv("trace.csv", trace);
    const FeatureSet h(r.h, p.num_classes, p.per_class);
    sink.features("features.txt", h);
    Json summary{{"model", std::string(to_string(model))},
                 {"loss", std::string(to_string(loss))},
                 {"method", solver.method},
                 {"epochs_run", r.epochs_run},
                 {"final_objective", r.objective_trace.back().objective},
                 {"final_grad_norm", r.final_grad_norm},
                 {"features", report_json(pfc_report_or_nan(h))}};
    if (x) {
      summary["data"] = report_json(pfc_report_or_nan(FeatureSet(*x, p.num_classes, p.per_class)));
      summary["alignment"] = alignment(r.h, *x);
    }
    return summary;
  };
}

inline Work prepare_sweep(ParamReader& pr, std::uint64_t seed) {
  const LossKind loss = parse_loss_kind(pr.get<std::string>("loss", "mse"));
  const double lambda_w = pr.get<double>("lambda_w", 0.005);
  const DataParams data = DataParams::read(pr, 5, 20, 100, 1.0);
  const auto lambdas = pr.get<std::vector<double>>("lambdas", default_lambda_grid());
  const SolverParams solver = SolverParams::read(pr);
  if (lambdas.empty()) throw ValidationError("'lambdas' must not be empty");
  return [=](ArtifactSink& sink) {
    const LabeledData ld = data.load(seed);
    const Matrix& x = ld.inputs.features();
    sink.features("data.txt", ld.inputs);
    CsvTable t = solve_trace_header();
    std::vector<double> pf1, pf2, al;
    for (double lambda : lambdas) {
      const SolveProblem p =
          make_mufm_problem(loss, x, ld.inputs.num_classes(), ld.inputs.per_class(), lambda_w, lambda, seed);
      SolveResult r;
      try {
        r = solver.run(p, {});
      } catch (const NumericError& e) {
        throw NumericError("sweep-lambda (lambda = " + format_double(lambda) + "): " + e.what());
      }
      const PfcReport m = pfc_report_or_nan(FeatureSet(r.h, p.num_classes, p.per_class));
      const double a = alignment(r.h, x);
      t.add_numeric_row({lambda, static_cast<double>(r.epochs_run), r.objective_trace.back().objective,
                         m.pfc1, m.pfc2, m.pfc3, a});
      pf1.push_back(m.pfc1);
      pf2.push_back(m.pfc2);
      al.push_back(a);
    }
    sink.csv("sweep.csv", t);
    // Empirical stand-in for the non-constructive lambda constant: the first
    // grid value at which the features are more collapsed than the data.
    const PfcReport data_report = pfc_report_or_nan(ld.inputs);
    Json threshold = nullptr;
    for (std::size_t i = 0; i < lambdas.size(); ++i)
      if (pf1[i] < data_report.pfc1) {
        threshold = lambdas[i];
        break;
      }
    return Json{{"method", solver.method},
                {"data", report_json(data_report)},
                {"first_lambda_pfc1_below_data", threshold},
                {"spearman_lambda_pfc1", spearman(lambdas, pf1)},
                {"spearman_lambda_pfc2", spearman(lambdas, pf2)},
                {"spearman_lambda_alignment", spearman(lambdas, al)}};
  };
}

/// Defaults of the `train-resnet` recipe: TrainConfig with a smaller batch
/// and stronger weight decay, which the 4-class toy problem needs to show
/// layerwise collapse within 300 epochs.
inline TrainConfig default_resnet_config() {
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.weight_decay = 1e-2;
  return cfg;
}

inline constexpr double kDefaultResnetMeanScale = 4.0;

inline Work prepare_train_resnet(ParamReader& pr, std::uint64_t seed) {
  const TrainConfig base = default_resnet_config();
  TrainConfig cfg = base;
  cfg.seed = seed;
  cfg.num_blocks = pr.get<std::size_t>("blocks", base.num_blocks);
  cfg.width = pr.get<std::size_t>("width", base.width);
  cfg.lr = pr.get<double>("lr", base.lr);
  cfg.lr_decay = pr.get<double>("lr_decay", base.lr_decay);
  cfg.decay_epochs = pr.get<std::vector<std::size_t>>("decay_epochs", base.decay_epochs);
  cfg.momentum = pr.get<double>("momentum", base.momentum);
  cfg.weight_decay = pr.get<double>("weight_decay", base.weight_decay);
  cfg.decay_biases = pr.get<bool>("decay_biases", base.decay_biases);
  cfg.batch_size = pr.get<std::size_t>("batch_size", base.batch_size);
  cfg.epochs = pr.get<std::size_t>("epochs", base.epochs);
  cfg.record_stride = pr.get<std::size_t>("record_stride", base.record_stride);
  cfg.block_init_gain = pr.get<double>("block_init_gain", base.block_init_gain);
  const DataParams data = DataParams::read(pr, base.num_classes, base.input_dim, base.per_class,
                                           kDefaultResnetMeanScale);
  const bool dump_stack = pr.get<bool>("dump_final_stack", true);
  const double slack = pr.get<double>("slack_rel", 1e-10);
  return [=](ArtifactSink& sink) mutable {
    const LabeledData ld = data.load(seed);
    cfg.num_classes = ld.inputs.num_classes();
    cfg.input_dim = ld.inputs.dim();
    cfg.per_class = ld.inputs.per_class();
    const TrainTrace trace = train(cfg, ld);

    CsvTable epochs;
    epochs.header = {"epoch", "loss", "accuracy"};
    for (std::size_t e = 0; e < trace.loss.size(); ++e)
      epochs.add_numeric_row({static_cast<double>(e + 1), trace.loss[e], trace.accuracy[e]});
    sink.csv("epochs.csv", epochs);

    CsvTable snaps;
    snaps.header = {"epoch", "loss", "accuracy"};
    for (std::size_t l = 0; l <= cfg.num_blocks; ++l)
      for (const char* m : {"pfc1", "pfc2", "pfc3"}) snaps.header.push_back("layer" + std::to_string(l) + "_" + m);
    for (const Snapshot& s : trace.snapshots) {
      std::vector<double> row{static_cast<double>(s.epoch), s.loss, s.accuracy};
      for (const PfcReport& r : s.metrics.layers) row.insert(row.end(), {r.pfc1, r.pfc2, r.pfc3});
      snaps.add_numeric_row(row);
    }
    sink.csv("train_trace.csv", snaps);

    const Snapshot& last = trace.snapshots.back();
    if (dump_stack)
      for (std::size_t l = 0; l < last.stack.size(); ++l)
        sink.features("layer" + std::to_string(l) + ".txt", last.stack[l]);
    sink.csv("pfc_report.csv", pfc_report_table(last.stack));

    std::vector<double> index, p1, p2;
    for (std::size_t l = 0; l < last.metrics.layers.size(); ++l) {
      index.push_back(static_cast<double>(l));
      p1.push_back(last.metrics.layers[l].pfc1);
      p2.push_back(last.metrics.layers[l].pfc2);
    }
    const InterpolationPath path(last.stack.layers.front(), last.stack.layers.back());
    const auto pred1 = monotonicity_report(metric_curve(path, MetricKind::Pfc1), slack);
    const auto pred2 = monotonicity_report(metric_curve(path, MetricKind::Pfc2), slack);
    const auto depth = effective_depth(last.stack, 0.0);
    return Json{{"final_epoch", last.epoch},
                {"train_accuracy", last.accuracy},
                {"train_loss", last.loss},
                {"last_layer", report_json(last.metrics.layers.back())},
                {"spearman_layer_pfc1", spearman(index, p1)},
                {"spearman_layer_pfc2", spearman(index, p2)},
                {"predicted_pfc1", std::string(to_string(pred1.kind))},
                {"predicted_pfc2", std::string(to_string(pred2.kind))},
                {"effective_depth", depth ? Json(*depth) : Json(nullptr)}};
  };
}

inline Work prepare_pfc_report(ParamReader& pr, std::uint64_t) {
  const auto files = pr.get<std::vector<std::string>>("stack", {});
  if (files.size() < 2) throw ValidationError("pfc-report: 'stack' needs at least 2 feature files");
  return [=](ArtifactSink& sink) {
    LayerStack stack;
    for (const auto& f : files) stack.layers.push_back(read_feature_set(f));
    stack.validate();
    const CsvTable t = pfc_report_table(stack);
    sink.csv("pfc_report.csv", t);
    return Json{{"layers", stack.size()}};
  };
}

inline Work prepare_equivalence(ParamReader& pr, std::uint64_t seed) {
  const auto blocks = pr.get<std::vector<std::size_t>>("blocks", {2, 5, 10});
  const auto k = pr.get<std::size_t>("K", 3);
  const auto d = pr.get<std::size_t>("d", 4);
  const auto n = pr.get<std::size_t>("n", 5);
  const double lambda_w = pr.get<double>("lambda_w", 0.005);
  const double lambda = pr.get<double>("lambda", 0.001);
  const LossKind loss = parse_loss_kind(pr.get<std::string>("loss", "mse"));
  const auto iterations = pr.get<std::size_t>("iterations", 20000);
  return [=](ArtifactSink& sink) {
    const LabeledData ld = gen_gaussian_mixture(k, d, n, 1.0, seed);
    const Matrix& x = ld.inputs.features();
    auto rng = derive_rng(seed, 0x7e3ULL);
    const Matrix w = gaussian_matrix(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d), rng);
    const Matrix h = gaussian_matrix(x.rows(), x.cols(), rng);
    CsvTable t;
    t.header = {"L", "max_layer_error", "regularizer", "closed_form_regularizer",
                "multilayer_objective", "rescaled_objective", "relative_error"};
    double worst_layer = 0.0, worst_rel = 0.0;
    for (std::size_t L : blocks) {
      const MultilayerCollapse closed = collapse_multilayer(x, h, L);
      const std::vector<Matrix> free = descend_intermediates(x, h, L, seed + L, iterations);
      double layer_err = 0.0;
      for (std::size_t l = 0; l <= L; ++l)
        layer_err = std::max(layer_err, (free[l] - closed.layers[l]).cwiseAbs().maxCoeff());
      const SolveProblem p = make_mufm_problem(loss, x, k, n, lambda_w, lambda, seed);
      const SolveProblem rescaled = make_mufm_problem(loss, x, k, n, lambda_w, lambda / static_cast<double>(L), seed);
      const double multi = multilayer_objective(p, w, closed.layers);
      const double single = objective(rescaled, w, h);
      const double rel = std::abs(multi - single) / std::max(std::abs(multi), std::abs(single));
      worst_layer = std::max(worst_layer, layer_err);
      worst_rel = std::max(worst_rel, rel);
      t.add_numeric_row({static_cast<double>(L), layer_err, layer_transport_cost(free),
                         (h - x).squaredNorm() / static_cast<double>(L), multi, single, rel});
    }
    sink.csv("equivalence.csv", t);
    return Json{{"max_layer_error", worst_layer}, {"max_relative_objective_error", worst_rel}};
  };
}

inline Work prepare(const std::string& kind, ParamReader& pr, std::uint64_t seed) {
  if (kind == "etf-check") return prepare_etf_check(pr, seed);
  if (kind == "interpolate") return prepare_interpolate(pr, seed);
  if (kind == "theorem1") return prepare_path_family(pr, seed, false);
  if (kind == "theorem2") return prepare_path_family(pr, seed, true);
  if (kind == "solve-ufm") return prepare_solve(pr, seed, ModelKind::Ufm);
  if (kind == "solve-mufm") return prepare_solve(pr, seed, ModelKind::Mufm);
  if (kind == "sweep-lambda") return prepare_sweep(pr, seed);
  if (kind == "train-resnet") return prepare_train_resnet(pr, seed);
  if (kind == "pfc-report") return prepare_pfc_report(pr, seed);
  if (kind == "equivalence-thm3") return prepare_equivalence(pr, seed);
  throw ValidationError("unknown experiment kind '" + kind + "'");
}

/// Validates the config, then runs the experiment. Validation failures leave
/// the filesystem untouched.
inline RunResult run(const ExperimentConfig& cfg) {
  if (cfg.kind.empty()) throw ValidationError("config does not name an experiment kind");
  ParamReader pr(cfg.params);
  Work work = prepare(cfg.kind, pr, cfg.seed);
  pr.finish();

  RunResult result;
  result.out_dir = cfg.out_dir.empty() ? std::filesystem::path("runs") / cfg.kind : cfg.out_dir;
  ArtifactSink sink(result.out_dir);
  Json summary;
  try {
    summary = work(sink);
  } catch (const DegenerateInputError& e) {
    throw DegenerateInputError(cfg.kind + ": " + e.what());
  } catch (const DivergenceError& e) {
    std::string what = e.what();
    what = what.substr(0, what.rfind(" (epoch"));  // the constructor appends it again
    throw DivergenceError(cfg.kind + ": " + what, e.epoch);
  } catch (const NumericError& e) {
    throw NumericError(cfg.kind + ": " + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(cfg.kind + ": " + e.what());
  } catch (const RangeError& e) {
    throw RangeError(cfg.kind + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(cfg.kind + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(cfg.kind + ": " + e.what());
  }
  result.manifest = Json{{"kind", cfg.kind},
                         {"seed", cfg.seed},
                         {"params", pr.resolved()},
                         {"threads", Eigen::nbThreads()},
                         {"artifacts", sink.checksums()},
                         {"summary", summary}};
  write_text_file(result.out_dir / "manifest.json", result.manifest.dump(2) + "\n");
  return result;
}

}  // namespace pfc::harness
