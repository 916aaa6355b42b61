// Command-line front end: one subcommand per experiment kind.
//
//   pfc <kind> [--config FILE] [--seed N] [--out DIR] [--set key=value ...]
//
// Exit status: 0 on success, 1 on usage or validation errors, 2 on numeric
// failures (divergence, degenerate inputs).

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "pfc/harness.hpp"

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

int run_kind(const std::string& kind, const Options& opt) {
  using namespace pfc;
  try {
    harness::ExperimentConfig cfg;
    if (!opt.config.empty()) cfg = harness::load_config(opt.config);
    if (!cfg.kind.empty() && cfg.kind != kind)
      throw ValidationError("config is for '" + cfg.kind + "', not '" + kind + "'");
    cfg.kind = kind;
    if (opt.seed) cfg.seed = *opt.seed;
    if (!opt.out.empty()) cfg.out_dir = opt.out;
    for (const auto& o : opt.overrides) harness::apply_override(cfg, o);
    const harness::RunResult r = harness::run(cfg);
    std::cout << r.manifest["summary"].dump(2) << "\n" << "artifacts: " << r.out_dir.string() << "\n";
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layerwise collapse experiments"};
  app.require_subcommand(1);
  Options opt;
  std::string chosen;
  for (const auto& kind : pfc::harness::experiment_kinds()) {
    auto* sub = app.add_subcommand(kind, "run the " + kind + " experiment");
    sub->add_option("--config", opt.config, "JSON config file");
    sub->add_option("--seed", opt.seed, "seed (overrides the config)");
    sub->add_option("--out", opt.out, "output directory (overrides the config)");
    sub->add_option("--set", opt.overrides, "parameter override key=value (repeatable)");
    sub->callback([&chosen, kind] { chosen = kind; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  return run_kind(chosen, opt);
}
