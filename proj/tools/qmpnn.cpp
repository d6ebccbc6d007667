// qmpnn: experiment runner, checkpoint inspector and curve exporter.
//
//   qmpnn run <config.json> [--seed-override S ...] [--out-dir DIR]
//   qmpnn inspect <checkpoint>
//   qmpnn export-curve <results.csv> <out.csv>
//
// Exit codes: 0 ok, 1 runtime failure, 2 configuration error.

#include <exception>
#include <iostream>

#include <CLI11.hpp>

#include "qmpnn/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Quaternion message-passing networks and ticket search"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::uint64_t> seed_override;
  std::string out_dir;
  auto* run = app.add_subcommand("run", "Train (and optionally prune) every model over every seed");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--seed-override", seed_override, "Replace the config's seed list");
  run->add_option("--out-dir", out_dir, "Replace the config's output directory");

  std::string ckpt_path;
  auto* inspect = app.add_subcommand("inspect", "Summarize a checkpoint or ticket");
  inspect->add_option("checkpoint", ckpt_path, "Checkpoint manifest path or stem")->required();

  std::string results_path, curve_path;
  auto* curve = app.add_subcommand("export-curve", "Aggregate a results CSV into sparsity curves");
  curve->add_option("results", results_path, "Results CSV")->required();
  curve->add_option("out", curve_path, "Curve CSV to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*run) {
      qmpnn::ExperimentConfig cfg = qmpnn::load_config(config_path);
      if (!seed_override.empty()) cfg.seeds = seed_override;
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      const auto outcome = qmpnn::run_experiment(cfg);
      std::cout << outcome.results_csv.string() << "\n";
    } else if (*inspect) {
      qmpnn::inspect_checkpoint(ckpt_path, std::cout);
    } else if (*curve) {
      qmpnn::export_curve(results_path, curve_path);
    }
  } catch (const qmpnn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
