// Command-line front end for the reservoir-capacity library.
//
// Subcommands:
//   simulate          generate input/teaching, run the cascade, train a readout
//   capacity          closed-form capacity of the linearized model
//   surface           sweep one or two parameters, empirical and/or closed form
//   benchmark         cascade vs. closed-form model vs. Kalman baseline (ARSV)
//   check-properties  separation / fading-memory probes and hypothesis checks
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>

#include "tdrc/experiment.hpp"

namespace {

struct CommonArgs {
  std::string config;
  std::string out;
  std::int64_t seed = -1;  // -1: use the seed from the config
  int workers = 0;         // 0: hardware concurrency
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", args.out, "output directory")->required();
  cmd->add_option("--seed", args.seed, "override the config's master seed")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--workers", args.workers, "worker threads (default: hardware)")
      ->check(CLI::NonNegativeNumber);
}

tdrc::ExperimentConfig load(const CommonArgs& args) {
  tdrc::ExperimentConfig cfg = tdrc::load_config(args.config);
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
  return cfg;
}

int effective_workers(const CommonArgs& args) {
  if (args.workers > 0) return args.workers;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"time-delay reservoir simulation and closed-form capacity tool"};
  app.require_subcommand(1);

  CommonArgs simulate_args;
  CLI::App* simulate = app.add_subcommand("simulate", "run the cascade and train a readout");
  add_common(simulate, simulate_args);

  CommonArgs capacity_args;
  CLI::App* capacity =
      app.add_subcommand("capacity", "closed-form capacity of the linearized model");
  add_common(capacity, capacity_args);

  CommonArgs surface_args;
  CLI::App* surface = app.add_subcommand("surface", "parameter sweep (NMSE surface)");
  add_common(surface, surface_args);

  CommonArgs benchmark_args;
  CLI::App* benchmark =
      app.add_subcommand("benchmark", "volatility-filtering benchmark with a Kalman baseline");
  add_common(benchmark, benchmark_args);

  CommonArgs properties_args;
  CLI::App* properties =
      app.add_subcommand("check-properties", "separation and fading-memory probes");
  add_common(properties, properties_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (simulate->parsed()) {
      tdrc::cmd_simulate(load(simulate_args), simulate_args.out);
    } else if (capacity->parsed()) {
      tdrc::cmd_capacity(load(capacity_args), capacity_args.out);
    } else if (surface->parsed()) {
      tdrc::cmd_surface(load(surface_args), surface_args.out, effective_workers(surface_args));
    } else if (benchmark->parsed()) {
      tdrc::cmd_benchmark(load(benchmark_args), benchmark_args.out);
    } else if (properties->parsed()) {
      tdrc::cmd_check_properties(load(properties_args), properties_args.out);
    }
  } catch (const tdrc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const tdrc::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const tdrc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
