// negfu: run, validate and list federated-unlearning scenarios.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "negfu/config.h"
#include "negfu/errors.h"
#include "negfu/runner.h"

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kConfigFailure = 2;
constexpr int kDivergence = 3;

negfu::ExperimentConfig Load(const std::string& path) {
  try {
    return negfu::LoadExperimentConfig(path);
  } catch (const negfu::IoError& e) {
    throw negfu::ConfigError("config", e.what());
  }
}

int Validate(const std::string& path) {
  Load(path);
  std::cout << path << ": ok\n";
  return kOk;
}

int Run(const std::string& path, std::optional<std::uint64_t> seed,
        std::optional<std::string> out, std::optional<std::size_t> threads,
        std::optional<std::size_t> max_rounds) {
  negfu::ExperimentConfig cfg = Load(path);
  if (seed) cfg.seeds = {*seed};
  if (out) cfg.output = *out;
  if (threads) cfg.federation.threads = *threads;
  if (max_rounds) {
    cfg.training.max_rounds = *max_rounds;
    cfg.recovery.max_rounds = *max_rounds;
    cfg.nr_freeze_rounds = *max_rounds;
  }
  try {
    negfu::ValidateExperimentConfig(cfg);
  } catch (const negfu::ConfigError& e) {
    throw negfu::ConfigError("override " + e.key(), e.what());
  }
  negfu::ScenarioReport report;
  report.config = cfg;
  for (std::uint64_t s : cfg.seeds) {
    std::cerr << cfg.name << ": seed " << s << "\n";
    report.seeds.push_back(negfu::RunSeed(cfg, s));
  }
  negfu::WriteScenarioReport(report, cfg.output);
  std::cout << "wrote " << cfg.output << "\n";
  return kOk;
}

int List(const std::string& dir) {
  for (const negfu::ScenarioInfo& s : negfu::ListScenarios(dir)) {
    std::printf("%-16s %-22s %s\n", s.name.c_str(), s.analogue.c_str(),
                s.description.c_str());
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated unlearning by weight negation: desk-scale simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
  std::optional<std::size_t> max_rounds;
  CLI::App* run = app.add_subcommand("run", "Run a scenario config");
  run->add_option("config", config_path, "Scenario config file")->required();
  run->add_option("--seed", seed, "Run this single seed instead of the config's list");
  run->add_option("--out", out, "Output directory");
  run->add_option("--threads", threads, "Client threads per round");
  run->add_option("--max-rounds", max_rounds,
                  "Cap on training, fine-tuning and NR-Freeze rounds");

  std::string validate_path;
  CLI::App* validate = app.add_subcommand("validate", "Check a config without running it");
  validate->add_option("config", validate_path, "Scenario config file")->required();

  std::string list_dir = NEGFU_SCENARIO_DIR;
  CLI::App* list = app.add_subcommand("list", "List bundled scenarios");
  list->add_option("--dir", list_dir, "Scenario directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigFailure;
  }

  try {
    if (*run) return Run(config_path, seed, out, threads, max_rounds);
    if (*validate) return Validate(validate_path);
    if (*list) return List(list_dir);
  } catch (const negfu::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigFailure;
  } catch (const negfu::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
