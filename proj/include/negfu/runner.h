#ifndef NEGFU_RUNNER_H_
#define NEGFU_RUNNER_H_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "negfu/analysis.h"
#include "negfu/config.h"
#include "negfu/strategy.h"

namespace negfu {

inline constexpr const char* kVersion = "0.1.0";

struct BoundReport {
  std::string method;
  LossGapTrace bound;
  // Gradient-flow time one fine-tuning round stands for: mean local steps per
  // participant times eta / (1 - mu).
  double flow_time_per_round = 0.0;
  // First round whose loss gap has moved (1 - eps) of the way to the
  // reference; absent when the run never gets there.
  std::optional<std::size_t> observed_round;
  std::optional<double> observed_time;
  bool valid = true;  // t_unlearn <= observed_time, or nothing observed
};

struct CkaComparison {
  std::string name;  // e.g. "NoT@0|FT@0"
  std::vector<CkaEntry> profile;
  std::vector<double> normalized;  // against Retrain@0|FT@0
};

struct SpectralReport {
  std::string method;  // model at tau:0
  SpectralCurve curve;
};

struct BackdoorReport {
  std::string method;  // "trained" for theta*
  double success = 0.0;
};

struct SeedReport {
  std::uint64_t seed = 0;
  std::size_t training_rounds = 0;
  double trained_validation_acc = 0.0;
  double reference_validation_acc = 0.0;
  std::vector<MetricsReport> reports;  // config order, then NR-Freeze
  std::vector<UnlearningRun> runs;     // config order
  std::optional<UnlearningRun> nr_freeze;
  std::vector<CkaComparison> cka;
  std::vector<SpectralReport> spectral;
  std::vector<BoundReport> bounds;
  std::vector<BackdoorReport> backdoor;

  const MetricsReport& Report(const std::string& method) const;
  const UnlearningRun& Run(const std::string& method) const;
};

struct ScenarioReport {
  ExperimentConfig config;
  std::vector<SeedReport> seeds;
};

// Data, forget request and theta* of one seed.
struct PreparedSeed {
  FederatedSplit split;
  ForgetSpec forget;
  FederationConfig federation;  // config federation with the seed filled in
  TrainingResult trained;
  std::size_t rounds = 0;
};

PreparedSeed PrepareSeed(const ExperimentConfig& cfg, std::uint64_t seed);

// Trains once per seed, runs every strategy from the shared theta*, then the
// enabled analyses. Throws DivergenceError when training blows up.
SeedReport RunSeed(const ExperimentConfig& cfg, std::uint64_t seed);
ScenarioReport RunScenario(const ExperimentConfig& cfg);

// Files of one seed: report.csv, costs.csv, cka.csv, spectral.csv,
// bound.json, backdoor.csv (when enabled) and config-echo.cfg.
void WriteSeedReport(const ExperimentConfig& cfg, const SeedReport& r,
                     const std::string& dir);
// One directory per seed under `dir` plus summary.csv over all seeds.
void WriteScenarioReport(const ScenarioReport& r, const std::string& dir);

struct ScenarioInfo {
  std::string path;
  std::string name;
  std::string description;
  std::string analogue;
};

// Bundled configs (*.cfg) of a directory, sorted by file name.
std::vector<ScenarioInfo> ListScenarios(const std::string& dir);

}  // namespace negfu

#endif  // NEGFU_RUNNER_H_
