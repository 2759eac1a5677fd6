#ifndef NEGFU_CONFIG_H_
#define NEGFU_CONFIG_H_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "negfu/analysis.h"
#include "negfu/data.h"
#include "negfu/federation.h"
#include "negfu/network.h"
#include "negfu/strategy.h"

namespace negfu {

inline constexpr int kConfigSchema = 1;

// One `key = value` line, keyed as "section.key".
struct ConfigEntry {
  std::string value;
  int line = 0;
};

using RawConfig = std::map<std::string, ConfigEntry>;

// Grammar:
//   file    := { line }
//   line    := blank | comment | section | pair
//   comment := '#' text
//   section := '[' name ']'
//   pair    := key '=' value        (value runs to end of line, trimmed)
// Keys before the first section live in the top level ("schema").
// Duplicate keys and malformed lines throw ConfigError.
RawConfig ParseConfigText(const std::string& text);
RawConfig ReadConfigFile(const std::string& path);

enum class Generator { kBlobs, kGrid };

struct AnalysisToggles {
  bool cka = false;
  bool spectral = false;
  bool bound = false;
  bool backdoor = false;
  bool nr_freeze = false;
};

struct ExperimentConfig {
  std::string name = "unnamed";
  std::string description;
  std::string analogue;
  std::vector<std::uint64_t> seeds{1};
  std::string output = "out";

  Generator generator = Generator::kBlobs;
  BlobsParams blobs;
  GridParams grid;
  double test_fraction = 0.25;

  std::size_t clients = 5;
  PartitionSpec partition;
  ForgetRequest forget;

  NetworkSpec model;

  FederationConfig federation;
  TrainingStopRule training;
  RecoveryStopRule recovery;  // reference accuracy is filled in per run

  std::vector<Strategy> strategies;

  AnalysisToggles analysis;
  std::size_t probe_size = 256;
  SpectralParams spectral;
  double bound_epsilon = 0.05;
  double bound_stochastic = 0.0;
  BackdoorConfig backdoor;
  std::size_t backdoor_client = 0;
  std::vector<std::string> nr_freeze_layers;  // empty means first layer
  std::size_t nr_freeze_rounds = 30;
};

// Builds a config from parsed entries. Every key has a default; unknown keys,
// bad values and failed cross-field checks throw ConfigError naming the key.
ExperimentConfig BuildExperimentConfig(const RawConfig& raw);
ExperimentConfig LoadExperimentConfig(const std::string& path);

// Cross-field checks; called by BuildExperimentConfig and after overrides.
void ValidateExperimentConfig(const ExperimentConfig& cfg);

// Canonical text of a config: every key that can affect results, defaults
// included. Execution settings (output directory, thread count) are left out,
// so the echo is the same for every run of one experiment.
std::string EchoConfig(const ExperimentConfig& cfg);

// "fc1:dense:64:relu, out:dense:4" style layer list.
std::vector<LayerSpec> ParseLayers(const std::string& text);
std::string FormatLayers(const std::vector<LayerSpec>& layers);

}  // namespace negfu

#endif  // NEGFU_CONFIG_H_
