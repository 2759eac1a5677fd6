#ifndef NEGFU_FEDERATION_H_
#define NEGFU_FEDERATION_H_

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "negfu/data.h"
#include "negfu/network.h"
#include "negfu/optimizer.h"

namespace negfu {

struct FederationConfig {
  std::size_t local_epochs = 1;  // I
  std::size_t batch_size = 16;
  SgdConfig sgd;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
};

void ValidateFederationConfig(const FederationConfig& cfg);

struct ClientUpdateResult {
  ParameterTree params;
  std::uint64_t flops = 0;
  std::size_t steps = 0;
};

// I epochs of shuffled minibatch SGD (last batch may be short) from `global`.
// A fresh momentum buffer is used per call. With ascent set, the gradient
// sign is flipped (gradient ascent on the local loss).
ClientUpdateResult ClientUpdate(const NetworkSpec& spec,
                                const ParameterTree& global,
                                const Dataset& data,
                                const FederationConfig& cfg, Rng& rng,
                                const std::vector<bool>& frozen = {},
                                bool ascent = false);

// Weighted mean, accumulated in list order.
ParameterTree Aggregate(std::span<const ParameterTree> trees,
                        std::span<const double> weights);

// Control message a requesting client sends to start unlearning.
inline constexpr std::uint64_t kRequestBytes = 64;

// Download plus upload of the full tree per participant.
inline std::uint64_t RoundBytes(std::size_t participants,
                                std::size_t param_count) {
  return 2ull * participants * param_count * 8ull;
}

struct CostRow {
  std::size_t round = 0;
  std::uint64_t bytes = 0;
  std::uint64_t flops = 0;
  std::string phase;
};

class CostLedger {
 public:
  void Record(std::size_t round, std::uint64_t bytes, std::uint64_t flops,
              std::string phase);
  std::uint64_t total_bytes() const { return bytes_; }
  std::uint64_t total_flops() const { return flops_; }
  const std::vector<CostRow>& rows() const { return rows_; }

  // Columns: method, round, bytes, flops, phase.
  void WriteCsv(std::ostream& out, std::string_view method) const;

 private:
  std::vector<CostRow> rows_;
  std::uint64_t bytes_ = 0;
  std::uint64_t flops_ = 0;
};

struct Snapshot {
  std::optional<LossAccuracy> retain;
  std::optional<LossAccuracy> forget;
  std::optional<LossAccuracy> validation;
};

struct Checkpoint {
  std::size_t round = 0;
  ParameterTree params;
  Snapshot metrics;
};

// Sets a checkpoint is measured on. Absent sets are skipped.
struct EvalSets {
  std::optional<Dataset> retain;
  std::optional<Dataset> forget;
  std::optional<Dataset> validation;
};

Snapshot Measure(const NetworkSpec& spec, const ParameterTree& params,
                 const EvalSets& sets);

enum class Phase { kTraining, kUnlearning };

// Server state plus per-client data views. A client without data sits out.
struct FederationSession {
  NetworkSpec spec;
  FederationConfig config;
  ParameterTree global;
  std::vector<std::optional<Dataset>> client_data;
  std::optional<Dataset> validation;
  std::size_t round = 0;
  CostLedger ledger;
  Phase phase = Phase::kTraining;
  std::vector<std::size_t> targets;
  // RNG stream for local shuffling; distinct per session role.
  std::string stream = "train";

  std::size_t ParticipantCount() const;
};

// Session over the full local training sets, validated on every client's
// validation split.
FederationSession MakeTrainingSession(const NetworkSpec& spec,
                                      const FederatedSplit& split,
                                      const FederationConfig& cfg,
                                      ParameterTree init);

struct RoundOptions {
  std::vector<bool> frozen;
  bool ascent = false;
  std::string phase = "training";
};

// One FedAvg round over the participating clients; clients run in parallel
// up to config.threads, aggregation order is ascending client id.
void RunRound(FederationSession& s, const RoundOptions& opts = {});

struct TrainingStopRule {
  std::size_t max_rounds = 60;
  // Stop once validation accuracy has not improved by min_delta points for
  // this many rounds. 0 disables early stopping.
  std::size_t patience = 0;
  double min_delta = 0.0;
};

struct TrainingResult {
  Checkpoint final;
  std::vector<Checkpoint> trace;  // round 0 (initial) onwards, when requested
};

// Throws DivergenceError when validation loss turns non-finite or exceeds
// ten times its initial value.
TrainingResult TrainToConvergence(FederationSession& s,
                                  const TrainingStopRule& stop,
                                  const EvalSets* trace_sets = nullptr);

struct RecoveryStopRule {
  // Validation accuracy (percent) of the reference model. NaN disables
  // early stopping: exactly max_rounds rounds run.
  double reference_accuracy = std::numeric_limits<double>::quiet_NaN();
  double epsilon = 1.0;
  std::size_t window = 5;
  std::size_t max_rounds = 50;
};

struct FineTuneResult {
  std::vector<Checkpoint> trace;  // round 0 is the starting point
  std::size_t rounds = 0;
  std::optional<std::size_t> recovered_round;
};

// Fine-tunes until the validation accuracy has stayed within epsilon of the
// reference for `window` consecutive rounds, or max_rounds.
FineTuneResult FineTune(FederationSession& s, const RecoveryStopRule& stop,
                        const EvalSets& sets,
                        const std::vector<bool>& frozen = {});

}  // namespace negfu

#endif  // NEGFU_FEDERATION_H_
