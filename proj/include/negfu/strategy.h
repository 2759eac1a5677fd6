#ifndef NEGFU_STRATEGY_H_
#define NEGFU_STRATEGY_H_

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "negfu/data.h"
#include "negfu/federation.h"
#include "negfu/perturbation.h"

namespace negfu {

enum class StrategyKind {
  kNoT,             // negate selected layers, then fine-tune
  kRetrain,         // train from scratch on retained data
  kFineTune,        // fine-tune from the trained model
  kRandomLabel,     // relabel forget data at random, fine-tune on everything
  kGradientAscent,  // ascend on forget data, then fine-tune
  kPerturb,         // arbitrary perturbation, then fine-tune
};

std::string_view ToString(StrategyKind kind);
std::optional<StrategyKind> ParseStrategyKind(std::string_view s);

struct Strategy {
  StrategyKind kind = StrategyKind::kNoT;
  std::vector<std::string> negate_layers;  // NoT; empty means first layer
  std::size_t ascent_rounds = 1;           // GA, one local epoch each
  Perturbation perturbation;               // kPerturb

  // Report label, e.g. "NoT", "FT", "perturb:reinit".
  std::string Label() const;
};

// Everything shared by the strategies of one scenario.
struct UnlearningContext {
  NetworkSpec spec;
  const FederatedSplit* split = nullptr;
  const ForgetSpec* forget = nullptr;
  FederationConfig config;
  TrainingStopRule training_stop;
};

struct UnlearningOptions {
  // Measure accuracy on D_u at every checkpoint. Off when D_u must not be
  // touched at all.
  bool track_forget_metrics = true;
};

struct UnlearningRun {
  std::string method;
  std::vector<Checkpoint> trace;  // trace[0] is tau:0
  CostLedger ledger;
  std::size_t rounds = 0;
  std::optional<std::size_t> recovered_round;

  const ParameterTree& final_params() const { return trace.back().params; }
  const Checkpoint& start() const { return trace.front(); }
};

// Checks kind-specific requirements (layer names, D_u access) up front.
void ValidateStrategy(const UnlearningContext& ctx, const Strategy& s);

EvalSets UnlearningEvalSets(const UnlearningContext& ctx,
                            const UnlearningOptions& opts = {});

// Applies the strategy once to theta*, then fine-tunes on retained data.
// Retrain ignores theta* and the recovery rule: it trains from a fresh
// initialization under the training stop rule.
UnlearningRun RunUnlearning(const UnlearningContext& ctx,
                            const ParameterTree& theta_star,
                            const Strategy& strategy,
                            const RecoveryStopRule& stop,
                            const UnlearningOptions& opts = {});

// Negate-and-freeze test: negates and freezes `negate`, reinitializes the
// rest, and fine-tunes on retained data for `rounds` rounds.
UnlearningRun RunNrFreeze(const UnlearningContext& ctx,
                          const ParameterTree& theta_star,
                          const std::vector<std::string>& negate,
                          const std::vector<std::string>& freeze,
                          std::size_t rounds);

}  // namespace negfu

#endif  // NEGFU_STRATEGY_H_
