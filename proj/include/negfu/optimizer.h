#ifndef NEGFU_OPTIMIZER_H_
#define NEGFU_OPTIMIZER_H_

#include <vector>

#include "negfu/network.h"

namespace negfu {

struct SgdConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

void ValidateSgdConfig(const SgdConfig& cfg);

// Classic momentum with coupled weight decay:
//   v <- mu * v + g + lambda * theta
//   theta <- theta - eta * v
// Frozen layers are skipped entirely (parameters and velocity untouched).
struct OptimizerState {
  SgdConfig config;
  ParameterTree velocity;
  std::vector<bool> frozen;  // per layer; empty means nothing frozen

  OptimizerState(SgdConfig cfg, const ParameterTree& like);
  bool IsFrozen(std::size_t layer) const {
    return layer < frozen.size() && frozen[layer];
  }
};

// In-place update. Throws NonFiniteError if the update produces NaN/Inf.
void ApplySgdStep(ParameterTree& params, const GradTree& grads,
                  OptimizerState& opt);

ParameterTree SgdStep(const ParameterTree& params, const GradTree& grads,
                      OptimizerState& opt);

}  // namespace negfu

#endif  // NEGFU_OPTIMIZER_H_
