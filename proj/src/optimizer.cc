#include "negfu/optimizer.h"

#include <cmath>

#include "negfu/errors.h"

namespace negfu {
namespace {

void UpdateTensor(Tensor& theta, const Tensor& g, Tensor& v,
                  const SgdConfig& c) {
  for (std::size_t i = 0; i < theta.size(); ++i) {
    v[i] = c.momentum * v[i] + g[i] + c.weight_decay * theta[i];
    theta[i] -= c.learning_rate * v[i];
  }
}

}  // namespace

void ValidateSgdConfig(const SgdConfig& cfg) {
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw InvalidArgument("learning rate must be positive");
  }
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) {
    throw InvalidArgument("momentum must lie in [0, 1)");
  }
  if (!(cfg.weight_decay >= 0.0) || !std::isfinite(cfg.weight_decay)) {
    throw InvalidArgument("weight decay must be >= 0");
  }
}

OptimizerState::OptimizerState(SgdConfig cfg, const ParameterTree& like)
    : config(cfg), velocity(like.ZerosLike()) {
  ValidateSgdConfig(config);
}

void ApplySgdStep(ParameterTree& params, const GradTree& grads,
                  OptimizerState& opt) {
  if (!params.Congruent(grads.grads) || !params.Congruent(opt.velocity)) {
    throw ShapeError("sgd step on incongruent trees");
  }
  for (std::size_t l = 0; l < params.size(); ++l) {
    if (opt.IsFrozen(l)) continue;
    LayerParams& p = params.layer(l);
    const LayerParams& g = grads.grads.layer(l);
    LayerParams& v = opt.velocity.layer(l);
    UpdateTensor(p.weight, g.weight, v.weight, opt.config);
    if (p.bias) UpdateTensor(*p.bias, *g.bias, *v.bias, opt.config);
    if (!p.weight.AllFinite() || (p.bias && !p.bias->AllFinite())) {
      throw NonFiniteError("non-finite parameters after update of layer '" +
                           p.name + "'");
    }
  }
}

ParameterTree SgdStep(const ParameterTree& params, const GradTree& grads,
                      OptimizerState& opt) {
  ParameterTree out = params;
  ApplySgdStep(out, grads, opt);
  return out;
}

}  // namespace negfu
