#ifndef NEGFU_PERTURBATION_H_
#define NEGFU_PERTURBATION_H_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "negfu/network.h"

namespace negfu {

// Multiplies weights and biases of the named layers by -1. Every other layer
// is copied unchanged.
ParameterTree NegateLayers(const ParameterTree& params,
                           const std::vector<std::string>& layers);

enum class PerturbationKind {
  kNegate,
  kGaussianNoise,
  kReinit,
  kZero,
  kKernelFlip,
  kScale
};

std::string_view ToString(PerturbationKind kind);
std::optional<PerturbationKind> ParsePerturbationKind(std::string_view s);

struct Perturbation {
  PerturbationKind kind = PerturbationKind::kNegate;
  std::vector<std::string> layers;
  double sigma = 0.1;   // gaussian_noise
  double factor = 1.0;  // scale
};

ParameterTree Perturb(const NetworkSpec& spec, const ParameterTree& params,
                      const Perturbation& p, std::uint64_t seed);

// Layer name -> index of the source tree it is copied from.
using GraftAssignment = std::map<std::string, std::size_t>;

ParameterTree Graft(std::span<const ParameterTree> trees,
                    const GraftAssignment& assignment);

// a*psi(x) + b*psi(-x) = c for all x.
struct AffineRelation {
  double a = 1.0;
  double b = 1.0;
  double c = 0.0;
};

// Known relation for the activation; relu has none.
std::optional<AffineRelation> RelationFor(Activation psi);

// Returns l2' = l2 o (x -> c/a - (b/a) x), so that l2(psi(z)) = l2'(psi(-z)).
LayerParams AffineCompensate(const LayerParams& layer2, Activation psi);

// Negates layer `layer` and compensates the layer right after it, leaving the
// network function unchanged.
ParameterTree NegateAndCompensate(const NetworkSpec& spec,
                                  const ParameterTree& params,
                                  const std::string& layer);

// Negates a conv layer together with the scale and shift of the layernorm
// that directly follows it. The two negations cancel when nothing nonlinear
// sits between them.
ParameterTree ConvNormDoubleNegate(const NetworkSpec& spec,
                                   const ParameterTree& params,
                                   const std::string& conv);

// Negates `negate`, reinitializes every layer outside `freeze`, and returns
// the per-layer frozen mask (true on `freeze`).
struct FrozenStart {
  ParameterTree params;
  std::vector<bool> frozen;
};

FrozenStart NegateFreezeReinit(const NetworkSpec& spec,
                               const ParameterTree& params,
                               const std::vector<std::string>& negate,
                               const std::vector<std::string>& freeze,
                               std::uint64_t seed);

}  // namespace negfu

#endif  // NEGFU_PERTURBATION_H_
