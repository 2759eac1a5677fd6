#include "negfu/perturbation.h"

#include <algorithm>
#include <random>
#include <set>

#include "negfu/errors.h"
#include "negfu/rng.h"

namespace negfu {
namespace {

std::vector<std::size_t> ResolveLayers(const ParameterTree& params,
                                       const std::vector<std::string>& names) {
  std::vector<std::size_t> idx;
  for (const std::string& n : names) {
    if (!params.Contains(n)) throw InvalidArgument("unknown layer '" + n + "'");
    idx.push_back(params.IndexOf(n));
  }
  return idx;
}

template <typename Fn>
void ForEachTensor(LayerParams& l, Fn fn) {
  fn(l.weight);
  if (l.bias) fn(*l.bias);
}

void FlipKernels(Tensor& w) {
  // (out, in, k, k): reverse both spatial axes.
  const std::size_t planes = w.dim(0) * w.dim(1), k = w.dim(2);
  for (std::size_t p = 0; p < planes; ++p) {
    double* base = w.data().data() + p * k * k;
    std::reverse(base, base + k * k);
  }
}

}  // namespace

ParameterTree NegateLayers(const ParameterTree& params,
                           const std::vector<std::string>& layers) {
  ParameterTree out = params;
  for (std::size_t i : ResolveLayers(params, layers)) {
    ForEachTensor(out.layer(i), [](Tensor& t) { t.Scale(-1.0); });
  }
  return out;
}

std::string_view ToString(PerturbationKind kind) {
  switch (kind) {
    case PerturbationKind::kNegate: return "negate";
    case PerturbationKind::kGaussianNoise: return "gaussian_noise";
    case PerturbationKind::kReinit: return "reinit";
    case PerturbationKind::kZero: return "zero";
    case PerturbationKind::kKernelFlip: return "kernel_flip";
    case PerturbationKind::kScale: return "scale";
  }
  return "?";
}

std::optional<PerturbationKind> ParsePerturbationKind(std::string_view s) {
  for (auto k : {PerturbationKind::kNegate, PerturbationKind::kGaussianNoise,
                 PerturbationKind::kReinit, PerturbationKind::kZero,
                 PerturbationKind::kKernelFlip, PerturbationKind::kScale}) {
    if (ToString(k) == s) return k;
  }
  return std::nullopt;
}

ParameterTree Perturb(const NetworkSpec& spec, const ParameterTree& params,
                      const Perturbation& p, std::uint64_t seed) {
  CheckCompatible(spec, params);
  const std::vector<std::size_t> idx = ResolveLayers(params, p.layers);
  if (p.kind == PerturbationKind::kNegate) return NegateLayers(params, p.layers);
  if (p.kind == PerturbationKind::kGaussianNoise && !(p.sigma >= 0.0)) {
    throw InvalidArgument("noise sigma must be >= 0");
  }
  ParameterTree out = params;
  for (std::size_t i : idx) {
    LayerParams& l = out.layer(i);
    Rng rng = MakeRng(seed, "perturb", {static_cast<std::uint64_t>(i)});
    switch (p.kind) {
      case PerturbationKind::kNegate:
        break;
      case PerturbationKind::kGaussianNoise: {
        std::normal_distribution<double> n(0.0, p.sigma);
        ForEachTensor(l, [&](Tensor& t) {
          for (std::size_t j = 0; j < t.size(); ++j) t[j] += n(rng);
        });
        break;
      }
      case PerturbationKind::kReinit:
        l = InitLayer(spec, i, rng);
        break;
      case PerturbationKind::kZero:
        ForEachTensor(l, [](Tensor& t) { t.Fill(0.0); });
        break;
      case PerturbationKind::kKernelFlip:
        if (l.kind != LayerKind::kConv2d) {
          throw InvalidArgument("kernel_flip applies to conv layers only, not '" +
                                l.name + "'");
        }
        FlipKernels(l.weight);
        break;
      case PerturbationKind::kScale:
        ForEachTensor(l, [&](Tensor& t) { t.Scale(p.factor); });
        break;
    }
  }
  return out;
}

ParameterTree Graft(std::span<const ParameterTree> trees,
                    const GraftAssignment& assignment) {
  if (trees.empty()) throw InvalidArgument("graft needs at least one tree");
  for (const ParameterTree& t : trees) {
    if (!t.Congruent(trees[0])) throw ShapeError("grafting incongruent trees");
  }
  const ParameterTree& first = trees[0];
  if (assignment.size() != first.size()) {
    throw InvalidArgument("graft assignment must cover every layer once");
  }
  std::vector<LayerParams> layers;
  for (const LayerParams& l : first.layers()) {
    auto it = assignment.find(l.name);
    if (it == assignment.end()) {
      throw InvalidArgument("layer '" + l.name + "' has no graft source");
    }
    if (it->second >= trees.size()) {
      throw InvalidArgument("graft source index out of range for '" + l.name + "'");
    }
    layers.push_back(trees[it->second].Find(l.name));
  }
  return ParameterTree(std::move(layers));
}

std::optional<AffineRelation> RelationFor(Activation psi) {
  switch (psi) {
    case Activation::kIdentity:
    case Activation::kTanh:
      return AffineRelation{1.0, 1.0, 0.0};
    case Activation::kSigmoid:
    case Activation::kStep:
      return AffineRelation{1.0, 1.0, 1.0};
    case Activation::kRelu:
      return std::nullopt;
  }
  return std::nullopt;
}

LayerParams AffineCompensate(const LayerParams& layer2, Activation psi) {
  const std::optional<AffineRelation> rel = RelationFor(psi);
  if (!rel) {
    throw InvalidArgument("activation '" + std::string(ToString(psi)) +
                          "' has no affine symmetry to compensate");
  }
  if (layer2.kind == LayerKind::kLayerNorm) {
    throw InvalidArgument("cannot compensate through a layernorm");
  }
  LayerParams out = layer2;
  const std::size_t outs = layer2.weight.dim(0);
  const std::size_t fan = layer2.weight.size() / outs;
  const double shift = rel->c / rel->a;
  if (shift != 0.0) {
    if (!out.bias) {
      throw InvalidArgument("compensating layer '" + layer2.name +
                            "' needs a bias");
    }
    for (std::size_t o = 0; o < outs; ++o) {
      double row = 0.0;
      for (std::size_t j = 0; j < fan; ++j) row += layer2.weight[o * fan + j];
      (*out.bias)[o] += shift * row;
    }
  }
  out.weight.Scale(-rel->b / rel->a);
  return out;
}

ParameterTree NegateAndCompensate(const NetworkSpec& spec,
                                  const ParameterTree& params,
                                  const std::string& layer) {
  CheckCompatible(spec, params);
  const std::size_t i = spec.IndexOf(layer);
  if (i + 1 >= spec.layers.size()) {
    throw InvalidArgument("layer '" + layer + "' has no successor to compensate");
  }
  if (spec.layers[i].kind == LayerKind::kLayerNorm) {
    throw InvalidArgument("negate-and-compensate expects a dense or conv layer");
  }
  ParameterTree out = NegateLayers(params, {layer});
  out.layer(i + 1) = AffineCompensate(params.layer(i + 1), spec.layers[i].activation);
  return out;
}

ParameterTree ConvNormDoubleNegate(const NetworkSpec& spec,
                                   const ParameterTree& params,
                                   const std::string& conv) {
  CheckCompatible(spec, params);
  const std::size_t i = spec.IndexOf(conv);
  if (spec.layers[i].kind != LayerKind::kConv2d || i + 1 >= spec.layers.size() ||
      spec.layers[i + 1].kind != LayerKind::kLayerNorm) {
    throw InvalidArgument("'" + conv + "' is not a conv directly followed by a layernorm");
  }
  if (spec.layers[i].activation != Activation::kIdentity) {
    throw InvalidArgument("nonlinearity between '" + conv + "' and its layernorm");
  }
  return NegateLayers(params, {conv, spec.layers[i + 1].name});
}

FrozenStart NegateFreezeReinit(const NetworkSpec& spec,
                               const ParameterTree& params,
                               const std::vector<std::string>& negate,
                               const std::vector<std::string>& freeze,
                               std::uint64_t seed) {
  CheckCompatible(spec, params);
  const std::vector<std::size_t> frozen_idx = ResolveLayers(params, freeze);
  const std::set<std::size_t> frozen_set(frozen_idx.begin(), frozen_idx.end());
  if (frozen_set.size() == params.size()) {
    throw InvalidArgument("every layer is frozen; nothing left to train");
  }
  FrozenStart s;
  s.params = NegateLayers(params, negate);
  s.frozen.assign(params.size(), false);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (frozen_set.count(i)) {
      s.frozen[i] = true;
      continue;
    }
    Rng rng = MakeRng(seed, "freeze-reinit", {static_cast<std::uint64_t>(i)});
    s.params.layer(i) = InitLayer(spec, i, rng);
  }
  return s;
}

}  // namespace negfu
