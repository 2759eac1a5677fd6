#include "negfu/strategy.h"

#include <random>

#include "negfu/errors.h"

namespace negfu {
namespace {

const FederatedSplit& Split(const UnlearningContext& ctx) {
  if (!ctx.split || !ctx.forget) {
    throw InvalidArgument("unlearning context is missing its split or forget spec");
  }
  return *ctx.split;
}

FederationSession RetainSession(const UnlearningContext& ctx,
                                ParameterTree start, std::string stream) {
  const FederatedSplit& split = Split(ctx);
  FederationSession s;
  s.spec = ctx.spec;
  s.config = ctx.config;
  s.global = std::move(start);
  s.stream = std::move(stream);
  s.targets = ctx.forget->RequestingClients();
  for (std::size_t k = 0; k < split.client_count(); ++k) {
    s.client_data.push_back(ctx.forget->RetainData(split, k));
  }
  s.validation = RetainValidation(split, *ctx.forget);
  return s;
}

std::vector<std::string> NegationSet(const UnlearningContext& ctx,
                                     const Strategy& s) {
  if (!s.negate_layers.empty()) return s.negate_layers;
  return {ctx.spec.layers.front().name};
}

Dataset RandomRelabel(const Dataset& d, std::uint64_t seed, std::size_t client) {
  Dataset out = d;
  Rng rng = MakeRng(seed, "random-label", {client});
  std::uniform_int_distribution<int> pick(0, d.class_count - 2);
  for (int& y : out.labels) {
    const int r = pick(rng);
    y = r >= y ? r + 1 : r;
  }
  return out;
}

}  // namespace

std::string_view ToString(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::kNoT: return "not";
    case StrategyKind::kRetrain: return "retrain";
    case StrategyKind::kFineTune: return "ft";
    case StrategyKind::kRandomLabel: return "randl";
    case StrategyKind::kGradientAscent: return "ga";
    case StrategyKind::kPerturb: return "perturb";
  }
  return "?";
}

std::optional<StrategyKind> ParseStrategyKind(std::string_view s) {
  for (auto k : {StrategyKind::kNoT, StrategyKind::kRetrain,
                 StrategyKind::kFineTune, StrategyKind::kRandomLabel,
                 StrategyKind::kGradientAscent, StrategyKind::kPerturb}) {
    if (ToString(k) == s) return k;
  }
  return std::nullopt;
}

std::string Strategy::Label() const {
  switch (kind) {
    case StrategyKind::kNoT: return "NoT";
    case StrategyKind::kRetrain: return "Retrain";
    case StrategyKind::kFineTune: return "FT";
    case StrategyKind::kRandomLabel: return "RandL";
    case StrategyKind::kGradientAscent: return "GA";
    case StrategyKind::kPerturb:
      return "perturb:" + std::string(ToString(perturbation.kind));
  }
  return "?";
}

void ValidateStrategy(const UnlearningContext& ctx, const Strategy& s) {
  Split(ctx);
  switch (s.kind) {
    case StrategyKind::kNoT:
      for (const std::string& n : NegationSet(ctx, s)) ctx.spec.IndexOf(n);
      break;
    case StrategyKind::kPerturb:
      if (s.perturbation.layers.empty()) {
        throw InvalidArgument("perturbation needs target layers");
      }
      for (const std::string& n : s.perturbation.layers) {
        const std::size_t i = ctx.spec.IndexOf(n);
        if (s.perturbation.kind == PerturbationKind::kKernelFlip &&
            ctx.spec.layers[i].kind != LayerKind::kConv2d) {
          throw InvalidArgument("kernel_flip needs conv layers, '" + n + "' is not");
        }
      }
      break;
    case StrategyKind::kGradientAscent:
      if (s.ascent_rounds == 0) throw InvalidArgument("GA needs ascent rounds");
      if (ctx.forget->ForgetCount() == 0) {
        throw InvalidArgument("GA needs access to forget data, which is empty");
      }
      break;
    case StrategyKind::kRandomLabel:
      if (ctx.spec.ClassCount() < 2) {
        throw InvalidArgument("random relabeling needs two classes");
      }
      break;
    case StrategyKind::kRetrain:
    case StrategyKind::kFineTune:
      break;
  }
}

EvalSets UnlearningEvalSets(const UnlearningContext& ctx,
                            const UnlearningOptions& opts) {
  const FederatedSplit& split = Split(ctx);
  EvalSets sets;
  sets.retain = ctx.forget->AllRetain(split);
  if (opts.track_forget_metrics) sets.forget = ctx.forget->AllForget(split);
  sets.validation = RetainValidation(split, *ctx.forget);
  return sets;
}

UnlearningRun RunUnlearning(const UnlearningContext& ctx,
                            const ParameterTree& theta_star,
                            const Strategy& strategy,
                            const RecoveryStopRule& stop,
                            const UnlearningOptions& opts) {
  ValidateStrategy(ctx, strategy);
  CheckCompatible(ctx.spec, theta_star);
  const FederatedSplit& split = Split(ctx);
  const EvalSets sets = UnlearningEvalSets(ctx, opts);
  UnlearningRun run;
  run.method = strategy.Label();

  if (strategy.kind == StrategyKind::kRetrain) {
    Rng rng = MakeRng(ctx.config.seed, "retrain-init");
    FederationSession s =
        RetainSession(ctx, InitParameters(ctx.spec, rng), "retrain");
    TrainingResult r = TrainToConvergence(s, ctx.training_stop, &sets);
    run.trace = std::move(r.trace);
    run.ledger = std::move(s.ledger);
    run.rounds = s.round;
    return run;
  }

  FederationSession s = RetainSession(ctx, theta_star, "unlearn-" + run.method);
  s.phase = Phase::kUnlearning;
  s.ledger.Record(0, kRequestBytes * ctx.forget->RequestingClients().size(), 0,
                  "request");
  const std::uint64_t pseed = DeriveSeed(ctx.config.seed, "perturbation");
  switch (strategy.kind) {
    case StrategyKind::kNoT:
      s.global = NegateLayers(theta_star, NegationSet(ctx, strategy));
      break;
    case StrategyKind::kPerturb:
      s.global = Perturb(ctx.spec, theta_star, strategy.perturbation, pseed);
      break;
    case StrategyKind::kGradientAscent: {
      std::vector<std::optional<Dataset>> retain = s.client_data;
      for (std::size_t k = 0; k < split.client_count(); ++k) {
        s.client_data[k] = ctx.forget->ForgetData(split, k);
      }
      RoundOptions ascent;
      ascent.ascent = true;
      ascent.phase = "ascent";
      const std::size_t epochs = s.config.local_epochs;
      s.config.local_epochs = 1;
      for (std::size_t i = 0; i < strategy.ascent_rounds; ++i) {
        RunRound(s, ascent);
      }
      s.config.local_epochs = epochs;
      s.client_data = std::move(retain);
      break;
    }
    case StrategyKind::kRandomLabel:
      for (std::size_t k = 0; k < split.client_count(); ++k) {
        std::optional<Dataset> f = ctx.forget->ForgetData(split, k);
        if (!f) continue;
        Dataset relabeled = RandomRelabel(*f, ctx.config.seed, k);
        s.client_data[k] = s.client_data[k] ? Concat(*s.client_data[k], relabeled)
                                            : std::move(relabeled);
      }
      break;
    case StrategyKind::kFineTune:
    case StrategyKind::kRetrain:
      break;
  }
  FineTuneResult ft = FineTune(s, stop, sets);
  run.trace = std::move(ft.trace);
  run.ledger = std::move(s.ledger);
  run.rounds = ft.rounds;
  run.recovered_round = ft.recovered_round;
  return run;
}

UnlearningRun RunNrFreeze(const UnlearningContext& ctx,
                          const ParameterTree& theta_star,
                          const std::vector<std::string>& negate,
                          const std::vector<std::string>& freeze,
                          std::size_t rounds) {
  const FrozenStart start =
      NegateFreezeReinit(ctx.spec, theta_star, negate, freeze,
                         DeriveSeed(ctx.config.seed, "nr-freeze"));
  FederationSession s = RetainSession(ctx, start.params, "nr-freeze");
  RecoveryStopRule fixed;
  fixed.max_rounds = rounds;
  FineTuneResult ft = FineTune(s, fixed, UnlearningEvalSets(ctx), start.frozen);
  UnlearningRun run;
  run.method = "NR-Freeze";
  run.trace = std::move(ft.trace);
  run.ledger = std::move(s.ledger);
  run.rounds = ft.rounds;
  return run;
}

}  // namespace negfu
