#include "negfu/federation.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <thread>

#include "negfu/costs.h"
#include "negfu/errors.h"

namespace negfu {

void ValidateFederationConfig(const FederationConfig& cfg) {
  if (cfg.batch_size == 0) throw InvalidArgument("batch size must be positive");
  if (cfg.threads == 0) throw InvalidArgument("thread count must be positive");
  ValidateSgdConfig(cfg.sgd);
}

ClientUpdateResult ClientUpdate(const NetworkSpec& spec,
                                const ParameterTree& global,
                                const Dataset& data,
                                const FederationConfig& cfg, Rng& rng,
                                const std::vector<bool>& frozen, bool ascent) {
  if (data.size() == 0) throw InvalidArgument("client has no data");
  ClientUpdateResult r;
  r.params = global;
  if (cfg.local_epochs == 0) return r;
  OptimizerState opt(cfg.sgd, global);
  opt.frozen = frozen;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t e = 0; e < cfg.local_epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> rows(order.data() + start, stop - start);
      const Tensor x = data.inputs.Gather(rows);
      std::vector<int> y;
      y.reserve(rows.size());
      for (std::size_t i : rows) y.push_back(data.labels[i]);
      GradTree g = Backward(spec, r.params, x, y);
      if (ascent) g.grads.Scale(-1.0);
      ApplySgdStep(r.params, g, opt);
      r.flops += CountCosts(spec, rows.size()).TrainStepFlops();
      ++r.steps;
    }
  }
  return r;
}

ParameterTree Aggregate(std::span<const ParameterTree> trees,
                        std::span<const double> weights) {
  if (trees.empty() || trees.size() != weights.size()) {
    throw InvalidArgument("aggregate needs one weight per tree");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) {
      throw InvalidArgument("aggregation weights must be positive");
    }
    total += w;
  }
  for (const ParameterTree& t : trees) {
    if (!t.Congruent(trees[0])) throw ShapeError("aggregating incongruent trees");
  }
  if (trees.size() == 1) return trees[0];
  ParameterTree out = trees[0].ZerosLike();
  for (std::size_t i = 0; i < trees.size(); ++i) {
    out.Axpy(weights[i] / total, trees[i]);
  }
  return out;
}

void CostLedger::Record(std::size_t round, std::uint64_t bytes,
                        std::uint64_t flops, std::string phase) {
  rows_.push_back({round, bytes, flops, std::move(phase)});
  bytes_ += bytes;
  flops_ += flops;
}

void CostLedger::WriteCsv(std::ostream& out, std::string_view method) const {
  for (const CostRow& r : rows_) {
    out << method << ',' << r.round << ',' << r.bytes << ',' << r.flops << ','
        << r.phase << '\n';
  }
}

Snapshot Measure(const NetworkSpec& spec, const ParameterTree& params,
                 const EvalSets& sets) {
  Snapshot s;
  auto eval = [&](const std::optional<Dataset>& d) -> std::optional<LossAccuracy> {
    if (!d) return std::nullopt;
    return EvaluateLossAccuracy(spec, params, d->inputs, d->labels);
  };
  s.retain = eval(sets.retain);
  s.forget = eval(sets.forget);
  s.validation = eval(sets.validation);
  return s;
}

std::size_t FederationSession::ParticipantCount() const {
  return static_cast<std::size_t>(std::count_if(
      client_data.begin(), client_data.end(),
      [](const std::optional<Dataset>& d) { return d.has_value(); }));
}

FederationSession MakeTrainingSession(const NetworkSpec& spec,
                                      const FederatedSplit& split,
                                      const FederationConfig& cfg,
                                      ParameterTree init) {
  ValidateFederationConfig(cfg);
  CheckCompatible(spec, init);
  FederationSession s;
  s.spec = spec;
  s.config = cfg;
  s.global = std::move(init);
  for (const ClientShard& c : split.clients) {
    s.client_data.emplace_back(c.train);
    if (c.validation) {
      s.validation = s.validation ? Concat(*s.validation, *c.validation)
                                  : *c.validation;
    }
  }
  return s;
}

void RunRound(FederationSession& s, const RoundOptions& opts) {
  std::vector<std::size_t> clients;
  for (std::size_t k = 0; k < s.client_data.size(); ++k) {
    if (s.client_data[k]) clients.push_back(k);
  }
  if (clients.empty()) throw InvalidArgument("no client participates");
  const std::size_t round = s.round + 1;
  std::vector<ClientUpdateResult> results(clients.size());
  std::vector<std::string> failures(clients.size());
  auto work = [&](std::size_t i) {
    const std::size_t k = clients[i];
    Rng rng = MakeRng(s.config.seed, s.stream, {round, k});
    try {
      results[i] = ClientUpdate(s.spec, s.global, *s.client_data[k], s.config,
                                rng, opts.frozen, opts.ascent);
    } catch (const NonFiniteError& e) {
      failures[i] = "client " + std::to_string(k) + ": " + e.what();
    }
  };
  const std::size_t threads = std::min(s.config.threads, clients.size());
  if (threads <= 1) {
    for (std::size_t i = 0; i < clients.size(); ++i) work(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < clients.size(); i += threads) work(i);
      });
    }
  }
  for (const std::string& f : failures) {
    if (!f.empty()) {
      throw DivergenceError("round " + std::to_string(round) + " (" +
                            opts.phase + "), " + f);
    }
  }
  std::vector<ParameterTree> trees;
  std::vector<double> weights;
  std::uint64_t flops = 0;
  for (std::size_t i = 0; i < clients.size(); ++i) {
    trees.push_back(std::move(results[i].params));
    weights.push_back(static_cast<double>(s.client_data[clients[i]]->size()));
    flops += results[i].flops;
  }
  ParameterTree next = Aggregate(trees, weights);
  for (std::size_t l = 0; l < opts.frozen.size() && l < next.size(); ++l) {
    if (opts.frozen[l]) next.layer(l) = s.global.layer(l);
  }
  s.global = std::move(next);
  s.round = round;
  s.ledger.Record(round, RoundBytes(clients.size(), s.global.ParameterCount()),
                  flops, opts.phase);
}

namespace {

double ValidationLoss(const FederationSession& s) {
  const Dataset& v = *s.validation;
  const std::vector<double> losses =
      PerSampleLoss(s.spec, s.global, v.inputs, v.labels);
  double sum = 0.0;
  for (double l : losses) sum += l;
  return sum / static_cast<double>(losses.size());
}

void CheckDivergence(const FederationSession& s, double initial, double now) {
  if (!std::isfinite(now) || now > 10.0 * initial) {
    throw DivergenceError("validation loss diverged at round " +
                          std::to_string(s.round) + ": " + std::to_string(now) +
                          " (initial " + std::to_string(initial) + ")");
  }
}

}  // namespace

TrainingResult TrainToConvergence(FederationSession& s,
                                  const TrainingStopRule& stop,
                                  const EvalSets* trace_sets) {
  TrainingResult r;
  auto snapshot = [&] {
    Checkpoint c;
    c.round = s.round;
    c.params = s.global;
    if (trace_sets) c.metrics = Measure(s.spec, s.global, *trace_sets);
    return c;
  };
  if (trace_sets) r.trace.push_back(snapshot());
  double initial = 0.0;
  if (s.validation) initial = ValidationLoss(s);
  double best = -1.0;
  std::size_t stale = 0;
  for (std::size_t i = 0; i < stop.max_rounds; ++i) {
    try {
      RunRound(s);
    } catch (const NonFiniteError& e) {
      throw DivergenceError(e.what());
    }
    if (s.validation) {
      CheckDivergence(s, initial, ValidationLoss(s));
    }
    if (trace_sets) r.trace.push_back(snapshot());
    if (stop.patience > 0 && s.validation) {
      const Dataset& v = *s.validation;
      const double acc =
          EvaluateLossAccuracy(s.spec, s.global, v.inputs, v.labels).accuracy;
      if (acc > best + stop.min_delta) {
        best = acc;
        stale = 0;
      } else if (++stale >= stop.patience) {
        break;
      }
    }
  }
  r.final = trace_sets ? r.trace.back() : snapshot();
  return r;
}

FineTuneResult FineTune(FederationSession& s, const RecoveryStopRule& stop,
                        const EvalSets& sets, const std::vector<bool>& frozen) {
  if (stop.window == 0) throw InvalidArgument("recovery window must be positive");
  if (!(stop.epsilon >= 0.0)) throw InvalidArgument("epsilon must be >= 0");
  FineTuneResult r;
  s.phase = Phase::kUnlearning;
  r.trace.push_back({0, s.global, Measure(s.spec, s.global, sets)});
  const bool early = !std::isnan(stop.reference_accuracy);
  if (early && !sets.validation) {
    throw InvalidArgument("recovery stop rule needs a validation set");
  }
  const double initial =
      sets.validation ? r.trace[0].metrics.validation->loss : 0.0;
  RoundOptions opts;
  opts.frozen = frozen;
  opts.phase = "fine_tune";
  std::size_t streak = 0;
  for (std::size_t i = 1; i <= stop.max_rounds; ++i) {
    RunRound(s, opts);
    Checkpoint c{i, s.global, Measure(s.spec, s.global, sets)};
    if (c.metrics.validation) {
      // A perturbed start can sit below chance-level loss; never judge
      // divergence against less than log(k).
      CheckDivergence(s, std::max(initial, std::log(static_cast<double>(
                                               s.spec.ClassCount()))),
                      c.metrics.validation->loss);
    }
    r.trace.push_back(std::move(c));
    r.rounds = i;
    if (early) {
      const double acc = r.trace.back().metrics.validation->accuracy;
      streak = std::abs(acc - stop.reference_accuracy) <= stop.epsilon
                   ? streak + 1
                   : 0;
      if (streak >= stop.window) {
        r.recovered_round = i;
        break;
      }
    }
  }
  return r;
}

}  // namespace negfu
