#include "negfu/runner.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "negfu/errors.h"

namespace negfu {
namespace {

namespace fs = std::filesystem;

std::string Num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string OptNum(const std::optional<double>& v) { return v ? Num(*v) : ""; }

Dataset Generate(const ExperimentConfig& c, std::uint64_t seed) {
  return c.generator == Generator::kBlobs ? MakeBlobs(c.blobs, seed)
                                          : MakeGridImages(c.grid, seed);
}

const Strategy* FindKind(const ExperimentConfig& c, StrategyKind k) {
  for (const Strategy& s : c.strategies) {
    if (s.kind == k) return &s;
  }
  return nullptr;
}

MetricsReport Score(const NetworkSpec& spec, const ParameterTree& params,
                    const FederatedSplit& split, const ForgetSpec& forget,
                    const Dataset& forget_data, std::uint64_t seed,
                    std::string method) {
  MetricsReport r = Evaluate(spec, params, split, forget);
  r.method = std::move(method);
  r.mia = MiaScore(spec, params, forget_data, split.test, seed);
  return r;
}

double FlowTimePerRound(const ExperimentConfig& c, const FederatedSplit& split,
                        const ForgetSpec& forget) {
  double steps = 0.0;
  std::size_t participants = 0;
  for (std::size_t k = 0; k < split.client_count(); ++k) {
    const std::optional<Dataset> d = forget.RetainData(split, k);
    if (!d) continue;
    const std::size_t b = c.federation.batch_size;
    steps += static_cast<double>(c.federation.local_epochs *
                                 ((d->size() + b - 1) / b));
    ++participants;
  }
  if (participants == 0) return 0.0;
  return steps / static_cast<double>(participants) *
         c.federation.sgd.learning_rate / (1.0 - c.federation.sgd.momentum);
}

BoundReport Bound(const ExperimentConfig& c, const NetworkSpec& spec,
                  const UnlearningRun& run, const ParameterTree& reference,
                  const Dataset& retain, const Dataset& forget,
                  double flow_per_round) {
  BoundReport b;
  b.method = run.method;
  b.flow_time_per_round = flow_per_round;
  std::vector<std::vector<double>> checkpoints;
  for (const Checkpoint& cp : run.trace) checkpoints.push_back(cp.params.Flatten());
  const LossPair losses = NetworkLossPair(spec, reference, retain, forget);
  b.bound = UnlearningTimeBound(losses, checkpoints, reference.Flatten(),
                                c.bound_epsilon, c.bound_stochastic);
  const double target = (1.0 - c.bound_epsilon) *
                        std::abs(b.bound.delta_reference - b.bound.delta_start);
  for (std::size_t i = 0; i < run.trace.size(); ++i) {
    if (std::abs(b.bound.gaps[i] - b.bound.delta_start) >= target) {
      b.observed_round = run.trace[i].round;
      b.observed_time = static_cast<double>(run.trace[i].round) * flow_per_round;
      break;
    }
  }
  b.valid = !b.observed_time || b.bound.t_unlearn <= *b.observed_time;
  return b;
}

CkaComparison Compare(const NetworkSpec& spec, std::string name,
                      const ParameterTree& a, const ParameterTree& b,
                      const Tensor& probe) {
  CkaComparison out;
  out.name = std::move(name);
  out.profile = CkaDepthProfile(spec, a, b, probe);
  return out;
}

}  // namespace

const MetricsReport& SeedReport::Report(const std::string& method) const {
  for (const MetricsReport& r : reports) {
    if (r.method == method) return r;
  }
  throw InvalidArgument("no report for method " + method);
}

const UnlearningRun& SeedReport::Run(const std::string& method) const {
  for (const UnlearningRun& r : runs) {
    if (r.method == method) return r;
  }
  throw InvalidArgument("no run for method " + method);
}

PreparedSeed PrepareSeed(const ExperimentConfig& cfg, std::uint64_t seed) {
  ValidateExperimentConfig(cfg);
  TrainTest tt = SplitTrainTest(Generate(cfg, seed), cfg.test_fraction, seed);
  PreparedSeed p{Partition(tt.train, cfg.clients, cfg.partition, seed,
                           std::move(tt.test)),
                 {}, cfg.federation, {}, 0};
  if (cfg.analysis.backdoor) {
    ClientShard& shard = p.split.clients[cfg.backdoor_client];
    shard.train = Poison(shard.train, cfg.backdoor, DeriveSeed(seed, "poison")).data;
  }
  p.forget = BuildForgetSpec(p.split, cfg.forget, seed);
  p.federation.seed = seed;
  Rng init = MakeRng(seed, "init");
  FederationSession session = MakeTrainingSession(
      cfg.model, p.split, p.federation, InitParameters(cfg.model, init));
  p.trained = TrainToConvergence(session, cfg.training);
  p.rounds = session.round;
  return p;
}

SeedReport RunSeed(const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedReport out;
  out.seed = seed;
  const NetworkSpec& spec = cfg.model;
  const PreparedSeed prepared = PrepareSeed(cfg, seed);
  const FederatedSplit& split = prepared.split;
  const ForgetSpec& forget = prepared.forget;
  const FederationConfig& fed = prepared.federation;
  const std::optional<Dataset> forget_data = forget.AllForget(split);
  const std::optional<Dataset> retain_data = forget.AllRetain(split);
  if (!forget_data) throw InvalidArgument("the forget request selects no samples");
  if (!retain_data) throw InvalidArgument("the forget request leaves no retained samples");
  const ParameterTree& theta_star = prepared.trained.final.params;
  out.training_rounds = prepared.rounds;
  if (prepared.trained.final.metrics.validation) {
    out.trained_validation_acc = prepared.trained.final.metrics.validation->accuracy;
  }

  const UnlearningContext ctx{spec, &split, &forget, fed, cfg.training};
  const std::uint64_t mia_seed = DeriveSeed(seed, "mia");
  RecoveryStopRule stop = cfg.recovery;

  Strategy retrain;
  retrain.kind = StrategyKind::kRetrain;
  UnlearningRun reference = RunUnlearning(ctx, theta_star, retrain, stop);
  if (reference.trace.back().metrics.validation) {
    stop.reference_accuracy = reference.trace.back().metrics.validation->accuracy;
    out.reference_validation_acc = stop.reference_accuracy;
  }
  const MetricsReport ref_report =
      Score(spec, reference.final_params(), split, forget, *forget_data,
            mia_seed, reference.method);

  for (const Strategy& s : cfg.strategies) {
    UnlearningRun run = s.kind == StrategyKind::kRetrain
                            ? reference
                            : RunUnlearning(ctx, theta_star, s, stop);
    MetricsReport r = Score(spec, run.final_params(), split, forget,
                            *forget_data, mia_seed, run.method);
    r.avg_gap = AvgGap(r, ref_report);
    r.bytes = run.ledger.total_bytes();
    r.flops = run.ledger.total_flops();
    out.reports.push_back(r);
    out.runs.push_back(std::move(run));
  }

  if (cfg.analysis.nr_freeze) {
    std::vector<std::string> layers = cfg.nr_freeze_layers;
    if (layers.empty()) layers = {spec.layers.front().name};
    UnlearningRun run =
        RunNrFreeze(ctx, theta_star, layers, layers, cfg.nr_freeze_rounds);
    run.method = "NR-Freeze";
    MetricsReport r = Score(spec, run.final_params(), split, forget,
                            *forget_data, mia_seed, run.method);
    r.avg_gap = AvgGap(r, ref_report);
    r.bytes = run.ledger.total_bytes();
    r.flops = run.ledger.total_flops();
    out.reports.push_back(r);
    out.nr_freeze = std::move(run);
  }

  const Strategy* not_s = FindKind(cfg, StrategyKind::kNoT);
  const Strategy* ft_s = FindKind(cfg, StrategyKind::kFineTune);
  if (cfg.analysis.cka) {
    const UnlearningRun& nr = out.Run(not_s->Label());
    const UnlearningRun& fr = out.Run(ft_s->Label());
    const UnlearningRun& rr = out.Run("Retrain");
    const Tensor probe =
        split.test.inputs.Slice(0, std::min(cfg.probe_size, split.test.size()));
    CkaComparison base = Compare(spec, "Retrain@0|FT@0", rr.start().params,
                                 fr.start().params, probe);
    out.cka.push_back(Compare(spec, "NoT@0|FT@0", nr.start().params,
                              fr.start().params, probe));
    out.cka.push_back(Compare(spec, "NoT@final|Retrain@final",
                              nr.final_params(), rr.final_params(), probe));
    out.cka.push_back(Compare(spec, "NoT@final|FT@final", nr.final_params(),
                              fr.final_params(), probe));
    out.cka.push_back(Compare(spec, "Retrain@final|FT@final",
                              rr.final_params(), fr.final_params(), probe));
    out.cka.push_back(base);
    for (CkaComparison& c : out.cka) c.normalized = NormalizeCka(c.profile, base.profile);
  }

  if (cfg.analysis.spectral) {
    const std::uint64_t sseed = DeriveSeed(seed, "spectral");
    for (const std::string& m : {not_s->Label(), std::string("Retrain"), ft_s->Label()}) {
      out.spectral.push_back(
          {m, SpectralContent(spec, out.Run(m).start().params, *retain_data,
                              cfg.spectral, sseed)});
    }
  }

  if (cfg.analysis.bound) {
    const double flow = FlowTimePerRound(cfg, split, forget);
    for (const UnlearningRun& run : out.runs) {
      if (run.method == "Retrain") continue;
      out.bounds.push_back(Bound(cfg, spec, run, reference.final_params(),
                                 *retain_data, *forget_data, flow));
    }
  }

  if (cfg.analysis.backdoor) {
    out.backdoor.push_back(
        {"trained", BackdoorSuccessRate(spec, theta_star, split.test, cfg.backdoor)});
    for (const UnlearningRun& run : out.runs) {
      out.backdoor.push_back(
          {run.method, BackdoorSuccessRate(spec, run.final_params(), split.test,
                                           cfg.backdoor)});
    }
  }
  return out;
}

ScenarioReport RunScenario(const ExperimentConfig& cfg) {
  ScenarioReport r;
  r.config = cfg;
  for (std::uint64_t seed : cfg.seeds) r.seeds.push_back(RunSeed(cfg, seed));
  return r;
}

namespace {

void WriteFile(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

constexpr const char* kReportHeader =
    "method,retain,forget,test,mia,avg_gap,bytes,flops\n";

std::string ReportRow(const MetricsReport& m) {
  return m.method + "," + Num(m.retain_acc) + "," + OptNum(m.forget_acc) + "," +
         Num(m.test_acc) + "," + OptNum(m.mia) + "," + Num(m.avg_gap) + "," +
         std::to_string(m.bytes) + "," + std::to_string(m.flops) + "\n";
}

nlohmann::ordered_json BoundJson(const BoundReport& b) {
  nlohmann::ordered_json j;
  auto number = [](double v) -> nlohmann::ordered_json {
    if (std::isfinite(v)) return v;
    return nullptr;
  };
  j["method"] = b.method;
  j["t_unlearn"] = number(b.bound.t_unlearn);
  j["unbounded"] = b.bound.unbounded;
  j["lipschitz"] = number(b.bound.lipschitz);
  j["delta_start"] = b.bound.delta_start;
  j["delta_reference"] = b.bound.delta_reference;
  j["loss_decrease"] = b.bound.loss_decrease;
  j["stochastic_term"] = b.bound.stochastic_term;
  j["epsilon"] = b.bound.epsilon;
  j["flow_time_per_round"] = b.flow_time_per_round;
  j["observed_round"] = b.observed_round ? nlohmann::ordered_json(*b.observed_round)
                                         : nlohmann::ordered_json(nullptr);
  j["observed_time"] = b.observed_time ? number(*b.observed_time)
                                       : nlohmann::ordered_json(nullptr);
  j["valid"] = b.valid;
  j["gaps"] = b.bound.gaps;
  return j;
}

}  // namespace

void WriteSeedReport(const ExperimentConfig& cfg, const SeedReport& r,
                     const std::string& dir) {
  fs::create_directories(dir);
  const fs::path base(dir);

  std::string report = kReportHeader;
  for (const MetricsReport& m : r.reports) report += ReportRow(m);
  WriteFile(base / "report.csv", report);

  std::ostringstream costs;
  costs << "method,round,bytes,flops,phase\n";
  for (const UnlearningRun& run : r.runs) run.ledger.WriteCsv(costs, run.method);
  if (r.nr_freeze) r.nr_freeze->ledger.WriteCsv(costs, r.nr_freeze->method);
  WriteFile(base / "costs.csv", costs.str());

  std::string cka = "comparison,layer,cka,normalized,degenerate\n";
  for (const CkaComparison& c : r.cka) {
    for (std::size_t i = 0; i < c.profile.size(); ++i) {
      cka += c.name + "," + c.profile[i].layer + "," + Num(c.profile[i].cka.value) +
             "," + Num(c.normalized[i]) + "," +
             (c.profile[i].cka.degenerate ? "1" : "0") + "\n";
    }
  }
  WriteFile(base / "cka.csv", cka);

  std::string spectral = "method,alpha,psi\n";
  for (const SpectralReport& s : r.spectral) {
    const double d = static_cast<double>(s.curve.psi.size());
    for (std::size_t i = 0; i < s.curve.psi.size(); ++i) {
      spectral += s.method + "," + Num(static_cast<double>(i + 1) / d) + "," +
                  Num(s.curve.psi[i]) + "\n";
    }
  }
  WriteFile(base / "spectral.csv", spectral);

  nlohmann::ordered_json bound = nlohmann::ordered_json::array();
  for (const BoundReport& b : r.bounds) bound.push_back(BoundJson(b));
  WriteFile(base / "bound.json", bound.dump(2) + "\n");

  if (cfg.analysis.backdoor) {
    std::string bd = "method,success\n";
    for (const BackdoorReport& b : r.backdoor) bd += b.method + "," + Num(b.success) + "\n";
    WriteFile(base / "backdoor.csv", bd);
  }

  WriteFile(base / "config-echo.cfg",
            std::string("# negfu ") + kVersion + ", seed " + std::to_string(r.seed) +
                "\n" + EchoConfig(cfg));
}

void WriteScenarioReport(const ScenarioReport& r, const std::string& dir) {
  fs::create_directories(dir);
  std::string summary = std::string("seed,") + kReportHeader;
  for (const SeedReport& s : r.seeds) {
    WriteSeedReport(r.config, s, (fs::path(dir) / ("seed-" + std::to_string(s.seed))).string());
    for (const MetricsReport& m : s.reports) {
      summary += std::to_string(s.seed) + "," + ReportRow(m);
    }
  }
  WriteFile(fs::path(dir) / "summary.csv", summary);
}

std::vector<ScenarioInfo> ListScenarios(const std::string& dir) {
  std::vector<ScenarioInfo> out;
  if (!fs::is_directory(dir)) throw IoError("no scenario directory " + dir);
  std::vector<fs::path> files;
  for (const fs::directory_entry& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".cfg") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const fs::path& p : files) {
    const RawConfig raw = ReadConfigFile(p.string());
    auto get = [&](const char* key) {
      auto it = raw.find(key);
      return it == raw.end() ? std::string() : it->second.value;
    };
    out.push_back({p.string(), get("experiment.name"), get("experiment.description"),
                   get("experiment.analogue")});
  }
  return out;
}

}  // namespace negfu
