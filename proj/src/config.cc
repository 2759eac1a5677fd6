#include "negfu/config.h"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "negfu/errors.h"

namespace negfu {
namespace {

std::string Trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string Lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::string> SplitList(std::string_view s, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t p = s.find(sep, start);
    const std::size_t end = p == std::string_view::npos ? s.size() : p;
    std::string item = Trim(s.substr(start, end - start));
    if (!item.empty()) out.push_back(std::move(item));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

bool ValidName(std::string_view s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
  });
}

std::string FormatDouble(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string JoinStrings(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += items[i];
  }
  return out;
}

// Consumes keys from a RawConfig, converting values and tracking which keys
// were recognized.
class Reader {
 public:
  explicit Reader(const RawConfig& raw) : raw_(raw) {}

  const ConfigEntry* Take(const std::string& key) {
    auto it = raw_.find(key);
    if (it == raw_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }

  void String(const std::string& key, std::string& out) {
    if (const ConfigEntry* e = Take(key)) out = e->value;
  }

  void Double(const std::string& key, double& out) {
    const ConfigEntry* e = Take(key);
    if (!e) return;
    const std::string& v = e->value;
    double d = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), d);
    if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(d)) {
      throw ConfigError(key, "expected a finite number, got '" + v + "'");
    }
    out = d;
  }

  template <typename T>
  void Unsigned(const std::string& key, T& out) {
    const ConfigEntry* e = Take(key);
    if (e) out = static_cast<T>(ParseUnsigned(key, e->value));
  }

  void Int(const std::string& key, int& out) {
    const ConfigEntry* e = Take(key);
    if (!e) return;
    const std::string& v = e->value;
    int i = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), i);
    if (ec != std::errc() || p != v.data() + v.size()) {
      throw ConfigError(key, "expected an integer, got '" + v + "'");
    }
    out = i;
  }

  void Bool(const std::string& key, bool& out) {
    const ConfigEntry* e = Take(key);
    if (!e) return;
    const std::string v = Lower(e->value);
    if (v == "true") {
      out = true;
    } else if (v == "false") {
      out = false;
    } else {
      throw ConfigError(key, "expected true or false, got '" + e->value + "'");
    }
  }

  void List(const std::string& key, std::vector<std::string>& out) {
    if (const ConfigEntry* e = Take(key)) out = SplitList(e->value);
  }

  void CheckAllUsed() const {
    for (const auto& [key, entry] : raw_) {
      if (!used_.count(key)) {
        throw ConfigError(key, "unknown key (line " + std::to_string(entry.line) + ")");
      }
    }
  }

  static std::uint64_t ParseUnsigned(const std::string& key, const std::string& v) {
    std::uint64_t u = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), u);
    if (ec != std::errc() || p != v.data() + v.size()) {
      throw ConfigError(key, "expected a nonnegative integer, got '" + v + "'");
    }
    return u;
  }

 private:
  const RawConfig& raw_;
  std::set<std::string> used_;
};

std::string GeneratorName(Generator g) {
  return g == Generator::kBlobs ? "blobs" : "grid";
}

std::string PartitionName(PartitionMode m) {
  return m == PartitionMode::kIid ? "iid" : "dirichlet";
}

std::string ForgetName(ForgetMode m) {
  switch (m) {
    case ForgetMode::kClientWise: return "client";
    case ForgetMode::kClassWise: return "class";
    case ForgetMode::kInstanceWise: return "instance";
  }
  return "?";
}

std::string StrategyName(const Strategy& s) {
  std::string out(ToString(s.kind));
  if (s.kind == StrategyKind::kPerturb) {
    out += ":" + std::string(ToString(s.perturbation.kind));
  }
  return out;
}

NetworkSpec DefaultModel(const ExperimentConfig& c) {
  LayerSpec fc1{"fc1", LayerKind::kDense, 64, 0, Activation::kRelu, true};
  LayerSpec fc2{"fc2", LayerKind::kDense, 64, 0, Activation::kRelu, true};
  const int classes = c.generator == Generator::kBlobs ? c.blobs.classes
                                                       : c.grid.classes;
  LayerSpec out{"out", LayerKind::kDense,
                static_cast<std::size_t>(std::max(classes, 1)), 0,
                Activation::kIdentity, true};
  NetworkSpec spec;
  spec.layers = {fc1, fc2, out};
  return spec;
}

Shape InputShape(const ExperimentConfig& c) {
  if (c.generator == Generator::kBlobs) return {c.blobs.dims};
  return {1, c.grid.side, c.grid.side};
}

}  // namespace

RawConfig ParseConfigText(const std::string& text) {
  RawConfig raw;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string t = Trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::string where = "line " + std::to_string(number);
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where, "unterminated section header");
      section = Trim(std::string_view(t).substr(1, t.size() - 2));
      if (!ValidName(section)) throw ConfigError(where, "bad section name '" + section + "'");
      continue;
    }
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where, "expected 'key = value'");
    const std::string key = Trim(std::string_view(t).substr(0, eq));
    if (!ValidName(key)) throw ConfigError(where, "bad key '" + key + "'");
    const std::string full = section.empty() ? key : section + "." + key;
    if (raw.count(full)) throw ConfigError(full, "duplicate key (" + where + ")");
    raw[full] = ConfigEntry{Trim(std::string_view(t).substr(eq + 1)), number};
  }
  return raw;
}

RawConfig ReadConfigFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ParseConfigText(ss.str());
}

std::vector<LayerSpec> ParseLayers(const std::string& text) {
  std::vector<LayerSpec> layers;
  for (const std::string& item : SplitList(text)) {
    std::vector<std::string> parts = SplitList(item, ':');
    if (parts.size() < 2) {
      throw ConfigError("model.layers", "layer '" + item + "' needs name:kind");
    }
    LayerSpec l;
    l.name = parts[0];
    if (!ValidName(l.name)) {
      throw ConfigError("model.layers", "bad layer name '" + l.name + "'");
    }
    const std::optional<LayerKind> kind = ParseLayerKind(Lower(parts[1]));
    if (!kind) throw ConfigError("model.layers", "unknown layer kind '" + parts[1] + "'");
    l.kind = *kind;
    std::vector<std::string> args(parts.begin() + 2, parts.end());
    if (!args.empty()) {
      if (const std::optional<Activation> a = ParseActivation(Lower(args.back()))) {
        l.activation = *a;
        args.pop_back();
      }
    }
    const std::size_t want = l.kind == LayerKind::kDense    ? 1
                             : l.kind == LayerKind::kConv2d ? 2
                                                            : 0;
    if (args.size() != want) {
      throw ConfigError("model.layers", "layer '" + item + "' expects " +
                                            std::to_string(want) +
                                            " size argument(s)");
    }
    if (want >= 1) l.units = Reader::ParseUnsigned("model.layers", args[0]);
    if (want == 2) l.kernel = Reader::ParseUnsigned("model.layers", args[1]);
    layers.push_back(std::move(l));
  }
  if (layers.empty()) throw ConfigError("model.layers", "no layers");
  return layers;
}

std::string FormatLayers(const std::vector<LayerSpec>& layers) {
  std::vector<std::string> items;
  for (const LayerSpec& l : layers) {
    std::string s = l.name + ":" + std::string(ToString(l.kind));
    if (l.kind == LayerKind::kDense) s += ":" + std::to_string(l.units);
    if (l.kind == LayerKind::kConv2d) {
      s += ":" + std::to_string(l.units) + ":" + std::to_string(l.kernel);
    }
    s += ":" + std::string(ToString(l.activation));
    items.push_back(std::move(s));
  }
  return JoinStrings(items);
}

ExperimentConfig BuildExperimentConfig(const RawConfig& raw) {
  Reader r(raw);
  ExperimentConfig c;

  const ConfigEntry* schema = r.Take("schema");
  if (!schema) throw ConfigError("schema", "missing; this build reads schema = 1");
  if (schema->value != std::to_string(kConfigSchema)) {
    throw ConfigError("schema", "unsupported version '" + schema->value + "'");
  }

  r.String("experiment.name", c.name);
  r.String("experiment.description", c.description);
  r.String("experiment.analogue", c.analogue);
  r.String("experiment.output", c.output);
  std::vector<std::string> seeds;
  r.List("experiment.seeds", seeds);
  if (!seeds.empty()) {
    c.seeds.clear();
    for (const std::string& s : seeds) {
      c.seeds.push_back(Reader::ParseUnsigned("experiment.seeds", s));
    }
  }

  std::string generator = "blobs";
  r.String("data.generator", generator);
  if (generator == "blobs") {
    c.generator = Generator::kBlobs;
  } else if (generator == "grid") {
    c.generator = Generator::kGrid;
  } else {
    throw ConfigError("data.generator", "expected blobs or grid, got '" + generator + "'");
  }
  int classes = 4;
  r.Int("data.classes", classes);
  c.blobs.classes = c.grid.classes = classes;
  std::size_t per_class = 100;
  r.Unsigned("data.per_class", per_class);
  c.blobs.per_class = c.grid.per_class = per_class;
  r.Unsigned("data.dims", c.blobs.dims);
  r.Double("data.spread", c.blobs.spread);
  r.Unsigned("data.side", c.grid.side);
  r.Double("data.noise", c.grid.noise);
  r.Double("data.test_fraction", c.test_fraction);

  r.Unsigned("partition.clients", c.clients);
  std::string mode = "iid";
  r.String("partition.mode", mode);
  if (mode == "iid") {
    c.partition.mode = PartitionMode::kIid;
  } else if (mode == "dirichlet") {
    c.partition.mode = PartitionMode::kDirichlet;
  } else {
    throw ConfigError("partition.mode", "expected iid or dirichlet, got '" + mode + "'");
  }
  r.Double("partition.beta", c.partition.beta);
  r.Double("partition.validation_fraction", c.partition.validation_fraction);

  std::string forget = "client";
  r.String("forget.mode", forget);
  if (forget == "client") {
    c.forget.mode = ForgetMode::kClientWise;
  } else if (forget == "class") {
    c.forget.mode = ForgetMode::kClassWise;
  } else if (forget == "instance") {
    c.forget.mode = ForgetMode::kInstanceWise;
  } else {
    throw ConfigError("forget.mode", "expected client, class or instance, got '" + forget + "'");
  }
  std::vector<std::string> targets;
  r.List("forget.clients", targets);
  if (raw.count("forget.clients")) {
    c.forget.clients.clear();
    for (const std::string& t : targets) {
      c.forget.clients.push_back(Reader::ParseUnsigned("forget.clients", t));
    }
  }
  r.Int("forget.class", c.forget.forget_class);
  r.Double("forget.ratio", c.forget.ratio);

  c.model = DefaultModel(c);
  if (const ConfigEntry* e = r.Take("model.layers")) c.model.layers = ParseLayers(e->value);
  c.model.input_shape = InputShape(c);

  r.Unsigned("federation.local_epochs", c.federation.local_epochs);
  r.Unsigned("federation.batch_size", c.federation.batch_size);
  r.Double("federation.learning_rate", c.federation.sgd.learning_rate);
  r.Double("federation.momentum", c.federation.sgd.momentum);
  r.Double("federation.weight_decay", c.federation.sgd.weight_decay);
  r.Unsigned("federation.threads", c.federation.threads);
  r.Unsigned("federation.rounds", c.training.max_rounds);
  r.Unsigned("federation.patience", c.training.patience);
  r.Double("federation.min_delta", c.training.min_delta);

  std::vector<std::string> strategies{"retrain", "not", "ft"};
  r.List("unlearning.strategies", strategies);
  std::vector<std::string> negate;
  r.List("unlearning.negate_layers", negate);
  std::size_t ascent_rounds = 1;
  r.Unsigned("unlearning.ascent_rounds", ascent_rounds);
  Perturbation perturbation;
  r.List("unlearning.perturb_layers", perturbation.layers);
  r.Double("unlearning.perturb_sigma", perturbation.sigma);
  r.Double("unlearning.perturb_factor", perturbation.factor);
  r.Double("unlearning.epsilon", c.recovery.epsilon);
  r.Unsigned("unlearning.window", c.recovery.window);
  r.Unsigned("unlearning.max_rounds", c.recovery.max_rounds);
  for (const std::string& name : strategies) {
    const std::string lower = Lower(name);
    const std::size_t colon = lower.find(':');
    const std::string head = lower.substr(0, colon);
    const std::optional<StrategyKind> kind = ParseStrategyKind(head);
    if (!kind) throw ConfigError("unlearning.strategies", "unknown strategy '" + name + "'");
    Strategy s;
    s.kind = *kind;
    s.ascent_rounds = ascent_rounds;
    if (s.kind == StrategyKind::kNoT) s.negate_layers = negate;
    if (s.kind == StrategyKind::kPerturb) {
      if (colon == std::string::npos) {
        throw ConfigError("unlearning.strategies", "perturb needs a kind, e.g. perturb:reinit");
      }
      const std::optional<PerturbationKind> pk =
          ParsePerturbationKind(lower.substr(colon + 1));
      if (!pk) {
        throw ConfigError("unlearning.strategies", "unknown perturbation in '" + name + "'");
      }
      s.perturbation = perturbation;
      s.perturbation.kind = *pk;
    } else if (colon != std::string::npos) {
      throw ConfigError("unlearning.strategies", "only perturb takes a ':' suffix: '" + name + "'");
    }
    c.strategies.push_back(std::move(s));
  }

  r.Bool("analysis.cka", c.analysis.cka);
  r.Bool("analysis.spectral", c.analysis.spectral);
  r.Bool("analysis.bound", c.analysis.bound);
  r.Bool("analysis.backdoor", c.analysis.backdoor);
  r.Bool("analysis.nr_freeze", c.analysis.nr_freeze);
  r.Unsigned("analysis.probe_size", c.probe_size);
  r.Unsigned("analysis.spectral_batch", c.spectral.batch_size);
  r.Unsigned("analysis.spectral_draws", c.spectral.draws);
  r.Unsigned("analysis.spectral_subset", c.spectral.subset_size);
  r.Unsigned("analysis.spectral_subsets", c.spectral.subsets);
  r.Double("analysis.bound_epsilon", c.bound_epsilon);
  r.Double("analysis.bound_stochastic", c.bound_stochastic);
  r.List("analysis.nr_freeze_layers", c.nr_freeze_layers);
  r.Unsigned("analysis.nr_freeze_rounds", c.nr_freeze_rounds);

  r.Unsigned("backdoor.client", c.backdoor_client);
  r.Double("backdoor.fraction", c.backdoor.fraction);
  r.Int("backdoor.target", c.backdoor.target);
  r.Double("backdoor.high", c.backdoor.high);
  r.Double("backdoor.low", c.backdoor.low);
  r.Unsigned("backdoor.row", c.backdoor.row);
  r.Unsigned("backdoor.col", c.backdoor.col);

  r.CheckAllUsed();
  ValidateExperimentConfig(c);
  return c;
}

ExperimentConfig LoadExperimentConfig(const std::string& path) {
  return BuildExperimentConfig(ReadConfigFile(path));
}

void ValidateExperimentConfig(const ExperimentConfig& c) {
  if (!ValidName(c.name)) throw ConfigError("experiment.name", "must be [A-Za-z0-9_-]+");
  if (c.seeds.empty()) throw ConfigError("experiment.seeds", "no seeds");
  if (c.output.empty()) throw ConfigError("experiment.output", "empty path");

  const int classes = c.generator == Generator::kBlobs ? c.blobs.classes : c.grid.classes;
  if (classes < 2) throw ConfigError("data.classes", "need at least 2 classes");
  if (c.blobs.per_class == 0) throw ConfigError("data.per_class", "must be positive");
  if (c.generator == Generator::kBlobs) {
    if (c.blobs.dims == 0) throw ConfigError("data.dims", "must be positive");
    if (!(c.blobs.spread > 0.0)) throw ConfigError("data.spread", "must be positive");
  } else {
    if (c.grid.side < 3) throw ConfigError("data.side", "must be at least 3");
    if (!(c.grid.noise >= 0.0)) throw ConfigError("data.noise", "must be nonnegative");
  }
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) {
    throw ConfigError("data.test_fraction", "must lie in (0, 1)");
  }

  if (c.clients == 0) throw ConfigError("partition.clients", "must be positive");
  const std::size_t train_rows = static_cast<std::size_t>(
      static_cast<double>(c.blobs.per_class * static_cast<std::size_t>(classes)) *
      (1.0 - c.test_fraction));
  if (c.clients > train_rows) {
    throw ConfigError("partition.clients", "more clients than training samples");
  }
  if (c.partition.mode == PartitionMode::kDirichlet && !(c.partition.beta > 0.0)) {
    throw ConfigError("partition.beta", "must be positive");
  }
  if (!(c.partition.validation_fraction >= 0.0 && c.partition.validation_fraction < 1.0)) {
    throw ConfigError("partition.validation_fraction", "must lie in [0, 1)");
  }

  switch (c.forget.mode) {
    case ForgetMode::kClientWise: {
      if (c.forget.clients.empty()) throw ConfigError("forget.clients", "no target client");
      std::set<std::size_t> seen;
      for (std::size_t k : c.forget.clients) {
        if (k >= c.clients) {
          throw ConfigError("forget.clients", "client " + std::to_string(k) + " does not exist");
        }
        if (!seen.insert(k).second) {
          throw ConfigError("forget.clients", "duplicate client " + std::to_string(k));
        }
      }
      if (seen.size() == c.clients) {
        throw ConfigError("forget.clients", "every client forgets; retain set would be empty");
      }
      break;
    }
    case ForgetMode::kClassWise:
      if (c.forget.forget_class < 0 || c.forget.forget_class >= classes) {
        throw ConfigError("forget.class", "no such class");
      }
      break;
    case ForgetMode::kInstanceWise:
      if (!(c.forget.ratio > 0.0 && c.forget.ratio < 1.0)) {
        throw ConfigError("forget.ratio", "must lie in (0, 1); 1 leaves an empty retain set");
      }
      break;
  }

  NetworkSpec spec = c.model;
  std::set<std::string> names;
  for (const LayerSpec& l : spec.layers) {
    if (!names.insert(l.name).second) {
      throw ConfigError("model.layers", "duplicate layer name '" + l.name + "'");
    }
    if (l.kind != LayerKind::kLayerNorm && l.units == 0) {
      throw ConfigError("model.layers", "layer '" + l.name + "' has zero units");
    }
  }
  try {
    spec.OutputShapes();
  } catch (const Error& e) {
    throw ConfigError("model.layers", e.what());
  }
  if (spec.ClassCount() != static_cast<std::size_t>(classes)) {
    throw ConfigError("model.layers", "last layer must produce " +
                                          std::to_string(classes) + " logits");
  }
  auto check_layers = [&](const std::string& key, const std::vector<std::string>& ls) {
    for (const std::string& n : ls) {
      if (!names.count(n)) throw ConfigError(key, "no layer named '" + n + "'");
    }
  };

  try {
    ValidateSgdConfig(c.federation.sgd);
  } catch (const Error& e) {
    throw ConfigError("federation", e.what());
  }
  if (c.federation.local_epochs == 0) throw ConfigError("federation.local_epochs", "must be positive");
  if (c.federation.batch_size == 0) throw ConfigError("federation.batch_size", "must be positive");
  if (c.federation.threads == 0) throw ConfigError("federation.threads", "must be positive");

  if (c.strategies.empty()) throw ConfigError("unlearning.strategies", "no strategies");
  bool has_retrain = false;
  std::set<std::string> labels;
  for (const Strategy& s : c.strategies) {
    if (!labels.insert(s.Label()).second) {
      throw ConfigError("unlearning.strategies", "duplicate strategy " + s.Label());
    }
    has_retrain |= s.kind == StrategyKind::kRetrain;
    if (s.kind == StrategyKind::kNoT) check_layers("unlearning.negate_layers", s.negate_layers);
    if (s.kind == StrategyKind::kPerturb) {
      if (s.perturbation.layers.empty()) {
        throw ConfigError("unlearning.perturb_layers", "perturb strategies need target layers");
      }
      check_layers("unlearning.perturb_layers", s.perturbation.layers);
      if (s.perturbation.kind == PerturbationKind::kKernelFlip) {
        for (const std::string& n : s.perturbation.layers) {
          if (spec.layers[spec.IndexOf(n)].kind != LayerKind::kConv2d) {
            throw ConfigError("unlearning.perturb_layers", "kernel_flip needs conv layers, '" + n + "' is not");
          }
        }
      }
      if (!(s.perturbation.sigma >= 0.0)) {
        throw ConfigError("unlearning.perturb_sigma", "must be nonnegative");
      }
    }
    if (s.kind == StrategyKind::kGradientAscent && s.ascent_rounds == 0) {
      throw ConfigError("unlearning.ascent_rounds", "must be positive");
    }
  }
  auto has = [&](StrategyKind k) {
    return std::any_of(c.strategies.begin(), c.strategies.end(),
                       [k](const Strategy& s) { return s.kind == k; });
  };
  if ((c.analysis.cka || c.analysis.spectral) &&
      !(has(StrategyKind::kNoT) && has(StrategyKind::kFineTune))) {
    throw ConfigError("unlearning.strategies", "cka and spectral analyses compare not, ft and retrain");
  }
  if (!has_retrain) {
    throw ConfigError("unlearning.strategies", "must include retrain, the reference for gaps and the stop rule");
  }
  if (!(c.recovery.epsilon >= 0.0)) throw ConfigError("unlearning.epsilon", "must be nonnegative");
  if (c.recovery.window == 0) throw ConfigError("unlearning.window", "must be positive");

  if (c.probe_size < 2) throw ConfigError("analysis.probe_size", "must be at least 2");
  if (c.spectral.batch_size == 0) throw ConfigError("analysis.spectral_batch", "must be positive");
  if (c.spectral.draws < 2) throw ConfigError("analysis.spectral_draws", "must be at least 2");
  if (c.spectral.subset_size == 0 || c.spectral.subset_size > 256) {
    throw ConfigError("analysis.spectral_subset", "must lie in [1, 256]");
  }
  if (c.spectral.subsets == 0) throw ConfigError("analysis.spectral_subsets", "must be positive");
  if (!(c.bound_epsilon >= 0.0 && c.bound_epsilon < 1.0)) {
    throw ConfigError("analysis.bound_epsilon", "must lie in [0, 1)");
  }
  if (!(c.bound_stochastic >= 0.0)) throw ConfigError("analysis.bound_stochastic", "must be nonnegative");
  check_layers("analysis.nr_freeze_layers", c.nr_freeze_layers);
  if (c.analysis.backdoor) {
    if (c.forget.mode != ForgetMode::kClientWise ||
        std::find(c.forget.clients.begin(), c.forget.clients.end(),
                  c.backdoor_client) == c.forget.clients.end()) {
      throw ConfigError("backdoor.client", "the poisoned client must be a client-wise forget target");
    }
    if (c.generator != Generator::kGrid) {
      throw ConfigError("analysis.backdoor", "the trigger needs image data (data.generator = grid)");
    }
    if (c.backdoor_client >= c.clients) throw ConfigError("backdoor.client", "no such client");
    if (!(c.backdoor.fraction > 0.0 && c.backdoor.fraction <= 1.0)) {
      throw ConfigError("backdoor.fraction", "must lie in (0, 1]");
    }
    if (c.backdoor.target < 0 || c.backdoor.target >= classes) {
      throw ConfigError("backdoor.target", "no such class");
    }
    if (c.backdoor.row + 3 > c.grid.side || c.backdoor.col + 3 > c.grid.side) {
      throw ConfigError("backdoor.row", "trigger does not fit in the image");
    }
  }
}

std::string EchoConfig(const ExperimentConfig& c) {
  std::ostringstream o;
  auto seeds = [&] {
    std::vector<std::string> s;
    for (std::uint64_t v : c.seeds) s.push_back(std::to_string(v));
    return JoinStrings(s);
  };
  auto b = [](bool v) { return v ? "true" : "false"; };
  const int classes = c.generator == Generator::kBlobs ? c.blobs.classes : c.grid.classes;
  o << "schema = " << kConfigSchema << "\n\n[experiment]\n"
    << "name = " << c.name << "\n"
    << "description = " << c.description << "\n"
    << "analogue = " << c.analogue << "\n"
    << "seeds = " << seeds() << "\n\n[data]\n"
    << "generator = " << GeneratorName(c.generator) << "\n"
    << "classes = " << classes << "\n"
    << "per_class = " << c.blobs.per_class << "\n"
    << "dims = " << c.blobs.dims << "\n"
    << "spread = " << FormatDouble(c.blobs.spread) << "\n"
    << "side = " << c.grid.side << "\n"
    << "noise = " << FormatDouble(c.grid.noise) << "\n"
    << "test_fraction = " << FormatDouble(c.test_fraction) << "\n\n[partition]\n"
    << "clients = " << c.clients << "\n"
    << "mode = " << PartitionName(c.partition.mode) << "\n"
    << "beta = " << FormatDouble(c.partition.beta) << "\n"
    << "validation_fraction = " << FormatDouble(c.partition.validation_fraction)
    << "\n\n[forget]\n"
    << "mode = " << ForgetName(c.forget.mode) << "\n";
  std::vector<std::string> targets;
  for (std::size_t k : c.forget.clients) targets.push_back(std::to_string(k));
  o << "clients = " << JoinStrings(targets) << "\n"
    << "class = " << c.forget.forget_class << "\n"
    << "ratio = " << FormatDouble(c.forget.ratio) << "\n\n[model]\n"
    << "layers = " << FormatLayers(c.model.layers) << "\n\n[federation]\n"
    << "local_epochs = " << c.federation.local_epochs << "\n"
    << "batch_size = " << c.federation.batch_size << "\n"
    << "learning_rate = " << FormatDouble(c.federation.sgd.learning_rate) << "\n"
    << "momentum = " << FormatDouble(c.federation.sgd.momentum) << "\n"
    << "weight_decay = " << FormatDouble(c.federation.sgd.weight_decay) << "\n"
    << "rounds = " << c.training.max_rounds << "\n"
    << "patience = " << c.training.patience << "\n"
    << "min_delta = " << FormatDouble(c.training.min_delta) << "\n\n[unlearning]\n";
  std::vector<std::string> names;
  std::vector<std::string> negate;
  Perturbation perturbation;
  std::size_t ascent_rounds = 1;
  for (const Strategy& s : c.strategies) {
    names.push_back(StrategyName(s));
    if (s.kind == StrategyKind::kNoT) negate = s.negate_layers;
    if (s.kind == StrategyKind::kPerturb) perturbation = s.perturbation;
    ascent_rounds = s.ascent_rounds;
  }
  o << "strategies = " << JoinStrings(names) << "\n"
    << "negate_layers = " << JoinStrings(negate) << "\n"
    << "ascent_rounds = " << ascent_rounds << "\n"
    << "perturb_layers = " << JoinStrings(perturbation.layers) << "\n"
    << "perturb_sigma = " << FormatDouble(perturbation.sigma) << "\n"
    << "perturb_factor = " << FormatDouble(perturbation.factor) << "\n"
    << "epsilon = " << FormatDouble(c.recovery.epsilon) << "\n"
    << "window = " << c.recovery.window << "\n"
    << "max_rounds = " << c.recovery.max_rounds << "\n\n[analysis]\n"
    << "cka = " << b(c.analysis.cka) << "\n"
    << "spectral = " << b(c.analysis.spectral) << "\n"
    << "bound = " << b(c.analysis.bound) << "\n"
    << "backdoor = " << b(c.analysis.backdoor) << "\n"
    << "nr_freeze = " << b(c.analysis.nr_freeze) << "\n"
    << "probe_size = " << c.probe_size << "\n"
    << "spectral_batch = " << c.spectral.batch_size << "\n"
    << "spectral_draws = " << c.spectral.draws << "\n"
    << "spectral_subset = " << c.spectral.subset_size << "\n"
    << "spectral_subsets = " << c.spectral.subsets << "\n"
    << "bound_epsilon = " << FormatDouble(c.bound_epsilon) << "\n"
    << "bound_stochastic = " << FormatDouble(c.bound_stochastic) << "\n"
    << "nr_freeze_layers = " << JoinStrings(c.nr_freeze_layers) << "\n"
    << "nr_freeze_rounds = " << c.nr_freeze_rounds << "\n\n[backdoor]\n"
    << "client = " << c.backdoor_client << "\n"
    << "fraction = " << FormatDouble(c.backdoor.fraction) << "\n"
    << "target = " << c.backdoor.target << "\n"
    << "high = " << FormatDouble(c.backdoor.high) << "\n"
    << "low = " << FormatDouble(c.backdoor.low) << "\n"
    << "row = " << c.backdoor.row << "\n"
    << "col = " << c.backdoor.col << "\n";
  return o.str();
}

}  // namespace negfu
