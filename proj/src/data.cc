#include "negfu/data.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "negfu/errors.h"
#include "negfu/rng.h"

namespace negfu {
namespace {

std::vector<std::size_t> Iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

void CheckImages(const Tensor& t, const BackdoorConfig& cfg) {
  if (t.rank() != 4) {
    throw InvalidArgument("backdoor needs image inputs shaped (n, c, h, w)");
  }
  if (cfg.row + 3 > t.dim(2) || cfg.col + 3 > t.dim(3)) {
    throw InvalidArgument("3x3 trigger does not fit inside the image");
  }
}

}  // namespace

Shape Dataset::FeatureShape() const {
  Shape s = inputs.shape();
  s.erase(s.begin());
  return s;
}

Dataset Dataset::Subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.inputs = inputs.Gather(rows);
  out.labels.reserve(rows.size());
  for (std::size_t r : rows) out.labels.push_back(labels.at(r));
  out.class_count = class_count;
  out.generator = generator;
  out.seed = seed;
  return out;
}

std::vector<std::size_t> Dataset::ClassCounts() const {
  std::vector<std::size_t> c(static_cast<std::size_t>(class_count), 0);
  for (int y : labels) ++c.at(static_cast<std::size_t>(y));
  return c;
}

void ValidateDataset(const Dataset& d) {
  if (d.labels.empty()) throw InvalidArgument("dataset is empty");
  if (d.inputs.rank() < 2 || d.inputs.dim(0) != d.labels.size()) {
    throw InvalidArgument("dataset inputs do not match label count");
  }
  for (int y : d.labels) {
    if (y < 0 || y >= d.class_count) {
      throw InvalidArgument("dataset label out of range");
    }
  }
}

Dataset Concat(const Dataset& a, const Dataset& b) {
  if (a.FeatureShape() != b.FeatureShape() || a.class_count != b.class_count) {
    throw ShapeError("cannot concatenate datasets of different shape");
  }
  std::vector<double> data(a.inputs.values());
  data.insert(data.end(), b.inputs.values().begin(), b.inputs.values().end());
  Shape s = a.inputs.shape();
  s[0] += b.size();
  Dataset out = a;
  out.inputs = Tensor(std::move(s), std::move(data));
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

Dataset MakeBlobs(const BlobsParams& p, std::uint64_t seed) {
  if (p.classes < 2 || p.dims < 2 || p.per_class < 1 || !(p.spread > 0.0)) {
    throw InvalidArgument("blobs need classes >= 2, dims >= 2, per_class >= 1, "
                          "spread > 0");
  }
  Rng center_rng = MakeRng(seed, "blobs-centers");
  Rng sample_rng = MakeRng(seed, "blobs-samples");
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto k = static_cast<std::size_t>(p.classes);
  std::vector<double> centers(k * p.dims);
  for (std::size_t c = 0; c < k; ++c) {
    double norm = 0.0;
    for (std::size_t j = 0; j < p.dims; ++j) {
      centers[c * p.dims + j] = normal(center_rng);
      norm += centers[c * p.dims + j] * centers[c * p.dims + j];
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < p.dims; ++j) centers[c * p.dims + j] /= norm;
  }
  const std::size_t n = k * p.per_class;
  std::vector<double> x(n * p.dims);
  Dataset d;
  d.labels.reserve(n);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < p.per_class; ++i) {
      const std::size_t row = c * p.per_class + i;
      for (std::size_t j = 0; j < p.dims; ++j) {
        x[row * p.dims + j] = centers[c * p.dims + j] + p.spread * normal(sample_rng);
      }
      d.labels.push_back(static_cast<int>(c));
    }
  }
  d.inputs = Tensor({n, p.dims}, std::move(x));
  d.class_count = p.classes;
  d.generator = "blobs";
  d.seed = seed;
  return d;
}

Tensor GridTemplate(const GridParams& p, std::uint64_t seed, int cls) {
  if (p.classes < 2 || p.side < 6) {
    throw InvalidArgument("grid images need classes >= 2 and side >= 6");
  }
  Rng rng = MakeRng(seed, "grid-templates");
  std::bernoulli_distribution coin(0.5);
  const std::size_t px = p.side * p.side;
  // Templates must differ in at least `side` pixels from every earlier one.
  std::vector<std::vector<double>> templates;
  while (templates.size() < static_cast<std::size_t>(p.classes)) {
    std::vector<double> t(px);
    for (double& v : t) v = coin(rng) ? 1.0 : 0.0;
    bool distinct = true;
    for (const auto& other : templates) {
      std::size_t diff = 0;
      for (std::size_t i = 0; i < px; ++i) diff += t[i] != other[i];
      if (diff < p.side) distinct = false;
    }
    if (distinct) templates.push_back(std::move(t));
  }
  return Tensor({1, p.side, p.side}, templates.at(static_cast<std::size_t>(cls)));
}

Dataset MakeGridImages(const GridParams& p, std::uint64_t seed) {
  if (p.per_class < 1 || p.noise < 0.0) {
    throw InvalidArgument("grid images need per_class >= 1 and noise >= 0");
  }
  const auto k = static_cast<std::size_t>(p.classes);
  std::vector<Tensor> templates;
  for (int c = 0; c < p.classes; ++c) templates.push_back(GridTemplate(p, seed, c));
  Rng rng = MakeRng(seed, "grid-samples");
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t px = p.side * p.side;
  const std::size_t n = k * p.per_class;
  std::vector<double> x(n * px);
  Dataset d;
  d.labels.reserve(n);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < p.per_class; ++i) {
      const std::size_t row = c * p.per_class + i;
      for (std::size_t j = 0; j < px; ++j) {
        const double eps = p.noise > 0.0 ? p.noise * normal(rng) : 0.0;
        x[row * px + j] = templates[c][j] + eps;
      }
      d.labels.push_back(static_cast<int>(c));
    }
  }
  d.inputs = Tensor({n, 1, p.side, p.side}, std::move(x));
  d.class_count = p.classes;
  d.generator = "grid";
  d.seed = seed;
  return d;
}

TrainTest SplitTrainTest(const Dataset& d, double test_fraction,
                         std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw InvalidArgument("test fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> rows = Iota(d.size());
  Rng rng = MakeRng(seed, "train-test");
  std::shuffle(rows.begin(), rows.end(), rng);
  const auto n_test = static_cast<std::size_t>(
      std::floor(test_fraction * static_cast<double>(d.size())));
  if (n_test == 0 || n_test == d.size()) {
    throw InvalidArgument("train/test split leaves one side empty");
  }
  std::vector<std::size_t> test(rows.begin(), rows.begin() + n_test);
  std::vector<std::size_t> train(rows.begin() + n_test, rows.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {d.Subset(train), d.Subset(test)};
}

std::vector<std::vector<std::size_t>> AssignRows(const Dataset& data,
                                                 std::size_t n,
                                                 const PartitionSpec& spec,
                                                 std::uint64_t seed) {
  if (n == 0) throw InvalidArgument("need at least one client");
  if (n > data.size()) {
    throw InvalidArgument("more clients (" + std::to_string(n) +
                          ") than samples (" + std::to_string(data.size()) + ")");
  }
  std::vector<std::vector<std::size_t>> clients(n);
  Rng rng = MakeRng(seed, "partition");
  if (spec.mode == PartitionMode::kIid) {
    std::vector<std::size_t> rows = Iota(data.size());
    std::shuffle(rows.begin(), rows.end(), rng);
    const std::size_t base = rows.size() / n;
    const std::size_t rem = rows.size() % n;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t take = base + (k < rem ? 1 : 0);
      clients[k].assign(rows.begin() + pos, rows.begin() + pos + take);
      pos += take;
    }
    return clients;
  }
  if (!(spec.beta > 0.0)) throw InvalidArgument("dirichlet beta must be > 0");
  std::gamma_distribution<double> gamma(spec.beta, 1.0);
  for (int c = 0; c < data.class_count; ++c) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data.labels[i] == c) rows.push_back(i);
    }
    if (rows.empty()) continue;
    std::shuffle(rows.begin(), rows.end(), rng);
    std::vector<double> q(n);
    double total = 0.0;
    for (double& v : q) {
      v = gamma(rng);
      total += v;
    }
    if (!(total > 0.0)) {
      // Every gamma draw underflowed; give the class to one client.
      std::fill(q.begin(), q.end(), 0.0);
      q[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)] = 1.0;
      total = 1.0;
    }
    std::size_t start = 0;
    double cum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      cum += q[k] / total;
      std::size_t stop =
          k + 1 == n ? rows.size()
                     : std::min(rows.size(),
                                static_cast<std::size_t>(std::floor(
                                    cum * static_cast<double>(rows.size()))));
      stop = std::max(stop, start);
      clients[k].insert(clients[k].end(), rows.begin() + start,
                        rows.begin() + stop);
      start = stop;
    }
  }
  // Empty clients take one sample from the current largest client.
  for (std::size_t k = 0; k < n; ++k) {
    if (!clients[k].empty()) continue;
    std::size_t largest = 0;
    for (std::size_t j = 1; j < n; ++j) {
      if (clients[j].size() > clients[largest].size()) largest = j;
    }
    clients[k].push_back(clients[largest].back());
    clients[largest].pop_back();
  }
  return clients;
}

FederatedSplit Partition(const Dataset& data, std::size_t n,
                         const PartitionSpec& spec, std::uint64_t seed,
                         Dataset test) {
  ValidateDataset(data);
  if (!(spec.validation_fraction >= 0.0 && spec.validation_fraction < 1.0)) {
    throw InvalidArgument("validation fraction must lie in [0, 1)");
  }
  FederatedSplit split;
  split.spec = spec;
  split.test = std::move(test);
  std::vector<std::vector<std::size_t>> rows = AssignRows(data, n, spec, seed);
  for (std::size_t k = 0; k < n; ++k) {
    ClientShard shard;
    std::vector<std::size_t> own = rows[k];
    Rng rng = MakeRng(seed, "validation-split", {k});
    std::shuffle(own.begin(), own.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::floor(
        spec.validation_fraction * static_cast<double>(own.size())));
    shard.validation_rows.assign(own.begin(), own.begin() + n_val);
    shard.train_rows.assign(own.begin() + n_val, own.end());
    std::sort(shard.validation_rows.begin(), shard.validation_rows.end());
    std::sort(shard.train_rows.begin(), shard.train_rows.end());
    shard.source_rows = shard.train_rows;
    shard.source_rows.insert(shard.source_rows.end(),
                             shard.validation_rows.begin(),
                             shard.validation_rows.end());
    shard.train = data.Subset(shard.train_rows);
    if (!shard.validation_rows.empty()) {
      shard.validation = data.Subset(shard.validation_rows);
    }
    split.clients.push_back(std::move(shard));
  }
  return split;
}

std::vector<std::size_t> ForgetSpec::RequestingClients() const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < forget_rows.size(); ++k) {
    if (!forget_rows[k].empty()) out.push_back(k);
  }
  return out;
}

bool ForgetSpec::IsTarget(std::size_t client) const {
  return client < forget_rows.size() && !forget_rows[client].empty();
}

std::size_t ForgetSpec::ForgetCount() const {
  std::size_t n = 0;
  for (const auto& r : forget_rows) n += r.size();
  return n;
}

std::size_t ForgetSpec::RetainCount() const {
  std::size_t n = 0;
  for (const auto& r : retain_rows) n += r.size();
  return n;
}

std::optional<Dataset> ForgetSpec::ForgetData(const FederatedSplit& s,
                                              std::size_t k) const {
  if (forget_rows.at(k).empty()) return std::nullopt;
  return s.clients.at(k).train.Subset(forget_rows[k]);
}

std::optional<Dataset> ForgetSpec::RetainData(const FederatedSplit& s,
                                              std::size_t k) const {
  if (retain_rows.at(k).empty()) return std::nullopt;
  return s.clients.at(k).train.Subset(retain_rows[k]);
}

namespace {

std::optional<Dataset> Union(const FederatedSplit& s,
                             const std::vector<std::vector<std::size_t>>& rows) {
  std::optional<Dataset> out;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k].empty()) continue;
    Dataset part = s.clients[k].train.Subset(rows[k]);
    out = out ? Concat(*out, part) : std::move(part);
  }
  return out;
}

}  // namespace

std::optional<Dataset> ForgetSpec::AllForget(const FederatedSplit& s) const {
  return Union(s, forget_rows);
}

std::optional<Dataset> ForgetSpec::AllRetain(const FederatedSplit& s) const {
  return Union(s, retain_rows);
}

ForgetSpec BuildForgetSpec(const FederatedSplit& split,
                           const ForgetRequest& request, std::uint64_t seed) {
  const std::size_t n = split.client_count();
  ForgetSpec f;
  f.request = request;
  f.forget_rows.resize(n);
  f.retain_rows.resize(n);
  switch (request.mode) {
    case ForgetMode::kClientWise:
      if (request.clients.empty()) {
        throw InvalidArgument("client-wise forgetting needs target clients");
      }
      for (std::size_t k : request.clients) {
        if (k >= n) {
          throw InvalidArgument("target client " + std::to_string(k) +
                                " does not exist");
        }
      }
      break;
    case ForgetMode::kClassWise:
      if (split.clients.empty() || request.forget_class < 0 ||
          request.forget_class >= split.clients[0].train.class_count) {
        throw InvalidArgument("forget class does not exist");
      }
      break;
    case ForgetMode::kInstanceWise:
      if (!(request.ratio > 0.0 && request.ratio < 1.0)) {
        throw InvalidArgument("instance-wise ratio must lie in (0, 1)");
      }
      break;
  }
  for (std::size_t k = 0; k < n; ++k) {
    const Dataset& d = split.clients[k].train;
    std::vector<bool> forget(d.size(), false);
    switch (request.mode) {
      case ForgetMode::kClientWise:
        if (std::find(request.clients.begin(), request.clients.end(), k) !=
            request.clients.end()) {
          std::fill(forget.begin(), forget.end(), true);
        }
        break;
      case ForgetMode::kClassWise:
        for (std::size_t i = 0; i < d.size(); ++i) {
          forget[i] = d.labels[i] == request.forget_class;
        }
        break;
      case ForgetMode::kInstanceWise: {
        std::vector<std::size_t> rows = Iota(d.size());
        Rng rng = MakeRng(seed, "instance-forget", {k});
        std::shuffle(rows.begin(), rows.end(), rng);
        const auto count = static_cast<std::size_t>(
            std::floor(request.ratio * static_cast<double>(d.size())));
        for (std::size_t i = 0; i < count; ++i) forget[rows[i]] = true;
        break;
      }
    }
    for (std::size_t i = 0; i < d.size(); ++i) {
      (forget[i] ? f.forget_rows[k] : f.retain_rows[k]).push_back(i);
    }
  }
  if (f.RetainCount() == 0) {
    throw InvalidArgument("forget request leaves no retained data");
  }
  return f;
}

std::optional<Dataset> RetainValidation(const FederatedSplit& split,
                                        const ForgetSpec& forget) {
  std::optional<Dataset> out;
  for (std::size_t k = 0; k < split.client_count(); ++k) {
    const ClientShard& c = split.clients[k];
    if (!c.validation) continue;
    if (forget.request.mode == ForgetMode::kClientWise && forget.IsTarget(k)) {
      continue;
    }
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < c.validation->size(); ++i) {
      if (forget.request.mode == ForgetMode::kClassWise &&
          c.validation->labels[i] == forget.request.forget_class) {
        continue;
      }
      rows.push_back(i);
    }
    if (rows.empty()) continue;
    Dataset part = c.validation->Subset(rows);
    out = out ? Concat(*out, part) : std::move(part);
  }
  return out;
}

std::array<double, 9> TriggerPattern(const BackdoorConfig& cfg) {
  std::array<double, 9> p{};
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      p[r * 3 + c] = (r + c) % 2 == 0 ? cfg.high : cfg.low;
    }
  }
  return p;
}

void StampTrigger(Tensor& images, const BackdoorConfig& cfg) {
  CheckImages(images, cfg);
  const std::array<double, 9> pattern = TriggerPattern(cfg);
  const std::size_t n = images.dim(0), ch = images.dim(1);
  const std::size_t h = images.dim(2), w = images.dim(3);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      double* plane = images.data().data() + (b * ch + c) * h * w;
      for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t q = 0; q < 3; ++q) {
          plane[(cfg.row + r) * w + cfg.col + q] = pattern[r * 3 + q];
        }
      }
    }
  }
}

PoisonResult Poison(const Dataset& data, const BackdoorConfig& cfg,
                    std::uint64_t seed) {
  CheckImages(data.inputs, cfg);
  if (!(cfg.fraction > 0.0 && cfg.fraction <= 1.0)) {
    throw InvalidArgument("poison fraction must lie in (0, 1]");
  }
  if (cfg.target < 0 || cfg.target >= data.class_count) {
    throw InvalidArgument("backdoor target class does not exist");
  }
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] != cfg.target) eligible.push_back(i);
  }
  if (eligible.empty()) throw InvalidArgument("no samples eligible for poisoning");
  const auto count = static_cast<std::size_t>(
      std::floor(cfg.fraction * static_cast<double>(eligible.size())));
  Rng rng = MakeRng(seed, "poison");
  std::shuffle(eligible.begin(), eligible.end(), rng);
  PoisonResult out;
  out.poisoned.assign(eligible.begin(), eligible.begin() + count);
  std::sort(out.poisoned.begin(), out.poisoned.end());
  out.data = data;
  if (count == 0) return out;
  Tensor stamped = data.inputs.Gather(out.poisoned);
  StampTrigger(stamped, cfg);
  const std::size_t row = data.inputs.RowSize();
  for (std::size_t i = 0; i < count; ++i) {
    std::copy_n(stamped.data().begin() + i * row, row,
                out.data.inputs.data().begin() + out.poisoned[i] * row);
    out.data.labels[out.poisoned[i]] = cfg.target;
  }
  return out;
}

double BackdoorSuccessRate(const NetworkSpec& spec, const ParameterTree& params,
                           const Dataset& clean_test, const BackdoorConfig& cfg) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < clean_test.size(); ++i) {
    if (clean_test.labels[i] != cfg.target) rows.push_back(i);
  }
  if (rows.empty()) {
    throw InvalidArgument("no non-target test samples for backdoor evaluation");
  }
  Tensor images = clean_test.inputs.Gather(rows);
  StampTrigger(images, cfg);
  const std::vector<int> pred = Predict(spec, params, images);
  const auto hits = std::count(pred.begin(), pred.end(), cfg.target);
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

}  // namespace negfu
