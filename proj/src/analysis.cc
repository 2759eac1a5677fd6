#include "negfu/analysis.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "negfu/errors.h"
#include "negfu/rng.h"

namespace negfu {
namespace {

double Accuracy(const NetworkSpec& spec, const ParameterTree& params,
                const Dataset& d) {
  return EvaluateLossAccuracy(spec, params, d.inputs, d.labels).accuracy;
}

std::vector<double> Diff(const std::vector<double>& a,
                         const std::vector<double>& b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return d;
}

double Norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Rows of a tensor as an n x p matrix (trailing dimensions flattened), with
// every column centered.
std::vector<double> CenteredColumns(const Tensor& t, std::size_t& n,
                                    std::size_t& p) {
  n = t.dim(0);
  p = t.RowSize();
  std::vector<double> m(t.values());
  for (std::size_t j = 0; j < p; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += m[i * p + j];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) m[i * p + j] -= mean;
  }
  return m;
}

std::vector<double> Gram(const std::vector<double>& m, std::size_t n,
                         std::size_t p) {
  std::vector<double> k(n * n, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a; b < n; ++b) {
      double s = 0.0;
      for (std::size_t j = 0; j < p; ++j) s += m[a * p + j] * m[b * p + j];
      k[a * n + b] = s;
      k[b * n + a] = s;
    }
  }
  return k;
}

double FrobeniusDot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

MetricsReport Evaluate(const NetworkSpec& spec, const ParameterTree& params,
                       const FederatedSplit& split, const ForgetSpec& forget) {
  MetricsReport r;
  const std::optional<Dataset> retain = forget.AllRetain(split);
  if (!retain) throw InvalidArgument("retain set is empty");
  r.retain_acc = Accuracy(spec, params, *retain);
  if (const std::optional<Dataset> f = forget.AllForget(split)) {
    r.forget_acc = Accuracy(spec, params, *f);
  }
  r.test_acc = Accuracy(spec, params, split.test);
  return r;
}

double MiaFromLosses(const std::vector<double>& members,
                     const std::vector<double>& non_members) {
  if (members.empty() || non_members.empty()) {
    throw InvalidArgument("membership inference needs both sets nonempty");
  }
  // Candidate thresholds: every observed loss plus one below all of them.
  std::vector<double> thresholds(members);
  thresholds.insert(thresholds.end(), non_members.begin(), non_members.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());
  std::vector<double> m(members), u(non_members);
  std::sort(m.begin(), m.end());
  std::sort(u.begin(), u.end());
  // Threshold below everything: no sample is called a member.
  double best = 0.5;
  for (double t : thresholds) {
    const auto tp = std::upper_bound(m.begin(), m.end(), t) - m.begin();
    const auto fp = std::upper_bound(u.begin(), u.end(), t) - u.begin();
    const double tpr = static_cast<double>(tp) / static_cast<double>(m.size());
    const double tnr =
        1.0 - static_cast<double>(fp) / static_cast<double>(u.size());
    best = std::max(best, 0.5 * (tpr + tnr));
  }
  return 100.0 * best;
}

double MiaScore(const NetworkSpec& spec, const ParameterTree& params,
                const Dataset& members, const Dataset& non_members,
                std::uint64_t seed) {
  const std::size_t n = std::min(members.size(), non_members.size());
  if (n == 0) throw InvalidArgument("membership inference needs both sets nonempty");
  auto sample = [&](const Dataset& d, std::string_view stream) {
    std::vector<std::size_t> rows(d.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    Rng rng = MakeRng(seed, stream);
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(n);
    std::sort(rows.begin(), rows.end());
    const Dataset s = d.Subset(rows);
    return PerSampleLoss(spec, params, s.inputs, s.labels);
  };
  return MiaFromLosses(sample(members, "mia-members"),
                       sample(non_members, "mia-non-members"));
}

double AvgGap(const MetricsReport& r, const MetricsReport& ref) {
  if (!r.forget_acc || !ref.forget_acc || !r.mia || !ref.mia) {
    throw InvalidArgument("average gap needs forget accuracy and MIA on both reports");
  }
  return (std::abs(r.retain_acc - ref.retain_acc) +
          std::abs(*r.forget_acc - *ref.forget_acc) +
          std::abs(r.test_acc - ref.test_acc) + std::abs(*r.mia - *ref.mia)) /
         4.0;
}

double MeanLoss(const NetworkSpec& spec, const ParameterTree& params,
                const Dataset& d) {
  return EvaluateLossAccuracy(spec, params, d.inputs, d.labels).loss;
}

double LossGap(const NetworkSpec& spec, const ParameterTree& params,
               const Dataset& retain, const Dataset& forget) {
  return std::abs(MeanLoss(spec, params, retain) - MeanLoss(spec, params, forget));
}

LossPair NetworkLossPair(const NetworkSpec& spec, const ParameterTree& like,
                         const Dataset& retain, const Dataset& forget) {
  auto tree = [spec, like](const std::vector<double>& flat) {
    ParameterTree t = like;
    t.AssignFlat(flat);
    return t;
  };
  auto loss = [spec, tree](const Dataset& d) {
    return [spec, tree, d](const std::vector<double>& flat) {
      return MeanLoss(spec, tree(flat), d);
    };
  };
  auto grad = [spec, tree](const Dataset& d) {
    return [spec, tree, d](const std::vector<double>& flat) {
      return FullGradient(spec, tree(flat), d.inputs, d.labels).grads.Flatten();
    };
  };
  return {loss(retain), loss(forget), grad(retain), grad(forget)};
}

LossGapTrace UnlearningTimeBound(const LossPair& losses,
                                 const std::vector<std::vector<double>>& checkpoints,
                                 const std::vector<double>& reference,
                                 double epsilon, double stochastic_term) {
  if (checkpoints.empty()) throw InvalidArgument("bound needs theta^0");
  if (!(epsilon >= 0.0 && epsilon < 1.0)) {
    throw InvalidArgument("epsilon must lie in [0, 1)");
  }
  if (!(stochastic_term >= 0.0)) throw InvalidArgument("A must be >= 0");
  LossGapTrace t;
  t.epsilon = epsilon;
  t.stochastic_term = stochastic_term;
  std::vector<std::vector<double>> points(checkpoints);
  points.push_back(reference);
  std::vector<double> retain_loss;
  for (const auto& theta : points) {
    const double lr = losses.retain(theta), lu = losses.forget(theta);
    retain_loss.push_back(lr);
    t.gaps.push_back(std::abs(lr - lu));
    const double sign = lr > lu ? 1.0 : (lr < lu ? -1.0 : 0.0);
    const std::vector<double> g =
        Diff(losses.retain_grad(theta), losses.forget_grad(theta));
    t.grad_norms.push_back(std::abs(sign) * Norm(g));
  }
  t.lipschitz = *std::max_element(t.grad_norms.begin(), t.grad_norms.end());
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      const double dist = Norm(Diff(points[i], points[j]));
      if (dist > 0.0) {
        t.lipschitz =
            std::max(t.lipschitz, std::abs(t.gaps[i] - t.gaps[j]) / dist);
      }
    }
  }
  t.delta_start = t.gaps.front();
  t.delta_reference = t.gaps.back();
  t.loss_decrease = std::abs(retain_loss.front() - retain_loss.back());
  const double slack = (1.0 - epsilon) * (1.0 - epsilon);
  const double diff = t.delta_reference - t.delta_start;
  const double numerator = slack * diff * diff;
  const double denominator =
      t.lipschitz * t.lipschitz * (t.loss_decrease + stochastic_term);
  if (numerator == 0.0) {
    t.t_unlearn = 0.0;
  } else if (denominator == 0.0) {
    t.t_unlearn = INFINITY;
    t.unbounded = true;
  } else {
    t.t_unlearn = numerator / denominator;
  }
  return t;
}

CkaResult LinearCka(const Tensor& x, const Tensor& y) {
  if (x.rank() < 2 || y.rank() < 2 || x.dim(0) != y.dim(0)) {
    throw ShapeError("CKA needs two activation matrices with the same row count");
  }
  if (x.dim(0) < 3) throw InvalidArgument("CKA needs at least 3 samples");
  std::size_t n, p, q;
  const std::vector<double> xc = CenteredColumns(x, n, p);
  const std::vector<double> yc = CenteredColumns(y, n, q);
  const std::vector<double> kx = Gram(xc, n, p), ky = Gram(yc, n, q);
  // ||Y^T X||_F^2 = <XX^T, YY^T>_F and ||X^T X||_F = ||XX^T||_F.
  const double cross = FrobeniusDot(kx, ky);
  const double nx = std::sqrt(FrobeniusDot(kx, kx));
  const double ny = std::sqrt(FrobeniusDot(ky, ky));
  CkaResult r;
  if (nx == 0.0 || ny == 0.0) {
    r.degenerate = true;
    return r;
  }
  r.value = cross / (nx * ny);
  return r;
}

std::vector<CkaEntry> CkaDepthProfile(const NetworkSpec& spec,
                                      const ParameterTree& a,
                                      const ParameterTree& b,
                                      const Tensor& probe) {
  if (!a.Congruent(b)) throw ShapeError("CKA profile needs congruent models");
  const ForwardTrace ta = TraceForward(spec, a, probe);
  const ForwardTrace tb = TraceForward(spec, b, probe);
  std::vector<CkaEntry> out;
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const bool last = l + 1 == spec.layers.size();
    if (spec.layers[l].activation == Activation::kIdentity && !last) continue;
    out.push_back({spec.layers[l].name,
                   LinearCka(ta.layers[l].post, tb.layers[l].post)});
  }
  return out;
}

std::vector<double> NormalizeCka(const std::vector<CkaEntry>& profile,
                                 const std::vector<CkaEntry>& reference) {
  if (profile.size() != reference.size()) {
    throw ShapeError("CKA profiles differ in length");
  }
  std::vector<double> out;
  for (std::size_t i = 0; i < profile.size(); ++i) {
    const double ref = reference[i].cka.value;
    out.push_back(ref >= 1.0 ? 0.0 : (profile[i].cka.value - ref) / (1.0 - ref));
  }
  return out;
}

EigenResult JacobiEigen(const Tensor& symmetric, double tol) {
  if (symmetric.rank() != 2 || symmetric.dim(0) != symmetric.dim(1)) {
    throw ShapeError("eigensolver needs a square matrix");
  }
  const std::size_t n = symmetric.dim(0);
  if (n > 256) throw InvalidArgument("eigensolver limited to 256 x 256");
  std::vector<double> a(symmetric.values());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (std::abs(a[i * n + j] - a[j * n + i]) >
          1e-12 * (1.0 + std::abs(a[i * n + j]))) {
        throw InvalidArgument("eigensolver needs a symmetric matrix");
      }
    }
  }
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  double total = 0.0;
  for (double x : a) total += x * x;
  EigenResult r;
  for (r.sweeps = 0; r.sweeps < 100; ++r.sweeps) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) off += 2.0 * a[i * n + j] * a[i * n + j];
    }
    if (off <= tol * tol * total || off == 0.0) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0.0) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return a[i * n + i] > a[j * n + j];
  });
  r.vectors = Tensor({n, n});
  for (std::size_t c = 0; c < n; ++c) {
    r.values.push_back(a[order[c] * n + order[c]]);
    for (std::size_t k = 0; k < n; ++k) r.vectors[k * n + c] = v[k * n + order[c]];
  }
  return r;
}

SpectralCurve SpectralFromSamples(const std::vector<std::vector<double>>& samples,
                                  std::size_t subset_size, std::size_t subsets,
                                  std::uint64_t seed) {
  if (samples.size() < 2) throw InvalidArgument("covariance needs at least 2 draws");
  const std::size_t dims = samples[0].size();
  if (subset_size == 0 || subset_size > dims) {
    throw InvalidArgument("subset size must lie in [1, parameter count]");
  }
  if (subsets == 0) throw InvalidArgument("need at least one subset");
  const std::size_t b = samples.size(), k = subset_size;
  SpectralCurve curve;
  curve.psi.assign(k, 0.0);
  for (std::size_t j = 0; j < subsets; ++j) {
    std::vector<std::size_t> coords(dims);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    Rng rng = MakeRng(seed, "spectral-subset", {j});
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(k);
    std::sort(coords.begin(), coords.end());
    std::vector<double> mean(k, 0.0);
    for (const auto& s : samples) {
      for (std::size_t i = 0; i < k; ++i) mean[i] += s[coords[i]];
    }
    for (double& m : mean) m /= static_cast<double>(b);
    Tensor cov({k, k});
    for (const auto& s : samples) {
      for (std::size_t r = 0; r < k; ++r) {
        const double dr = s[coords[r]] - mean[r];
        for (std::size_t c = r; c < k; ++c) {
          cov[r * k + c] += dr * (s[coords[c]] - mean[c]);
        }
      }
    }
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t c = r; c < k; ++c) {
        cov[r * k + c] /= static_cast<double>(b - 1);
        cov[c * k + r] = cov[r * k + c];
      }
    }
    std::vector<double> lambda = JacobiEigen(cov).values;
    // Round-off can leave tiny negative eigenvalues of a PSD matrix.
    for (double& l : lambda) l = std::max(l, 0.0);
    if (j == 0) curve.lambda = lambda;
    const double total = std::accumulate(lambda.begin(), lambda.end(), 0.0);
    if (!(total > 0.0)) {
      curve.degenerate = true;
      for (double& p : curve.psi) p += 1.0;
      continue;
    }
    double cum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      cum += lambda[i];
      curve.psi[i] += i + 1 == k ? 1.0 : std::min(1.0, cum / total);
    }
  }
  for (double& p : curve.psi) p /= static_cast<double>(subsets);
  curve.psi.back() = 1.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (curve.psi[i] >= 0.95) {
      curve.alpha95 = static_cast<double>(i + 1) / static_cast<double>(k);
      break;
    }
  }
  return curve;
}

SpectralCurve SpectralContent(const NetworkSpec& spec,
                              const ParameterTree& params, const Dataset& data,
                              const SpectralParams& p, std::uint64_t seed) {
  if (p.draws < 2) throw InvalidArgument("spectral content needs at least 2 draws");
  if (p.batch_size == 0 || p.batch_size > data.size()) {
    throw InvalidArgument("spectral batch size must lie in [1, dataset size]");
  }
  Rng rng = MakeRng(seed, "spectral-batches");
  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  std::vector<std::vector<double>> grads;
  for (std::size_t d = 0; d < p.draws; ++d) {
    // Partial Fisher-Yates: the first batch_size rows become the minibatch.
    for (std::size_t i = 0; i < p.batch_size; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, rows.size() - 1);
      std::swap(rows[i], rows[pick(rng)]);
    }
    const Dataset batch =
        data.Subset(std::span<const std::size_t>(rows.data(), p.batch_size));
    grads.push_back(Backward(spec, params, batch.inputs, batch.labels).grads.Flatten());
  }
  return SpectralFromSamples(grads, p.subset_size, p.subsets, seed);
}

namespace {

const Tensor& Captured(const ForwardResult& r, const std::string& layer) {
  return r.activations.at(layer);
}

}  // namespace

ActivationDistance MeasureActivationDistance(const NetworkSpec& spec,
                                             const ParameterTree& original,
                                             const ParameterTree& perturbed,
                                             const std::string& layer,
                                             const Tensor& probe) {
  const ForwardResult a = Forward(spec, original, probe, {layer});
  const ForwardResult b = Forward(spec, perturbed, probe, {layer});
  const Tensor& y = Captured(a, layer);
  const Tensor& yp = Captured(b, layer);
  const std::size_t n = y.dim(0), f = y.RowSize();
  ActivationDistance d;
  for (std::size_t s = 0; s < n; ++s) {
    double dist = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t j = 0; j < f; ++j) {
      const double u = std::max(y[s * f + j], 0.0);
      const double v = std::max(yp[s * f + j], 0.0);
      dist += (u - v) * (u - v);
      na += u * u;
      nb += v * v;
    }
    d.mean_sq_distance += dist;
    d.norm_mismatch += std::abs(na - nb);
  }
  d.mean_sq_distance /= static_cast<double>(n);
  d.norm_mismatch /= static_cast<double>(n);
  d.activations = n * f;
  return d;
}

ParameterTree MatchOutputNorm(const NetworkSpec& spec,
                              const ParameterTree& original,
                              const ParameterTree& perturbed,
                              const std::string& layer, const Tensor& probe) {
  const double target =
      Captured(Forward(spec, original, probe, {layer}), layer).SquaredNorm();
  const double now =
      Captured(Forward(spec, perturbed, probe, {layer}), layer).SquaredNorm();
  if (!(now > 0.0)) throw InvalidArgument("perturbed layer output is identically 0");
  const double s = std::sqrt(target / now);
  ParameterTree out = perturbed;
  LayerParams& l = out.layer(out.IndexOf(layer));
  l.weight.Scale(s);
  if (l.bias && l.kind != LayerKind::kLayerNorm) l.bias->Scale(s);
  return out;
}

RatioEstimate ReluDistanceRatio(std::size_t n, std::size_t draws,
                                std::uint64_t seed) {
  if (n == 0 || draws == 0) throw InvalidArgument("need n >= 1 and draws >= 1");
  Rng rng = MakeRng(seed, "relu-ratio");
  std::normal_distribution<double> normal(0.0, 1.0);
  RatioEstimate e;
  for (std::size_t d = 0; d < draws; ++d) {
    double dist = 0.0, r2 = 0.0, min_pos = INFINITY;
    bool has_zero = false;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = std::max(normal(rng), 0.0);
      const double b = std::max(normal(rng), 0.0);
      dist += (a - b) * (a - b);
      r2 += a * a;
      if (a == 0.0) has_zero = true;
      min_pos = std::min(min_pos, a);
    }
    // Farthest nonnegative point at the same norm: orthogonal when sigma(Y1)
    // has a zero coordinate, else the axis of its smallest coordinate.
    e.numerator += dist;
    e.denominator += has_zero ? 2.0 * r2 : 2.0 * r2 - 2.0 * std::sqrt(r2) * min_pos;
  }
  e.numerator /= static_cast<double>(draws);
  e.denominator /= static_cast<double>(draws);
  e.ratio = e.numerator / e.denominator;
  return e;
}

}  // namespace negfu
