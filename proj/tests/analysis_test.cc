#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "negfu/analysis.h"
#include "negfu/errors.h"
#include "negfu/perturbation.h"
#include "test_util.h"

namespace negfu {
namespace {

using testing::Conv;
using testing::Dense;
using testing::Norm;

// ---- MIA, average gap, loss gap --------------------------------------------

TEST(MiaTest, IdenticalLossesAreIndistinguishable) {
  const std::vector<double> l{0.3, 0.1, 0.7, 0.7, 2.0};
  EXPECT_EQ(MiaFromLosses(l, l), 50.0);
}

TEST(MiaTest, SeparatedLossesAreFullyRecognized) {
  EXPECT_EQ(MiaFromLosses({0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}), 100.0);
}

TEST(MiaTest, InterleavedLosses) {
  EXPECT_DOUBLE_EQ(MiaFromLosses({0.1, 0.3}, {0.2, 0.4}), 75.0);
}

TEST(MiaTest, SameSamplesOnBothSidesGiveFifty) {
  BlobsParams bp;
  bp.per_class = 10;
  const Dataset d = MakeBlobs(bp, 1);
  NetworkSpec s;
  s.input_shape = {bp.dims};
  s.layers = {Dense("out", 4)};
  Rng rng(1);
  EXPECT_EQ(MiaScore(s, InitParameters(s, rng), d, d, 3), 50.0);
}

MetricsReport Report(double retain, double forget, double test, double mia) {
  MetricsReport r;
  r.retain_acc = retain;
  r.forget_acc = forget;
  r.test_acc = test;
  r.mia = mia;
  return r;
}

TEST(AvgGapTest, ReferenceRow) {
  const MetricsReport retrain = Report(91.66, 83.05, 82.32, 50.23);
  const MetricsReport nt = Report(91.69, 83.86, 82.65, 50.23);
  EXPECT_NEAR(AvgGap(nt, retrain), 0.2925, 1e-9);
  EXPECT_EQ(std::round(AvgGap(nt, retrain) * 100.0) / 100.0, 0.29);
}

TEST(AvgGapTest, TrivialCases) {
  const MetricsReport a = Report(90, 80, 70, 60);
  EXPECT_EQ(AvgGap(a, a), 0.0);
  EXPECT_EQ(AvgGap(Report(91, 79, 71, 59), a), 1.0);
  MetricsReport missing = a;
  missing.mia.reset();
  EXPECT_THROW(AvgGap(missing, a), InvalidArgument);
}

NetworkSpec Logistic() {
  NetworkSpec s;
  s.input_shape = {2};
  s.layers = {Dense("out", 2)};
  return s;
}

Dataset OneSample(int label) {
  Dataset d;
  d.inputs = Tensor({1, 2}, {0.5, -0.5});
  d.labels = {label};
  d.class_count = 2;
  return d;
}

TEST(LossGapTest, HandComputed) {
  const NetworkSpec s = Logistic();
  Rng rng(2);
  ParameterTree p = InitParameters(s, rng);
  p.layer(0).weight = Tensor({2, 2});
  p.layer(0).bias = Tensor({2}, {1.0, 0.0});
  // ln(1 + e) - ln(1 + e^-1) = 1.
  EXPECT_NEAR(LossGap(s, p, OneSample(0), OneSample(1)), 1.0, 1e-12);
  EXPECT_NEAR(LossGap(s, p, OneSample(1), OneSample(0)), 1.0, 1e-12);
  EXPECT_EQ(LossGap(s, p, OneSample(1), OneSample(1)), 0.0);
}

TEST(EvaluateTest, ConstantLogitsPredictFirstClass) {
  BlobsParams bp;
  bp.classes = 2;
  bp.per_class = 40;
  TrainTest tt = SplitTrainTest(MakeBlobs(bp, 3), 0.25, 3);
  const FederatedSplit split = Partition(tt.train, 2, {}, 3, tt.test);
  const ForgetSpec forget = BuildForgetSpec(split, {}, 3);
  NetworkSpec s;
  s.input_shape = {bp.dims};
  s.layers = {Dense("out", 2)};
  Rng rng(3);
  ParameterTree p = InitParameters(s, rng);
  p.layer(0).weight = Tensor(p.layer(0).weight.shape());
  p.layer(0).bias = Tensor({2});
  const MetricsReport r = Evaluate(s, p, split, forget);
  const std::vector<std::size_t> counts = split.test.ClassCounts();
  EXPECT_DOUBLE_EQ(r.test_acc, 100.0 * counts[0] / split.test.size());
  ASSERT_TRUE(r.forget_acc);
}

// ---- unlearning-time bound -------------------------------------------------

LossPair Quadratic() {
  LossPair l;
  l.retain = [](const std::vector<double>& t) { return 0.5 * t[0] * t[0]; };
  l.forget = [](const std::vector<double>& t) {
    return 0.5 * (t[0] - 1.0) * (t[0] - 1.0);
  };
  l.retain_grad = [](const std::vector<double>& t) { return std::vector<double>{t[0]}; };
  l.forget_grad = [](const std::vector<double>& t) {
    return std::vector<double>{t[0] - 1.0};
  };
  return l;
}

TEST(BoundTest, QuadraticClosedForm) {
  const LossGapTrace t =
      UnlearningTimeBound(Quadratic(), {{2.0}, {1.5}, {1.0}}, {0.0}, 0.0);
  EXPECT_NEAR(t.delta_start, 1.5, 1e-12);
  EXPECT_NEAR(t.delta_reference, 0.5, 1e-12);
  EXPECT_NEAR(t.lipschitz, 1.0, 1e-12);
  EXPECT_NEAR(t.loss_decrease, 2.0, 1e-12);
  EXPECT_NEAR(t.t_unlearn, 0.5, 1e-12);
  EXPECT_FALSE(t.unbounded);
}

TEST(BoundTest, SlackShrinksBound) {
  const LossGapTrace t = UnlearningTimeBound(Quadratic(), {{2.0}}, {0.0}, 0.5);
  EXPECT_NEAR(t.t_unlearn, 0.125, 1e-12);
}

TEST(BoundTest, ReachedGapGivesZero) {
  const LossGapTrace t = UnlearningTimeBound(Quadratic(), {{2.0}}, {-1.0}, 0.0);
  EXPECT_EQ(t.t_unlearn, 0.0);
}

TEST(BoundTest, NetworkLossPairMatchesMeanLoss) {
  const NetworkSpec s = Logistic();
  Rng rng(4);
  const ParameterTree p = testing::RandomParams(s, rng);
  const LossPair l = NetworkLossPair(s, p, OneSample(0), OneSample(1));
  EXPECT_DOUBLE_EQ(l.retain(p.Flatten()), MeanLoss(s, p, OneSample(0)));
  EXPECT_DOUBLE_EQ(l.forget(p.Flatten()), MeanLoss(s, p, OneSample(1)));
}

// ---- CKA -------------------------------------------------------------------

Tensor Gaussian(std::size_t n, std::size_t p, Rng& rng) {
  return testing::RandomTensor({n, p}, rng);
}

Tensor MatMul(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor c({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a[i * k + t] * b[t * m + j];
      c[i * m + j] = s;
    }
  }
  return c;
}

// Gram-Schmidt on the columns of a seeded Gaussian matrix.
Tensor RandomOrthogonal(std::size_t p, Rng& rng) {
  Tensor q = Gaussian(p, p, rng);
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t prev = 0; prev < j; ++prev) {
      double dot = 0.0;
      for (std::size_t i = 0; i < p; ++i) dot += q[i * p + j] * q[i * p + prev];
      for (std::size_t i = 0; i < p; ++i) q[i * p + j] -= dot * q[i * p + prev];
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < p; ++i) norm += q[i * p + j] * q[i * p + j];
    for (std::size_t i = 0; i < p; ++i) q[i * p + j] /= std::sqrt(norm);
  }
  return q;
}

TEST(CkaTest, SelfScaleAndRotation) {
  Rng rng(5);
  const Tensor x = Gaussian(40, 6, rng);
  EXPECT_NEAR(LinearCka(x, x).value, 1.0, 1e-12);
  Tensor scaled = x;
  scaled.Scale(-3.5);
  EXPECT_NEAR(LinearCka(x, scaled).value, 1.0, 1e-12);
  EXPECT_NEAR(LinearCka(x, MatMul(x, RandomOrthogonal(6, rng))).value, 1.0, 1e-8);
}

TEST(CkaTest, SymmetricAndBounded) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = Gaussian(30, 4, rng);
    const Tensor y = Gaussian(30, 7, rng);
    const double a = LinearCka(x, y).value;
    EXPECT_NEAR(a, LinearCka(y, x).value, 1e-12);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0 + 1e-12);
  }
}

TEST(CkaTest, ConstantFeaturesAreDegenerate) {
  Rng rng(7);
  const CkaResult r = LinearCka(Tensor({10, 3}, 2.0), Gaussian(10, 3, rng));
  EXPECT_TRUE(r.degenerate);
  EXPECT_THROW(LinearCka(Gaussian(10, 3, rng), Gaussian(9, 3, rng)), ShapeError);
}

TEST(CkaTest, DepthProfileOfModelWithItself) {
  NetworkSpec s;
  s.input_shape = {1, 6, 6};
  s.layers = {Conv("c", 3, 3), Norm("ln", Activation::kRelu), Dense("out", 3)};
  Rng rng(8);
  const ParameterTree p = testing::RandomParams(s, rng);
  const std::vector<CkaEntry> prof =
      CkaDepthProfile(s, p, p, testing::RandomTensor({20, 1, 6, 6}, rng));
  ASSERT_EQ(prof.size(), 2u);
  EXPECT_EQ(prof[0].layer, "ln");
  EXPECT_EQ(prof[1].layer, "out");
  for (const CkaEntry& e : prof) EXPECT_NEAR(e.cka.value, 1.0, 1e-12);
}

TEST(CkaTest, Normalization) {
  const std::vector<CkaEntry> q{{"a", {0.8, false}}, {"b", {0.5, false}}};
  const std::vector<CkaEntry> ref{{"a", {0.6, false}}, {"b", {1.0, false}}};
  const std::vector<double> n = NormalizeCka(q, ref);
  EXPECT_NEAR(n[0], 0.5, 1e-12);
  EXPECT_EQ(n[1], 0.0);
}

// ---- eigenvalues and spectral content --------------------------------------

TEST(JacobiTest, TridiagonalEigenvalues) {
  const EigenResult r = JacobiEigen(Tensor({3, 3}, {2, 1, 0, 1, 2, 1, 0, 1, 2}));
  ASSERT_EQ(r.values.size(), 3u);
  EXPECT_NEAR(r.values[0], 2.0 + std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(r.values[1], 2.0, 1e-12);
  EXPECT_NEAR(r.values[2], 2.0 - std::sqrt(2.0), 1e-12);
}

TEST(JacobiTest, ReconstructsRandomSymmetric) {
  Rng rng(9);
  for (std::size_t n : {1u, 2u, 5u, 20u}) {
    const Tensor g = Gaussian(n, n, rng);
    Tensor a({n, n});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) a[i * n + j] = g[i * n + j] + g[j * n + i];
    }
    const EigenResult r = JacobiEigen(a);
    for (std::size_t i = 1; i < n; ++i) EXPECT_GE(r.values[i - 1], r.values[i]);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          s += r.vectors[i * n + k] * r.values[k] * r.vectors[j * n + k];
        }
        EXPECT_NEAR(s, a[i * n + j], 1e-10);
      }
    }
  }
}

TEST(JacobiTest, RejectsAsymmetric) {
  EXPECT_THROW(JacobiEigen(Tensor({2, 2}, {1, 2, 3, 4})), InvalidArgument);
}

TEST(SpectralTest, IsotropicGaussianIsLinear) {
  Rng rng(10);
  std::normal_distribution<double> n;
  std::vector<std::vector<double>> g(5000, std::vector<double>(50));
  for (auto& row : g) {
    for (double& v : row) v = n(rng);
  }
  const SpectralCurve c = SpectralFromSamples(g, 50, 1, 1);
  ASSERT_EQ(c.psi.size(), 50u);
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_NEAR(c.psi[i], (i + 1) / 50.0, 0.05);
    if (i > 0) EXPECT_GE(c.psi[i], c.psi[i - 1]);
  }
  EXPECT_NEAR(c.psi.back(), 1.0, 1e-12);
}

TEST(SpectralTest, RankOneJumpsToOne) {
  Rng rng(11);
  std::normal_distribution<double> n;
  std::vector<double> dir(10);
  for (double& v : dir) v = n(rng);
  std::vector<std::vector<double>> g(100);
  for (auto& row : g) {
    const double c = n(rng);
    for (double v : dir) row.push_back(c * v);
  }
  const SpectralCurve c = SpectralFromSamples(g, 10, 2, 2);
  EXPECT_NEAR(c.psi[0], 1.0, 1e-9);
  EXPECT_NEAR(c.alpha95, 0.1, 1e-12);
}

TEST(SpectralTest, EqualSamplesAreDegenerate) {
  const std::vector<std::vector<double>> g(20, std::vector<double>(5, 1.5));
  EXPECT_TRUE(SpectralFromSamples(g, 5, 1, 3).degenerate);
}

// ---- activation distances --------------------------------------------------

NetworkSpec ReluMlp() {
  NetworkSpec s;
  s.input_shape = {5};
  s.layers = {Dense("l1", 8, Activation::kRelu), Dense("out", 3)};
  return s;
}

TEST(ActivationDistanceTest, IdentityIsZero) {
  const NetworkSpec s = ReluMlp();
  Rng rng(12);
  const ParameterTree p = testing::RandomParams(s, rng);
  const Tensor x = testing::RandomTensor({50, 5}, rng);
  const ActivationDistance d = MeasureActivationDistance(s, p, p, "l1", x);
  EXPECT_EQ(d.mean_sq_distance, 0.0);
  EXPECT_EQ(d.norm_mismatch, 0.0);
  EXPECT_EQ(d.activations, 400u);
}

TEST(ActivationDistanceTest, NegationDistanceIsOutputEnergy) {
  const NetworkSpec s = ReluMlp();
  Rng rng(13);
  const ParameterTree p = testing::RandomParams(s, rng);
  const Tensor x = testing::RandomTensor({50, 5}, rng);
  const ForwardTrace trace = TraceForward(s, p, x);
  const Tensor& y = trace.layers[0].pre;
  double energy = 0.0;
  for (double v : y.values()) energy += v * v;
  energy /= 50.0;
  const ActivationDistance d =
      MeasureActivationDistance(s, p, NegateLayers(p, {"l1"}), "l1", x);
  EXPECT_NEAR(d.mean_sq_distance, energy, 1e-10 * energy);
}

TEST(ActivationDistanceTest, MatchedNormWithinOnePercent) {
  const NetworkSpec s = ReluMlp();
  Rng rng(14);
  const ParameterTree p = testing::RandomParams(s, rng);
  const Tensor x = testing::RandomTensor({80, 5}, rng);
  Perturbation pr{PerturbationKind::kReinit, {"l1"}, 0.0, 1.0};
  const ParameterTree q = MatchOutputNorm(s, p, Perturb(s, p, pr, 1), "l1", x);
  auto energy = [&](const ParameterTree& t) {
    double e = 0.0;
    const ForwardTrace trace = TraceForward(s, t, x);
    for (double v : trace.layers[0].pre.values()) e += v * v;
    return e;
  };
  EXPECT_NEAR(energy(q), energy(p), 0.01 * energy(p));
}

TEST(ActivationDistanceTest, GaussianRatio) {
  const RatioEstimate r = ReluDistanceRatio(32, 20000, 1);
  EXPECT_NEAR(r.ratio, 1.0 - 1.0 / std::numbers::pi, 0.02);
  EXPECT_NEAR(r.ratio, r.numerator / r.denominator, 1e-12);
}

}  // namespace
}  // namespace negfu
