#include <cmath>

#include <gtest/gtest.h>

#include "negfu/analysis.h"
#include "negfu/errors.h"
#include "negfu/perturbation.h"
#include "negfu/strategy.h"
#include "test_util.h"

namespace negfu {
namespace {

using testing::Conv;
using testing::Dense;
using testing::Norm;

NetworkSpec Mlp(Activation act = Activation::kRelu) {
  NetworkSpec s;
  s.input_shape = {4};
  s.layers = {Dense("l1", 6, act), Dense("l2", 5, act), Dense("out", 3)};
  return s;
}

Tensor Batch(const NetworkSpec& spec, std::size_t n, Rng& rng) {
  Shape s{n};
  s.insert(s.end(), spec.input_shape.begin(), spec.input_shape.end());
  return testing::RandomTensor(s, rng);
}

double MaxAbsDiff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

TEST(NegateTest, FlipsSignOfWeightsAndBias) {
  LayerParams l;
  l.name = "a";
  l.weight = Tensor({2}, {1.0, -2.0});
  l.bias = Tensor({1}, {0.5});
  const ParameterTree t({l});
  const ParameterTree n = NegateLayers(t, {"a"});
  EXPECT_EQ(n.layer(0).weight.values(), (std::vector<double>{-1.0, 2.0}));
  EXPECT_EQ((*n.layer(0).bias)[0], -0.5);
}

TEST(NegateTest, InvolutionAndSelectivity) {
  const NetworkSpec s = Mlp();
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const ParameterTree p = testing::RandomParams(s, rng);
    const ParameterTree q = NegateLayers(p, {"l2"});
    EXPECT_TRUE(NegateLayers(q, {"l2"}).BitEqual(p));
    EXPECT_TRUE(q.layer(0).weight.BitEqual(p.layer(0).weight));
    EXPECT_TRUE(q.layer(2).weight.BitEqual(p.layer(2).weight));
    for (std::size_t j = 0; j < p.layer(1).weight.size(); ++j) {
      EXPECT_EQ(q.layer(1).weight[j], -p.layer(1).weight[j]);
    }
  }
}

TEST(NegateTest, UnknownLayerThrows) {
  Rng rng(2);
  EXPECT_THROW(NegateLayers(InitParameters(Mlp(), rng), {"nope"}), InvalidArgument);
}

TEST(PerturbTest, ScaleOneIsIdentity) {
  const NetworkSpec s = Mlp();
  Rng rng(3);
  const ParameterTree p = InitParameters(s, rng);
  Perturbation pr{PerturbationKind::kScale, {"l1", "out"}, 0.0, 1.0};
  EXPECT_TRUE(Perturb(s, p, pr, 1).BitEqual(p));
}

TEST(PerturbTest, ZeroLayerOutputsItsBias) {
  const NetworkSpec s = Mlp(Activation::kIdentity);
  Rng rng(4);
  const ParameterTree p = testing::RandomParams(s, rng);
  Perturbation pr{PerturbationKind::kZero, {"l1"}, 0.0, 1.0};
  const ParameterTree z = Perturb(s, p, pr, 1);
  const ForwardTrace t = TraceForward(s, z, Batch(s, 3, rng));
  for (double v : t.layers[0].pre.values()) EXPECT_EQ(v, 0.0);
}

TEST(PerturbTest, GaussianNoiseHasRequestedSpread) {
  NetworkSpec s;
  s.input_shape = {400};
  s.layers = {Dense("big", 300), Dense("out", 2)};
  Rng rng(5);
  const ParameterTree p = InitParameters(s, rng);
  Perturbation pr{PerturbationKind::kGaussianNoise, {"big"}, 0.3, 1.0};
  const ParameterTree q = Perturb(s, p, pr, 9);
  const Tensor& a = p.layer(0).weight;
  const Tensor& b = q.layer(0).weight;
  ASSERT_GE(a.size(), 100000u);
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = b[i] - a[i];
    sum += d;
    sq += d * d;
  }
  const double n = static_cast<double>(a.size());
  const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
  EXPECT_NEAR(sd, 0.3, 0.05 * 0.3);
  EXPECT_TRUE(q.layer(1).weight.BitEqual(p.layer(1).weight));
}

TEST(PerturbTest, ReinitMatchesInitializer) {
  const NetworkSpec s = Mlp();
  Rng rng(6);
  const ParameterTree p = testing::RandomParams(s, rng);
  Perturbation pr{PerturbationKind::kReinit, {"l2"}, 0.0, 1.0};
  const ParameterTree q = Perturb(s, p, pr, 3);
  Rng same = MakeRng(3, "perturb", {1});
  EXPECT_TRUE(q.layer(1).weight.BitEqual(InitLayer(s, 1, same).weight));
  const double bound = std::sqrt(1.0 / 6.0);
  for (double v : q.layer(1).weight.values()) EXPECT_LE(std::abs(v), bound);
}

TEST(PerturbTest, KernelFlipReversesBothAxes) {
  NetworkSpec s;
  s.input_shape = {1, 4, 4};
  s.layers = {Conv("c", 1, 2), Dense("out", 2)};
  Rng rng(7);
  ParameterTree p = InitParameters(s, rng);
  p.layer(0).weight = Tensor({1, 1, 2, 2}, {1, 2, 3, 4});
  Perturbation pr{PerturbationKind::kKernelFlip, {"c"}, 0.0, 1.0};
  EXPECT_EQ(Perturb(s, p, pr, 1).layer(0).weight.values(),
            (std::vector<double>{4, 3, 2, 1}));
  pr.layers = {"out"};
  EXPECT_THROW(Perturb(s, p, pr, 1), InvalidArgument);
}

TEST(PerturbTest, NegateKindDelegates) {
  const NetworkSpec s = Mlp();
  Rng rng(8);
  const ParameterTree p = InitParameters(s, rng);
  Perturbation pr{PerturbationKind::kNegate, {"l1"}, 0.0, 1.0};
  EXPECT_TRUE(Perturb(s, p, pr, 1).BitEqual(NegateLayers(p, {"l1"})));
}

TEST(GraftTest, SingleTreeAndAlternatingLayers) {
  const NetworkSpec s = Mlp();
  Rng rng(9);
  const std::vector<ParameterTree> trees{InitParameters(s, rng), InitParameters(s, rng)};
  EXPECT_TRUE(Graft(trees, {{"l1", 1}, {"l2", 1}, {"out", 1}}).BitEqual(trees[1]));
  const ParameterTree g = Graft(trees, {{"l1", 0}, {"l2", 1}, {"out", 0}});
  EXPECT_TRUE(g.layer(0).weight.BitEqual(trees[0].layer(0).weight));
  EXPECT_TRUE(g.layer(1).weight.BitEqual(trees[1].layer(1).weight));
  EXPECT_TRUE(g.layer(2).weight.BitEqual(trees[0].layer(2).weight));
}

TEST(GraftTest, NegatedGraftEqualsNegation) {
  const NetworkSpec s = Mlp();
  Rng rng(10);
  const ParameterTree p = InitParameters(s, rng);
  ParameterTree minus = p;
  minus.Scale(-1.0);
  const std::vector<ParameterTree> trees{p, minus};
  EXPECT_TRUE(Graft(trees, {{"l1", 1}, {"l2", 0}, {"out", 0}})
                  .BitEqual(NegateLayers(p, {"l1"})));
}

TEST(GraftTest, RejectsIncongruentOrPartial) {
  Rng rng(11);
  NetworkSpec other = Mlp();
  other.layers[0].units = 7;
  const std::vector<ParameterTree> trees{InitParameters(Mlp(), rng),
                                         InitParameters(other, rng)};
  EXPECT_THROW(Graft(trees, {{"l1", 0}, {"l2", 0}, {"out", 0}}), ShapeError);
  const std::vector<ParameterTree> one{trees[0]};
  EXPECT_THROW(Graft(one, {{"l1", 0}}), InvalidArgument);
}

TEST(CompensateTest, TanhNegatesWeightKeepsBias) {
  LayerParams l;
  l.name = "l2";
  l.weight = Tensor({2, 2}, {1, 2, 3, 4});
  l.bias = Tensor({2}, {0.5, -1});
  const LayerParams c = AffineCompensate(l, Activation::kTanh);
  EXPECT_EQ(c.weight.values(), (std::vector<double>{-1, -2, -3, -4}));
  EXPECT_EQ(c.bias->values(), l.bias->values());
}

TEST(CompensateTest, StepShiftsBiasByRowSums) {
  LayerParams l;
  l.name = "l2";
  l.weight = Tensor({2, 2}, {1, 2, 3, 4});
  l.bias = Tensor({2}, {0.5, -1});
  const LayerParams c = AffineCompensate(l, Activation::kStep);
  EXPECT_EQ(c.weight.values(), (std::vector<double>{-1, -2, -3, -4}));
  EXPECT_EQ(c.bias->values(), (std::vector<double>{3.5, 6}));
}

TEST(CompensateTest, NetworkFunctionUnchanged) {
  Rng rng(12);
  for (Activation psi : {Activation::kTanh, Activation::kSigmoid, Activation::kStep,
                         Activation::kIdentity}) {
    NetworkSpec s;
    s.input_shape = {5};
    s.layers = {Dense("l1", 6, psi), Dense("l2", 3)};
    for (int net = 0; net < 5; ++net) {
      const ParameterTree p = testing::RandomParams(s, rng);
      const Tensor x = Batch(s, 100, rng);
      const ParameterTree q = NegateAndCompensate(s, p, "l1");
      EXPECT_LT(MaxAbsDiff(Forward(s, p, x).logits, Forward(s, q, x).logits), 1e-12);
    }
  }
}

TEST(CompensateTest, ReluIsRejected) {
  Rng rng(13);
  const NetworkSpec s = Mlp(Activation::kRelu);
  EXPECT_THROW(NegateAndCompensate(s, InitParameters(s, rng), "l1"), InvalidArgument);
}

TEST(ConvNormTest, DoubleNegationCancels) {
  NetworkSpec s;
  s.input_shape = {2, 6, 6};
  s.layers = {Conv("c", 3, 3), Norm("ln", Activation::kRelu), Dense("out", 2)};
  Rng rng(14);
  for (int net = 0; net < 5; ++net) {
    const ParameterTree p = testing::RandomParams(s, rng);
    const Tensor x = Batch(s, 50, rng);
    const ParameterTree q = ConvNormDoubleNegate(s, p, "c");
    EXPECT_LT(MaxAbsDiff(Forward(s, p, x).logits, Forward(s, q, x).logits), 1e-12);
    const Tensor zero({1, 2, 6, 6});
    EXPECT_LT(MaxAbsDiff(Forward(s, p, zero).logits, Forward(s, q, zero).logits), 1e-12);
  }
}

TEST(ConvNormTest, ReluBetweenBreaksCancellation) {
  NetworkSpec s;
  s.input_shape = {2, 6, 6};
  s.layers = {Conv("c", 3, 3, Activation::kRelu), Norm("ln"), Dense("out", 2)};
  Rng rng(15);
  const ParameterTree p = testing::RandomParams(s, rng);
  EXPECT_THROW(ConvNormDoubleNegate(s, p, "c"), InvalidArgument);
  const Tensor x = Batch(s, 50, rng);
  const ParameterTree q = NegateLayers(p, {"c", "ln"});
  EXPECT_GT(MaxAbsDiff(Forward(s, p, x).logits, Forward(s, q, x).logits), 1e-2);
}

TEST(NrFreezeTest, FreezesNegatesAndReinitializes) {
  const NetworkSpec s = Mlp();
  Rng rng(16);
  const ParameterTree p = testing::RandomParams(s, rng);
  const FrozenStart f = NegateFreezeReinit(s, p, {"l1"}, {"l1"}, 4);
  EXPECT_TRUE(f.params.layer(0).weight.BitEqual(NegateLayers(p, {"l1"}).layer(0).weight));
  EXPECT_EQ(f.frozen, (std::vector<bool>{true, false, false}));
  EXPECT_FALSE(f.params.layer(1).weight.BitEqual(p.layer(1).weight));
  EXPECT_THROW(NegateFreezeReinit(s, p, {}, {"l1", "l2", "out"}, 4), InvalidArgument);
}

TEST(NrFreezeTest, EmptyNegationIsPartialRetraining) {
  const NetworkSpec s = Mlp();
  Rng rng(17);
  const ParameterTree p = testing::RandomParams(s, rng);
  const FrozenStart f = NegateFreezeReinit(s, p, {}, {"l1"}, 4);
  EXPECT_TRUE(f.params.layer(0).weight.BitEqual(p.layer(0).weight));
}

// ---- strategies ------------------------------------------------------------

struct World {
  NetworkSpec spec;
  FederatedSplit split;
  ForgetSpec forget;
  FederationConfig config;
  ParameterTree theta_star;

  UnlearningContext Context() const {
    TrainingStopRule stop;
    stop.max_rounds = 3;
    return {spec, &split, &forget, config, stop};
  }
};

World MakeWorld(ForgetRequest request = {}) {
  World w;
  BlobsParams bp;
  bp.per_class = 30;
  TrainTest tt = SplitTrainTest(MakeBlobs(bp, 1), 0.25, 1);
  w.spec.input_shape = {bp.dims};
  w.spec.layers = {Dense("fc1", 8, Activation::kRelu), Dense("out", 4)};
  w.split = Partition(tt.train, 3, {}, 1, tt.test);
  w.forget = BuildForgetSpec(w.split, request, 1);
  w.config.seed = 1;
  Rng rng = MakeRng(1, "init");
  FederationSession s =
      MakeTrainingSession(w.spec, w.split, w.config, InitParameters(w.spec, rng));
  TrainingStopRule stop;
  stop.max_rounds = 3;
  w.theta_star = TrainToConvergence(s, stop).final.params;
  return w;
}

RecoveryStopRule Fixed(std::size_t rounds) {
  RecoveryStopRule r;
  r.max_rounds = rounds;
  return r;
}

TEST(StrategyTest, FineTuneStartsAtThetaStar) {
  const World w = MakeWorld();
  Strategy s;
  s.kind = StrategyKind::kFineTune;
  const UnlearningRun r = RunUnlearning(w.Context(), w.theta_star, s, Fixed(2));
  EXPECT_TRUE(r.start().params.BitEqual(w.theta_star));
  EXPECT_EQ(r.method, "FT");
  EXPECT_EQ(r.trace.size(), 3u);
}

TEST(StrategyTest, NoTStartsNegatedOnFirstLayer) {
  const World w = MakeWorld();
  Strategy s;
  const UnlearningRun r = RunUnlearning(w.Context(), w.theta_star, s, Fixed(1));
  EXPECT_TRUE(r.start().params.BitEqual(NegateLayers(w.theta_star, {"fc1"})));
  EXPECT_EQ(r.method, "NoT");
}

TEST(StrategyTest, RetrainIsFromScratch) {
  const World w = MakeWorld();
  Strategy s;
  s.kind = StrategyKind::kRetrain;
  const UnlearningRun r = RunUnlearning(w.Context(), w.theta_star, s, Fixed(1));
  Rng rng = MakeRng(1, "retrain-init");
  EXPECT_TRUE(r.start().params.BitEqual(InitParameters(w.spec, rng)));
  for (const CostRow& row : r.ledger.rows()) EXPECT_NE(row.phase, "request");
  EXPECT_EQ(r.rounds, 3u);
}

TEST(StrategyTest, LedgerHasRequestThenRetainedRounds) {
  const World w = MakeWorld();
  Strategy s;
  const UnlearningRun r = RunUnlearning(w.Context(), w.theta_star, s, Fixed(2));
  ASSERT_EQ(r.ledger.rows().size(), 3u);
  EXPECT_EQ(r.ledger.rows()[0].phase, "request");
  EXPECT_EQ(r.ledger.rows()[0].bytes, kRequestBytes);
  // Client 0 forgets everything and sits out.
  EXPECT_EQ(r.ledger.rows()[1].bytes, RoundBytes(2, w.theta_star.ParameterCount()));
}

TEST(StrategyTest, GradientAscentNeedsForgetData) {
  ForgetRequest req;
  req.mode = ForgetMode::kInstanceWise;
  req.ratio = 0.1;
  const World w = MakeWorld(req);
  Strategy s;
  s.kind = StrategyKind::kGradientAscent;
  const UnlearningRun r = RunUnlearning(w.Context(), w.theta_star, s, Fixed(1));
  EXPECT_EQ(r.ledger.rows()[1].phase, "ascent");
  EXPECT_EQ(r.method, "GA");
}

TEST(StrategyTest, RandomLabelAddsRelabeledData) {
  const World w = MakeWorld();
  Strategy s;
  s.kind = StrategyKind::kRandomLabel;
  const UnlearningRun r = RunUnlearning(w.Context(), w.theta_star, s, Fixed(1));
  // The forgetting client participates with its relabeled samples.
  EXPECT_EQ(r.ledger.rows()[1].bytes, RoundBytes(3, w.theta_star.ParameterCount()));
}

TEST(StrategyTest, InvalidStrategiesRejected) {
  const World w = MakeWorld();
  Strategy s;
  s.negate_layers = {"missing"};
  EXPECT_THROW(ValidateStrategy(w.Context(), s), InvalidArgument);
  Strategy p;
  p.kind = StrategyKind::kPerturb;
  EXPECT_THROW(ValidateStrategy(w.Context(), p), InvalidArgument);
  p.perturbation.kind = PerturbationKind::kKernelFlip;
  p.perturbation.layers = {"fc1"};
  EXPECT_THROW(ValidateStrategy(w.Context(), p), InvalidArgument);
}

TEST(StrategyTest, NrFreezeKeepsFrozenLayerBitIdentical) {
  const World w = MakeWorld();
  const UnlearningRun r = RunNrFreeze(w.Context(), w.theta_star, {"fc1"}, {"fc1"}, 3);
  const LayerParams expected = NegateLayers(w.theta_star, {"fc1"}).layer(0);
  EXPECT_TRUE(r.final_params().layer(0).weight.BitEqual(expected.weight));
  EXPECT_TRUE(r.final_params().layer(0).bias->BitEqual(*expected.bias));
  EXPECT_EQ(r.rounds, 3u);
}

TEST(StrategyTest, LabelsAndParsing) {
  Strategy s;
  s.kind = StrategyKind::kPerturb;
  s.perturbation.kind = PerturbationKind::kGaussianNoise;
  EXPECT_EQ(s.Label(), "perturb:gaussian_noise");
  EXPECT_EQ(ParseStrategyKind("randl"), StrategyKind::kRandomLabel);
  EXPECT_FALSE(ParseStrategyKind("bogus"));
  EXPECT_EQ(ParsePerturbationKind("kernel_flip"), PerturbationKind::kKernelFlip);
}

}  // namespace
}  // namespace negfu
