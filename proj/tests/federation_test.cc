#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "negfu/costs.h"
#include "negfu/data.h"
#include "negfu/errors.h"
#include "negfu/federation.h"
#include "test_util.h"

namespace negfu {
namespace {

using testing::Dense;

NetworkSpec Linear(std::size_t in, std::size_t out) {
  NetworkSpec s;
  s.input_shape = {in};
  s.layers = {Dense("out", out)};
  return s;
}

NetworkSpec SmallMlp(std::size_t in, std::size_t classes) {
  NetworkSpec s;
  s.input_shape = {in};
  s.layers = {Dense("h", 16, Activation::kRelu), Dense("out", classes)};
  return s;
}

Dataset RandomData(const NetworkSpec& spec, std::size_t n, Rng& rng) {
  Dataset d;
  Shape shape{n};
  shape.insert(shape.end(), spec.input_shape.begin(), spec.input_shape.end());
  d.inputs = testing::RandomTensor(shape, rng);
  d.class_count = static_cast<int>(spec.ClassCount());
  d.labels = testing::RandomLabels(n, d.class_count, rng);
  return d;
}

ParameterTree Vector(std::vector<double> v) {
  LayerParams l;
  l.name = "w";
  l.kind = LayerKind::kDense;
  const std::size_t n = v.size();
  l.weight = Tensor({n}, std::move(v));
  return ParameterTree({l});
}

TEST(ClientUpdateTest, ZeroEpochsLeavesTreeUnchanged) {
  const NetworkSpec s = Linear(3, 2);
  Rng rng(1);
  const ParameterTree p = InitParameters(s, rng);
  FederationConfig cfg;
  cfg.local_epochs = 0;
  const ClientUpdateResult r = ClientUpdate(s, p, RandomData(s, 5, rng), cfg, rng);
  EXPECT_TRUE(r.params.BitEqual(p));
  EXPECT_EQ(r.flops, 0u);
  EXPECT_EQ(r.steps, 0u);
}

TEST(ClientUpdateTest, SingleSampleEqualsDirectSgdStep) {
  const NetworkSpec s = SmallMlp(4, 3);
  Rng rng(2);
  const ParameterTree p = InitParameters(s, rng);
  const Dataset d = RandomData(s, 1, rng);
  FederationConfig cfg;
  const ClientUpdateResult r = ClientUpdate(s, p, d, cfg, rng);
  OptimizerState opt(cfg.sgd, p);
  const ParameterTree direct = SgdStep(p, Backward(s, p, d.inputs, d.labels), opt);
  EXPECT_TRUE(r.params.BitEqual(direct));
  EXPECT_EQ(r.steps, 1u);
  EXPECT_EQ(r.flops, CountCosts(s, 1).TrainStepFlops());
}

TEST(ClientUpdateTest, SmallStepsDescend) {
  int descended = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const NetworkSpec s = Linear(3, 2);
    Rng rng(100 + trial);
    const ParameterTree p = InitParameters(s, rng);
    const Dataset d = RandomData(s, 12, rng);
    FederationConfig cfg;
    cfg.batch_size = 12;
    cfg.sgd.learning_rate = 0.01;
    cfg.sgd.momentum = 0.0;
    const ClientUpdateResult r = ClientUpdate(s, p, d, cfg, rng);
    descended += EvaluateLossAccuracy(s, r.params, d.inputs, d.labels).loss <=
                 EvaluateLossAccuracy(s, p, d.inputs, d.labels).loss;
  }
  EXPECT_GE(descended, 95);
}

TEST(ClientUpdateTest, LastBatchMayBeShort) {
  const NetworkSpec s = Linear(3, 2);
  Rng rng(3);
  FederationConfig cfg;
  cfg.batch_size = 4;
  cfg.local_epochs = 2;
  const ClientUpdateResult r =
      ClientUpdate(s, InitParameters(s, rng), RandomData(s, 10, rng), cfg, rng);
  EXPECT_EQ(r.steps, 6u);
  EXPECT_EQ(r.flops, 2 * (2 * CountCosts(s, 4).TrainStepFlops() +
                          CountCosts(s, 2).TrainStepFlops()));
}

TEST(ClientUpdateTest, AscentRaisesLoss) {
  const NetworkSpec s = SmallMlp(4, 3);
  Rng rng(4);
  const ParameterTree p = InitParameters(s, rng);
  const Dataset d = RandomData(s, 16, rng);
  FederationConfig cfg;
  cfg.batch_size = 16;
  cfg.sgd.learning_rate = 0.01;
  cfg.sgd.momentum = 0.0;
  const ClientUpdateResult r = ClientUpdate(s, p, d, cfg, rng, {}, true);
  EXPECT_GT(EvaluateLossAccuracy(s, r.params, d.inputs, d.labels).loss,
            EvaluateLossAccuracy(s, p, d.inputs, d.labels).loss);
}

TEST(ClientUpdateTest, RejectsEmptyData) {
  const NetworkSpec s = Linear(3, 2);
  Rng rng(5);
  Dataset empty;
  empty.class_count = 2;
  EXPECT_THROW(ClientUpdate(s, InitParameters(s, rng), empty, FederationConfig{}, rng),
               InvalidArgument);
}

TEST(AggregateTest, EqualWeightsAverage) {
  const std::vector<ParameterTree> t{Vector({1, 2}), Vector({3, 4})};
  const std::vector<double> w{1, 1};
  EXPECT_TRUE(Aggregate(t, w).BitEqual(Vector({2, 3})));
}

TEST(AggregateTest, SingleTreeIsIdentity) {
  const std::vector<ParameterTree> t{Vector({0.1, -7})};
  const std::vector<double> w{5};
  EXPECT_TRUE(Aggregate(t, w).BitEqual(t[0]));
}

TEST(AggregateTest, WeightsFollowSampleCounts) {
  const std::vector<ParameterTree> t{Vector({0}), Vector({4})};
  const std::vector<double> w{1, 3};
  EXPECT_DOUBLE_EQ(Aggregate(t, w).layer(0).weight[0], 3.0);
}

TEST(AggregateTest, RejectsMismatches) {
  const std::vector<ParameterTree> t{Vector({0}), Vector({4, 5})};
  const std::vector<double> w{1, 1};
  EXPECT_THROW(Aggregate(t, w), ShapeError);
  const std::vector<double> bad{1, 0};
  const std::vector<ParameterTree> same{Vector({0}), Vector({1})};
  EXPECT_THROW(Aggregate(same, bad), InvalidArgument);
  EXPECT_THROW(Aggregate(same, std::vector<double>{1}), InvalidArgument);
}

TEST(LedgerTest, RoundBytesArithmetic) {
  EXPECT_EQ(RoundBytes(5, 100), 2u * 5 * 100 * 8);
  CostLedger l;
  l.Record(0, kRequestBytes, 0, "request");
  l.Record(1, RoundBytes(4, 10), 7, "fine-tune");
  EXPECT_EQ(l.total_bytes(), 64u + 640u);
  EXPECT_EQ(l.total_flops(), 7u);
  std::ostringstream out;
  l.WriteCsv(out, "NoT");
  EXPECT_EQ(out.str(), "NoT,0,64,0,request\nNoT,1,640,7,fine-tune\n");
}

struct Toy {
  NetworkSpec spec;
  FederatedSplit split;
};

Toy MakeToy(std::uint64_t seed, std::size_t clients = 3) {
  BlobsParams bp;
  TrainTest tt = SplitTrainTest(MakeBlobs(bp, seed), 0.25, seed);
  Toy t{SmallMlp(bp.dims, static_cast<std::size_t>(bp.classes)), {}};
  t.split = Partition(tt.train, clients, {}, seed, tt.test);
  return t;
}

FederationSession Session(const Toy& t, std::uint64_t seed, std::size_t threads = 1) {
  FederationConfig cfg;
  cfg.seed = seed;
  cfg.threads = threads;
  Rng rng = MakeRng(seed, "init");
  return MakeTrainingSession(t.spec, t.split, cfg, InitParameters(t.spec, rng));
}

TEST(TrainingTest, ZeroRoundsReturnsInitialTree) {
  const Toy t = MakeToy(1);
  FederationSession s = Session(t, 1);
  const ParameterTree init = s.global;
  TrainingStopRule stop;
  stop.max_rounds = 0;
  EXPECT_TRUE(TrainToConvergence(s, stop).final.params.BitEqual(init));
  EXPECT_EQ(s.ledger.total_bytes(), 0u);
}

TEST(TrainingTest, ReplayIsBitIdenticalAcrossThreadCounts) {
  const Toy t = MakeToy(2, 4);
  TrainingStopRule stop;
  stop.max_rounds = 4;
  FederationSession a = Session(t, 2), b = Session(t, 2), c = Session(t, 2, 3);
  const ParameterTree pa = TrainToConvergence(a, stop).final.params;
  EXPECT_TRUE(pa.BitEqual(TrainToConvergence(b, stop).final.params));
  EXPECT_TRUE(pa.BitEqual(TrainToConvergence(c, stop).final.params));
}

TEST(TrainingTest, LedgerCountsEveryParticipantEachRound) {
  const Toy t = MakeToy(3);
  FederationSession s = Session(t, 3);
  TrainingStopRule stop;
  stop.max_rounds = 3;
  TrainToConvergence(s, stop);
  const std::size_t params = s.global.ParameterCount();
  ASSERT_EQ(s.ledger.rows().size(), 3u);
  std::uint64_t last = 0;
  for (const CostRow& r : s.ledger.rows()) {
    EXPECT_EQ(r.bytes, RoundBytes(3, params));
    EXPECT_GT(r.flops, 0u);
    EXPECT_EQ(r.phase, "training");
    last += r.bytes;
  }
  EXPECT_EQ(s.ledger.total_bytes(), last);
}

TEST(TrainingTest, DeskBlobsReachNinetyFivePercent) {
  const Toy t = MakeToy(4, 5);
  FederationSession s = Session(t, 4);
  TrainingStopRule stop;
  stop.max_rounds = 300;
  stop.patience = 30;
  EvalSets sets;
  sets.validation = s.validation;
  const TrainingResult r = TrainToConvergence(s, stop, &sets);
  ASSERT_TRUE(r.final.metrics.validation);
  EXPECT_GE(r.final.metrics.validation->accuracy, 95.0);
  EXPECT_LE(s.round, 300u);
}

TEST(TrainingTest, DivergenceIsReported) {
  const Toy t = MakeToy(5);
  FederationSession s = Session(t, 5);
  s.config.sgd.learning_rate = 1e6;
  TrainingStopRule stop;
  stop.max_rounds = 5;
  EXPECT_THROW(TrainToConvergence(s, stop), DivergenceError);
}

TEST(TrainingTest, ClientsWithoutDataSitOut) {
  const Toy t = MakeToy(6);
  FederationSession s = Session(t, 6);
  s.client_data[1].reset();
  RunRound(s);
  EXPECT_EQ(s.ParticipantCount(), 2u);
  EXPECT_EQ(s.ledger.total_bytes(), RoundBytes(2, s.global.ParameterCount()));
}

TEST(FineTuneTest, FixedRoundsWithoutReference) {
  const Toy t = MakeToy(7);
  FederationSession s = Session(t, 7);
  RecoveryStopRule stop;
  stop.max_rounds = 3;
  EvalSets sets;
  sets.validation = s.validation;
  const FineTuneResult r = FineTune(s, stop, sets);
  EXPECT_EQ(r.rounds, 3u);
  ASSERT_EQ(r.trace.size(), 4u);
  EXPECT_EQ(r.trace[0].round, 0u);
  EXPECT_FALSE(r.recovered_round);
}

TEST(FineTuneTest, StopsAfterWindowInsideBand) {
  const Toy t = MakeToy(8);
  FederationSession s = Session(t, 8);
  RecoveryStopRule stop;
  stop.reference_accuracy = 50.0;
  stop.epsilon = 100.0;  // every accuracy is inside the band
  stop.window = 3;
  stop.max_rounds = 20;
  EvalSets sets;
  sets.validation = s.validation;
  const FineTuneResult r = FineTune(s, stop, sets);
  EXPECT_EQ(r.rounds, 3u);
  ASSERT_TRUE(r.recovered_round);
  EXPECT_EQ(*r.recovered_round, 3u);
}

TEST(FineTuneTest, FrozenLayersStayBitIdentical) {
  const Toy t = MakeToy(9);
  FederationSession s = Session(t, 9);
  const LayerParams before = s.global.layer(0);
  RecoveryStopRule stop;
  stop.max_rounds = 2;
  FineTune(s, stop, EvalSets{}, {true, false});
  EXPECT_TRUE(s.global.layer(0).weight.BitEqual(before.weight));
  EXPECT_TRUE(s.global.layer(0).bias->BitEqual(*before.bias));
}

}  // namespace
}  // namespace negfu
