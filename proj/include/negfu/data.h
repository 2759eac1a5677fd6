#ifndef NEGFU_DATA_H_
#define NEGFU_DATA_H_

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "negfu/network.h"
#include "negfu/tensor.h"

namespace negfu {

struct Dataset {
  Tensor inputs;  // (n, feature shape...)
  std::vector<int> labels;
  int class_count = 0;
  std::string generator;
  std::uint64_t seed = 0;

  std::size_t size() const { return labels.size(); }
  Shape FeatureShape() const;
  Dataset Subset(std::span<const std::size_t> rows) const;
  std::vector<std::size_t> ClassCounts() const;
};

// Throws InvalidArgument on label/shape inconsistencies or an empty set.
void ValidateDataset(const Dataset& d);

// Rows of `a` followed by rows of `b`.
Dataset Concat(const Dataset& a, const Dataset& b);

struct BlobsParams {
  int classes = 4;
  std::size_t dims = 8;
  std::size_t per_class = 100;
  double spread = 0.15;
};

// Isotropic Gaussian clusters around class means drawn uniformly on the unit
// sphere. Exactly per_class samples per class, class-major order.
Dataset MakeBlobs(const BlobsParams& p, std::uint64_t seed);

struct GridParams {
  int classes = 4;
  std::size_t side = 8;
  std::size_t per_class = 100;
  double noise = 0.3;
};

// Each class is a fixed random binary side x side template; samples add
// Gaussian pixel noise. Inputs have shape (n, 1, side, side).
Dataset MakeGridImages(const GridParams& p, std::uint64_t seed);
// Template of one class, shape (1, side, side).
Tensor GridTemplate(const GridParams& p, std::uint64_t seed, int cls);

struct TrainTest {
  Dataset train;
  Dataset test;
};

TrainTest SplitTrainTest(const Dataset& d, double test_fraction,
                         std::uint64_t seed);

enum class PartitionMode { kIid, kDirichlet };

struct PartitionSpec {
  PartitionMode mode = PartitionMode::kIid;
  double beta = 0.1;                 // dirichlet concentration
  double validation_fraction = 0.2;  // per-client train/validation split
};

struct ClientShard {
  // Rows of the source set owned by this client (train then validation).
  std::vector<std::size_t> source_rows;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> validation_rows;
  Dataset train;
  std::optional<Dataset> validation;
};

struct FederatedSplit {
  PartitionSpec spec;
  std::vector<ClientShard> clients;
  Dataset test;

  std::size_t client_count() const { return clients.size(); }
};

// Raw assignment of source rows to n clients; every client nonempty.
std::vector<std::vector<std::size_t>> AssignRows(const Dataset& data,
                                                 std::size_t n,
                                                 const PartitionSpec& spec,
                                                 std::uint64_t seed);

FederatedSplit Partition(const Dataset& data, std::size_t n,
                         const PartitionSpec& spec, std::uint64_t seed,
                         Dataset test);

enum class ForgetMode { kClientWise, kClassWise, kInstanceWise };

struct ForgetRequest {
  ForgetMode mode = ForgetMode::kClientWise;
  std::vector<std::size_t> clients{0};  // client-wise targets
  int forget_class = 0;                 // class-wise
  double ratio = 0.1;                   // instance-wise, floor(ratio * |D^k|)
};

// Per-client split of the local training set into forget (D_u^k) and retain
// (D_r^k) rows. Row indices refer to ClientShard::train.
struct ForgetSpec {
  ForgetRequest request;
  std::vector<std::vector<std::size_t>> forget_rows;
  std::vector<std::vector<std::size_t>> retain_rows;

  // Clients with a nonempty forget set; these send the unlearning request.
  std::vector<std::size_t> RequestingClients() const;
  bool IsTarget(std::size_t client) const;
  std::size_t ForgetCount() const;
  std::size_t RetainCount() const;
  std::optional<Dataset> ForgetData(const FederatedSplit& s, std::size_t k) const;
  std::optional<Dataset> RetainData(const FederatedSplit& s, std::size_t k) const;
  // Union over clients, ascending client order. Absent when empty.
  std::optional<Dataset> AllForget(const FederatedSplit& s) const;
  std::optional<Dataset> AllRetain(const FederatedSplit& s) const;
};

ForgetSpec BuildForgetSpec(const FederatedSplit& split,
                           const ForgetRequest& request, std::uint64_t seed);

// Validation rows that a retrained model should be judged on: validation sets
// of non-target clients (client-wise) without the forgotten class
// (class-wise). Absent when nothing remains.
std::optional<Dataset> RetainValidation(const FederatedSplit& split,
                                        const ForgetSpec& forget);

struct BackdoorConfig {
  // 3x3 checkerboard: high on even (row+col), low on odd.
  double high = 2.0;
  double low = -1.0;
  std::size_t row = 0;  // top-left corner of the trigger
  std::size_t col = 0;
  double fraction = 0.8;
  int target = 0;
};

std::array<double, 9> TriggerPattern(const BackdoorConfig& cfg);
// Stamps the trigger into every row (inputs shaped (n, c, h, w)).
void StampTrigger(Tensor& images, const BackdoorConfig& cfg);

struct PoisonResult {
  Dataset data;
  std::vector<std::size_t> poisoned;  // ascending
};

PoisonResult Poison(const Dataset& data, const BackdoorConfig& cfg,
                    std::uint64_t seed);

// Fraction of non-target test samples classified as the target once the
// trigger is stamped on them.
double BackdoorSuccessRate(const NetworkSpec& spec, const ParameterTree& params,
                           const Dataset& clean_test, const BackdoorConfig& cfg);

}  // namespace negfu

#endif  // NEGFU_DATA_H_
