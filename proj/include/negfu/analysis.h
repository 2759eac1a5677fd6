#ifndef NEGFU_ANALYSIS_H_
#define NEGFU_ANALYSIS_H_

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "negfu/data.h"
#include "negfu/network.h"

namespace negfu {

// ---- accuracy metrics, MIA, average gap -----------------------------------

struct MetricsReport {
  std::string method;
  double retain_acc = 0.0;
  std::optional<double> forget_acc;  // absent when D_u is empty
  double test_acc = 0.0;
  std::optional<double> mia;
  double avg_gap = 0.0;
  std::uint64_t bytes = 0;
  std::uint64_t flops = 0;
};

// Top-1 accuracies (percent) on D_r, D_u and the test set.
MetricsReport Evaluate(const NetworkSpec& spec, const ParameterTree& params,
                       const FederatedSplit& split, const ForgetSpec& forget);

// Best balanced accuracy (percent) of a loss-threshold attack that calls a
// sample a member when its loss is at or below the threshold.
double MiaFromLosses(const std::vector<double>& members,
                     const std::vector<double>& non_members);

// Subsamples both sets to the smaller size (seeded) before attacking.
double MiaScore(const NetworkSpec& spec, const ParameterTree& params,
                const Dataset& members, const Dataset& non_members,
                std::uint64_t seed);

// Mean of |d retain|, |d forget|, |d test|, |d mia| against the reference.
double AvgGap(const MetricsReport& r, const MetricsReport& reference);

// ---- loss gap and unlearning-time bound ------------------------------------

double MeanLoss(const NetworkSpec& spec, const ParameterTree& params,
                const Dataset& d);

// |L_{D_r} - L_{D_u}|.
double LossGap(const NetworkSpec& spec, const ParameterTree& params,
               const Dataset& retain, const Dataset& forget);

// Losses of the retain and forget sets as functions of flat parameters.
struct LossPair {
  std::function<double(const std::vector<double>&)> retain;
  std::function<double(const std::vector<double>&)> forget;
  std::function<std::vector<double>(const std::vector<double>&)> retain_grad;
  std::function<std::vector<double>(const std::vector<double>&)> forget_grad;
};

LossPair NetworkLossPair(const NetworkSpec& spec, const ParameterTree& like,
                         const Dataset& retain, const Dataset& forget);

struct LossGapTrace {
  std::vector<double> gaps;        // delta at each checkpoint
  std::vector<double> grad_norms;  // ||grad delta|| at each checkpoint
  double lipschitz = 0.0;
  double delta_start = 0.0;        // delta(theta^0)
  double delta_reference = 0.0;    // delta(theta*_retrain)
  double loss_decrease = 0.0;      // |L_r(theta^0) - L_r(theta*_retrain)|
  double stochastic_term = 0.0;    // A
  double epsilon = 0.0;
  double t_unlearn = 0.0;
  bool unbounded = false;          // zero denominator, t_unlearn = +inf
};

// t = (1-eps)^2 (delta(ref) - delta(theta^0))^2 / (Lip^2 (loss_decrease + A)).
// checkpoints[0] is theta^0. Lip is the largest of the gradient norms of delta
// at the checkpoints and the secant slopes between them.
LossGapTrace UnlearningTimeBound(const LossPair& losses,
                                 const std::vector<std::vector<double>>& checkpoints,
                                 const std::vector<double>& reference,
                                 double epsilon = 0.05,
                                 double stochastic_term = 0.0);

// ---- representation similarity ---------------------------------------------

struct CkaResult {
  double value = 0.0;
  bool degenerate = false;  // a centered input had zero variance
};

// Linear CKA of row-aligned activation matrices (n x p) and (n x q); any
// trailing dimensions are flattened.
CkaResult LinearCka(const Tensor& x, const Tensor& y);

struct CkaEntry {
  std::string layer;
  CkaResult cka;
};

// CKA between matched post-activation features of two congruent models:
// every layer with a nonlinearity, then the logits.
std::vector<CkaEntry> CkaDepthProfile(const NetworkSpec& spec,
                                      const ParameterTree& a,
                                      const ParameterTree& b,
                                      const Tensor& probe);

// (CKA_q - CKA_ref) / (1 - CKA_ref), elementwise; a reference of 1 maps to 0.
std::vector<double> NormalizeCka(const std::vector<CkaEntry>& profile,
                                 const std::vector<CkaEntry>& reference);

// ---- eigenvalues and spectral content --------------------------------------

struct EigenResult {
  std::vector<double> values;  // descending
  Tensor vectors;              // columns, same order as values
  std::size_t sweeps = 0;
};

// Cyclic Jacobi on a symmetric matrix (n x n, n <= 256).
EigenResult JacobiEigen(const Tensor& symmetric, double tol = 1e-12);

struct SpectralCurve {
  std::vector<double> psi;     // psi[i] = fraction of mass in the top i+1
  std::vector<double> lambda;  // eigenvalues of the first subset
  double alpha95 = 1.0;
  bool degenerate = false;     // a subset had zero covariance
};

// Spectral content of the empirical covariance of `gradients` (draws x dims)
// restricted to `subsets` random coordinate subsets of size `subset_size`.
SpectralCurve SpectralFromSamples(const std::vector<std::vector<double>>& samples,
                                  std::size_t subset_size, std::size_t subsets,
                                  std::uint64_t seed);

struct SpectralParams {
  std::size_t batch_size = 8;
  std::size_t draws = 200;
  std::size_t subset_size = 64;
  std::size_t subsets = 4;
};

SpectralCurve SpectralContent(const NetworkSpec& spec,
                              const ParameterTree& params, const Dataset& data,
                              const SpectralParams& p, std::uint64_t seed);

// ---- activation distances --------------------------------------------------

struct ActivationDistance {
  double mean_sq_distance = 0.0;  // E||relu(Y) - relu(Y')||^2
  double norm_mismatch = 0.0;     // E| ||relu(Y)||^2 - ||relu(Y')||^2 |
  std::size_t activations = 0;
};

// Y and Y' are the pre-activation outputs of `layer` under the two trees.
ActivationDistance MeasureActivationDistance(const NetworkSpec& spec,
                                             const ParameterTree& original,
                                             const ParameterTree& perturbed,
                                             const std::string& layer,
                                             const Tensor& probe);

// Rescales `layer` of `perturbed` so that E||Y'||^2 equals E||Y||^2 on the
// probe (dense/conv: weight and bias; layernorm: scale only).
ParameterTree MatchOutputNorm(const NetworkSpec& spec,
                              const ParameterTree& original,
                              const ParameterTree& perturbed,
                              const std::string& layer, const Tensor& probe);

struct RatioEstimate {
  double numerator = 0.0;    // E||relu(Y1) - relu(Y2)||^2
  double denominator = 0.0;  // E max distance over nonnegative y, ||y|| = ||relu(Y1)||
  double ratio = 0.0;
};

// Monte-Carlo estimate for independent standard Gaussian Y1, Y2 in R^n.
RatioEstimate ReluDistanceRatio(std::size_t n, std::size_t draws,
                                std::uint64_t seed);

}  // namespace negfu

#endif  // NEGFU_ANALYSIS_H_
