#ifndef NEGFU_NETWORK_H_
#define NEGFU_NETWORK_H_

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "negfu/rng.h"
#include "negfu/tensor.h"

namespace negfu {

enum class LayerKind { kDense, kConv2d, kLayerNorm };

// kStep is 1 for x > 0, 1/2 at 0 and 0 below. Its derivative is taken as 0,
// so it is usable in forward-only analyses but never trains.
enum class Activation { kIdentity, kRelu, kTanh, kSigmoid, kStep };

std::string_view ToString(LayerKind kind);
std::string_view ToString(Activation act);
std::optional<LayerKind> ParseLayerKind(std::string_view s);
std::optional<Activation> ParseActivation(std::string_view s);

double Activate(Activation act, double x);

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::kDense;
  // Output features (dense) or output channels (conv2d). Unused by layernorm.
  std::size_t units = 0;
  // Square kernel side, conv2d only. Stride 1, valid padding.
  std::size_t kernel = 0;
  Activation activation = Activation::kIdentity;
  bool bias = true;
};

// Sequential architecture. Dense layers flatten their input. The last layer
// produces the class logits, trained with softmax cross-entropy.
struct NetworkSpec {
  Shape input_shape;
  std::vector<LayerSpec> layers;

  // Per-layer output shapes (per sample). Throws ShapeError when the layers
  // do not compose.
  std::vector<Shape> OutputShapes() const;
  Shape LayerInputShape(std::size_t layer) const;
  std::size_t ClassCount() const;
  std::size_t IndexOf(std::string_view name) const;
};

struct LayerParams {
  std::string name;
  LayerKind kind = LayerKind::kDense;
  Tensor weight;
  std::optional<Tensor> bias;

  std::size_t Size() const {
    return weight.size() + (bias ? bias->size() : 0);
  }
};

// Ordered, named layer parameters. Layer order is the computational order
// and is fixed at construction.
class ParameterTree {
 public:
  ParameterTree() = default;
  explicit ParameterTree(std::vector<LayerParams> layers);

  std::size_t size() const { return layers_.size(); }
  const std::vector<LayerParams>& layers() const { return layers_; }
  const LayerParams& layer(std::size_t i) const { return layers_.at(i); }
  LayerParams& layer(std::size_t i) { return layers_.at(i); }

  bool Contains(std::string_view name) const;
  std::size_t IndexOf(std::string_view name) const;
  const LayerParams& Find(std::string_view name) const {
    return layers_[IndexOf(name)];
  }

  std::size_t ParameterCount() const;
  // Same names, kinds and tensor shapes, in the same order.
  bool Congruent(const ParameterTree& other) const;
  bool BitEqual(const ParameterTree& other) const;
  bool AllFinite() const;

  std::vector<double> Flatten() const;
  void AssignFlat(std::span<const double> values);

  void Scale(double factor);
  void Axpy(double factor, const ParameterTree& other);
  double SquaredNorm() const;
  // Copy with every element set to zero.
  ParameterTree ZerosLike() const;

 private:
  std::vector<LayerParams> layers_;
};

// Throws ShapeError unless `params` carries exactly the tensors `spec` needs.
void CheckCompatible(const NetworkSpec& spec, const ParameterTree& params);

// Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) for dense and conv weights and
// biases; layernorm starts at scale 1, shift 0.
LayerParams InitLayer(const NetworkSpec& spec, std::size_t layer, Rng& rng);
ParameterTree InitParameters(const NetworkSpec& spec, Rng& rng);

struct Network {
  NetworkSpec spec;
  ParameterTree params;
};

// Every intermediate of one forward pass. `pre` is the layer output before
// its activation (Y_l), `post` after it.
struct LayerTrace {
  Tensor pre;
  Tensor post;
  Tensor normalized;             // layernorm only
  std::vector<double> inv_std;   // layernorm only, per sample; 0 if degenerate
};

struct ForwardTrace {
  Tensor input;
  std::vector<LayerTrace> layers;
  const Tensor& logits() const { return layers.back().post; }
  const Tensor& LayerInput(std::size_t i) const {
    return i == 0 ? input : layers[i - 1].post;
  }
};

ForwardTrace TraceForward(const NetworkSpec& spec, const ParameterTree& params,
                          const Tensor& batch);

struct ForwardResult {
  Tensor logits;
  // Pre-activation outputs of the requested layers.
  std::map<std::string, Tensor> activations;
};

ForwardResult Forward(const NetworkSpec& spec, const ParameterTree& params,
                      const Tensor& batch,
                      const std::set<std::string>& capture = {});

struct GradTree {
  ParameterTree grads;
  double loss = 0.0;
};

// Gradient of the mean softmax cross-entropy over the batch.
GradTree Backward(const NetworkSpec& spec, const ParameterTree& params,
                  const Tensor& batch, std::span<const int> labels);

// Mean loss and gradient over an arbitrarily large set, evaluated in chunks.
GradTree FullGradient(const NetworkSpec& spec, const ParameterTree& params,
                      const Tensor& inputs, std::span<const int> labels,
                      std::size_t chunk = 256);

std::vector<double> PerSampleLoss(const NetworkSpec& spec,
                                  const ParameterTree& params,
                                  const Tensor& inputs,
                                  std::span<const int> labels);

// Argmax class per sample; ties go to the lowest class index.
std::vector<int> Predict(const NetworkSpec& spec, const ParameterTree& params,
                         const Tensor& inputs);

struct LossAccuracy {
  double loss = 0.0;
  double accuracy = 0.0;  // percent
};

LossAccuracy EvaluateLossAccuracy(const NetworkSpec& spec,
                                  const ParameterTree& params,
                                  const Tensor& inputs,
                                  std::span<const int> labels);

}  // namespace negfu

#endif  // NEGFU_NETWORK_H_
