#include "negfu/network.h"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "negfu/errors.h"

namespace negfu {
namespace {

constexpr double kZeroVariance = 1e-12;
constexpr std::size_t kEvalChunk = 512;

double Sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double ActivationGrad(Activation act, double pre, double post) {
  switch (act) {
    case Activation::kIdentity: return 1.0;
    case Activation::kRelu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::kTanh: return 1.0 - post * post;
    case Activation::kSigmoid: return post * (1.0 - post);
    case Activation::kStep: return 0.0;
  }
  return 0.0;
}

void DenseForward(const LayerParams& p, const Tensor& in, Tensor& out) {
  const std::size_t batch = in.dim(0);
  const std::size_t n_in = in.RowSize();
  const std::size_t n_out = p.weight.dim(0);
  const double* w = p.weight.data().data();
  const double* x = in.data().data();
  double* y = out.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xb = x + b * n_in;
    for (std::size_t o = 0; o < n_out; ++o) {
      const double* wo = w + o * n_in;
      double acc = p.bias ? (*p.bias)[o] : 0.0;
      for (std::size_t i = 0; i < n_in; ++i) acc += wo[i] * xb[i];
      y[b * n_out + o] = acc;
    }
  }
}

void DenseBackward(const LayerParams& p, const Tensor& in, const Tensor& dy,
                   LayerParams& g, Tensor* dx) {
  const std::size_t batch = in.dim(0);
  const std::size_t n_in = in.RowSize();
  const std::size_t n_out = p.weight.dim(0);
  const double* w = p.weight.data().data();
  const double* x = in.data().data();
  const double* d = dy.data().data();
  double* gw = g.weight.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xb = x + b * n_in;
    for (std::size_t o = 0; o < n_out; ++o) {
      const double dv = d[b * n_out + o];
      if (g.bias) (*g.bias)[o] += dv;
      double* gwo = gw + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) gwo[i] += dv * xb[i];
    }
  }
  if (dx == nullptr) return;
  double* dxp = dx->data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    double* dxb = dxp + b * n_in;
    for (std::size_t o = 0; o < n_out; ++o) {
      const double dv = d[b * n_out + o];
      const double* wo = w + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) dxb[i] += dv * wo[i];
    }
  }
}

struct ConvDims {
  std::size_t batch, in_c, in_h, in_w, out_c, k, out_h, out_w;
};

ConvDims GetConvDims(const LayerParams& p, const Tensor& in) {
  ConvDims d{};
  d.batch = in.dim(0);
  d.in_c = in.dim(1);
  d.in_h = in.dim(2);
  d.in_w = in.dim(3);
  d.out_c = p.weight.dim(0);
  d.k = p.weight.dim(2);
  d.out_h = d.in_h - d.k + 1;
  d.out_w = d.in_w - d.k + 1;
  return d;
}

void ConvForward(const LayerParams& p, const Tensor& in, Tensor& out) {
  const ConvDims d = GetConvDims(p, in);
  const double* w = p.weight.data().data();
  const double* x = in.data().data();
  double* y = out.data().data();
  const std::size_t in_plane = d.in_h * d.in_w;
  const std::size_t out_plane = d.out_h * d.out_w;
  for (std::size_t b = 0; b < d.batch; ++b) {
    const double* xb = x + b * d.in_c * in_plane;
    for (std::size_t o = 0; o < d.out_c; ++o) {
      double* yo = y + (b * d.out_c + o) * out_plane;
      const double bias = p.bias ? (*p.bias)[o] : 0.0;
      for (std::size_t i = 0; i < out_plane; ++i) yo[i] = bias;
      for (std::size_t c = 0; c < d.in_c; ++c) {
        const double* xc = xb + c * in_plane;
        const double* wc = w + (o * d.in_c + c) * d.k * d.k;
        for (std::size_t ky = 0; ky < d.k; ++ky) {
          for (std::size_t kx = 0; kx < d.k; ++kx) {
            const double wv = wc[ky * d.k + kx];
            for (std::size_t oy = 0; oy < d.out_h; ++oy) {
              const double* row = xc + (oy + ky) * d.in_w + kx;
              double* yrow = yo + oy * d.out_w;
              for (std::size_t ox = 0; ox < d.out_w; ++ox) {
                yrow[ox] += wv * row[ox];
              }
            }
          }
        }
      }
    }
  }
}

void ConvBackward(const LayerParams& p, const Tensor& in, const Tensor& dy,
                  LayerParams& g, Tensor* dx) {
  const ConvDims d = GetConvDims(p, in);
  const double* w = p.weight.data().data();
  const double* x = in.data().data();
  const double* dyp = dy.data().data();
  double* gw = g.weight.data().data();
  double* dxp = dx ? dx->data().data() : nullptr;
  const std::size_t in_plane = d.in_h * d.in_w;
  const std::size_t out_plane = d.out_h * d.out_w;
  for (std::size_t b = 0; b < d.batch; ++b) {
    const double* xb = x + b * d.in_c * in_plane;
    for (std::size_t o = 0; o < d.out_c; ++o) {
      const double* dyo = dyp + (b * d.out_c + o) * out_plane;
      if (g.bias) {
        double s = 0.0;
        for (std::size_t i = 0; i < out_plane; ++i) s += dyo[i];
        (*g.bias)[o] += s;
      }
      for (std::size_t c = 0; c < d.in_c; ++c) {
        const double* xc = xb + c * in_plane;
        const std::size_t wbase = (o * d.in_c + c) * d.k * d.k;
        double* dxc = dxp ? dxp + (b * d.in_c + c) * in_plane : nullptr;
        for (std::size_t ky = 0; ky < d.k; ++ky) {
          for (std::size_t kx = 0; kx < d.k; ++kx) {
            const double wv = w[wbase + ky * d.k + kx];
            double acc = 0.0;
            for (std::size_t oy = 0; oy < d.out_h; ++oy) {
              const double* row = xc + (oy + ky) * d.in_w + kx;
              const double* drow = dyo + oy * d.out_w;
              for (std::size_t ox = 0; ox < d.out_w; ++ox) {
                acc += drow[ox] * row[ox];
              }
              if (dxc) {
                double* dxrow = dxc + (oy + ky) * d.in_w + kx;
                for (std::size_t ox = 0; ox < d.out_w; ++ox) {
                  dxrow[ox] += drow[ox] * wv;
                }
              }
            }
            gw[wbase + ky * d.k + kx] += acc;
          }
        }
      }
    }
  }
}

// y = scale * (xhat + shift): the shift sits inside the scale, so negating
// both parameters flips the sign of the whole affine map.
void LayerNormForward(const LayerParams& p, const Tensor& in, LayerTrace& t) {
  const std::size_t batch = in.dim(0);
  const std::size_t n = in.RowSize();
  t.inv_std.assign(batch, 0.0);
  const double* x = in.data().data();
  double* xh = t.normalized.data().data();
  double* y = t.pre.data().data();
  const double* gamma = p.weight.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xb = x + b * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xb[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xb[j] - mean) * (xb[j] - mean);
    var /= static_cast<double>(n);
    const double inv = var < kZeroVariance ? 0.0 : 1.0 / std::sqrt(var);
    t.inv_std[b] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = (xb[j] - mean) * inv;
      xh[b * n + j] = v;
      y[b * n + j] = gamma[j] * (v + (p.bias ? (*p.bias)[j] : 0.0));
    }
  }
}

void LayerNormBackward(const LayerParams& p, const LayerTrace& t,
                       const Tensor& dy, LayerParams& g, Tensor* dx) {
  const std::size_t batch = dy.dim(0);
  const std::size_t n = dy.RowSize();
  const double* xh = t.normalized.data().data();
  const double* d = dy.data().data();
  const double* gamma = p.weight.data().data();
  std::vector<double> dxhat(n);
  for (std::size_t b = 0; b < batch; ++b) {
    double mean_d = 0.0;
    double mean_dx = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double shift = p.bias ? (*p.bias)[j] : 0.0;
      const double dv = d[b * n + j];
      g.weight[j] += dv * (xh[b * n + j] + shift);
      if (g.bias) (*g.bias)[j] += dv * gamma[j];
      dxhat[j] = dv * gamma[j];
      mean_d += dxhat[j];
      mean_dx += dxhat[j] * xh[b * n + j];
    }
    if (dx == nullptr || t.inv_std[b] == 0.0) continue;
    mean_d /= static_cast<double>(n);
    mean_dx /= static_cast<double>(n);
    double* dxb = dx->data().data() + b * n;
    for (std::size_t j = 0; j < n; ++j) {
      dxb[j] += t.inv_std[b] * (dxhat[j] - mean_d - xh[b * n + j] * mean_dx);
    }
  }
}

Shape BatchShape(std::size_t batch, const Shape& sample) {
  Shape s{batch};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

void CheckBatch(const NetworkSpec& spec, const Tensor& batch) {
  if (batch.rank() != spec.input_shape.size() + 1 ||
      !std::equal(spec.input_shape.begin(), spec.input_shape.end(),
                  batch.shape().begin() + 1)) {
    throw ShapeError("batch shape " + ShapeToString(batch.shape()) +
                     " does not match input shape " +
                     ShapeToString(spec.input_shape));
  }
  CheckFinite(batch, "network input");
}

// Softmax cross-entropy: returns mean loss, writes dL/dlogits if requested.
double SoftmaxCrossEntropy(const Tensor& logits, std::span<const int> labels,
                           Tensor* dlogits, std::vector<double>* per_sample) {
  const std::size_t batch = logits.dim(0);
  const std::size_t k = logits.RowSize();
  if (labels.size() != batch) {
    throw ShapeError("label count does not match batch size");
  }
  double total = 0.0;
  std::vector<double> p(k);
  for (std::size_t b = 0; b < batch; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw InvalidArgument("label " + std::to_string(y) + " out of range");
    }
    const double* z = logits.data().data() + b * k;
    const double zmax = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p[j] = std::exp(z[j] - zmax);
      sum += p[j];
    }
    const double loss = -(z[y] - zmax - std::log(sum));
    total += loss;
    if (per_sample) per_sample->push_back(loss);
    if (dlogits) {
      double* dz = dlogits->data().data() + b * k;
      for (std::size_t j = 0; j < k; ++j) {
        dz[j] = (p[j] / sum - (static_cast<int>(j) == y ? 1.0 : 0.0)) /
                static_cast<double>(batch);
      }
    }
  }
  return total / static_cast<double>(batch);
}

}  // namespace

std::string_view ToString(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kLayerNorm: return "layernorm";
  }
  return "?";
}

std::string_view ToString(Activation act) {
  switch (act) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kStep: return "step";
  }
  return "?";
}

std::optional<LayerKind> ParseLayerKind(std::string_view s) {
  for (LayerKind k :
       {LayerKind::kDense, LayerKind::kConv2d, LayerKind::kLayerNorm}) {
    if (ToString(k) == s) return k;
  }
  return std::nullopt;
}

std::optional<Activation> ParseActivation(std::string_view s) {
  for (Activation a : {Activation::kIdentity, Activation::kRelu,
                       Activation::kTanh, Activation::kSigmoid,
                       Activation::kStep}) {
    if (ToString(a) == s) return a;
  }
  return std::nullopt;
}

double Activate(Activation act, double x) {
  switch (act) {
    case Activation::kIdentity: return x;
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kTanh: return std::tanh(x);
    case Activation::kSigmoid: return Sigmoid(x);
    case Activation::kStep: return x > 0.0 ? 1.0 : (x == 0.0 ? 0.5 : 0.0);
  }
  return x;
}

std::vector<Shape> NetworkSpec::OutputShapes() const {
  if (input_shape.empty() || ShapeSize(input_shape) == 0) {
    throw ShapeError("network input shape must be nonempty");
  }
  if (layers.empty()) throw ShapeError("network has no trainable layer");
  std::unordered_set<std::string> names;
  std::vector<Shape> out;
  Shape cur = input_shape;
  for (const LayerSpec& l : layers) {
    if (l.name.empty()) throw ShapeError("layer name must be nonempty");
    if (!names.insert(l.name).second) {
      throw ShapeError("duplicate layer name '" + l.name + "'");
    }
    switch (l.kind) {
      case LayerKind::kDense:
        if (l.units == 0) throw ShapeError(l.name + ": dense needs units > 0");
        cur = {l.units};
        break;
      case LayerKind::kConv2d:
        if (cur.size() != 3) {
          throw ShapeError(l.name + ": conv2d needs a (C,H,W) input, got " +
                           ShapeToString(cur));
        }
        if (l.units == 0 || l.kernel == 0 || l.kernel > cur[1] ||
            l.kernel > cur[2]) {
          throw ShapeError(l.name + ": bad conv2d channels/kernel");
        }
        cur = {l.units, cur[1] - l.kernel + 1, cur[2] - l.kernel + 1};
        break;
      case LayerKind::kLayerNorm:
        break;
    }
    out.push_back(cur);
  }
  if (cur.size() != 1 || cur[0] < 2) {
    throw ShapeError("last layer must output a vector of >= 2 class logits");
  }
  return out;
}

Shape NetworkSpec::LayerInputShape(std::size_t layer) const {
  if (layer == 0) return input_shape;
  return OutputShapes().at(layer - 1);
}

std::size_t NetworkSpec::ClassCount() const {
  return OutputShapes().back()[0];
}

std::size_t NetworkSpec::IndexOf(std::string_view name) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].name == name) return i;
  }
  throw InvalidArgument("unknown layer '" + std::string(name) + "'");
}

ParameterTree::ParameterTree(std::vector<LayerParams> layers)
    : layers_(std::move(layers)) {
  std::unordered_set<std::string> names;
  for (const LayerParams& l : layers_) {
    if (!names.insert(l.name).second) {
      throw InvalidArgument("duplicate layer name '" + l.name + "'");
    }
  }
}

bool ParameterTree::Contains(std::string_view name) const {
  return std::any_of(layers_.begin(), layers_.end(),
                     [&](const LayerParams& l) { return l.name == name; });
}

std::size_t ParameterTree::IndexOf(std::string_view name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == name) return i;
  }
  throw InvalidArgument("unknown layer '" + std::string(name) + "'");
}

std::size_t ParameterTree::ParameterCount() const {
  std::size_t n = 0;
  for (const LayerParams& l : layers_) n += l.Size();
  return n;
}

bool ParameterTree::Congruent(const ParameterTree& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerParams& a = layers_[i];
    const LayerParams& b = other.layers_[i];
    if (a.name != b.name || a.kind != b.kind ||
        a.weight.shape() != b.weight.shape() ||
        a.bias.has_value() != b.bias.has_value() ||
        (a.bias && a.bias->shape() != b.bias->shape())) {
      return false;
    }
  }
  return true;
}

bool ParameterTree::BitEqual(const ParameterTree& other) const {
  if (!Congruent(other)) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!layers_[i].weight.BitEqual(other.layers_[i].weight)) return false;
    if (layers_[i].bias && !layers_[i].bias->BitEqual(*other.layers_[i].bias)) {
      return false;
    }
  }
  return true;
}

bool ParameterTree::AllFinite() const {
  for (const LayerParams& l : layers_) {
    if (!l.weight.AllFinite() || (l.bias && !l.bias->AllFinite())) return false;
  }
  return true;
}

std::vector<double> ParameterTree::Flatten() const {
  std::vector<double> out;
  out.reserve(ParameterCount());
  for (const LayerParams& l : layers_) {
    out.insert(out.end(), l.weight.data().begin(), l.weight.data().end());
    if (l.bias) out.insert(out.end(), l.bias->data().begin(), l.bias->data().end());
  }
  return out;
}

void ParameterTree::AssignFlat(std::span<const double> values) {
  if (values.size() != ParameterCount()) {
    throw ShapeError("flat parameter vector has wrong length");
  }
  std::size_t pos = 0;
  for (LayerParams& l : layers_) {
    std::copy_n(values.begin() + pos, l.weight.size(), l.weight.data().begin());
    pos += l.weight.size();
    if (l.bias) {
      std::copy_n(values.begin() + pos, l.bias->size(), l.bias->data().begin());
      pos += l.bias->size();
    }
  }
}

void ParameterTree::Scale(double factor) {
  for (LayerParams& l : layers_) {
    l.weight.Scale(factor);
    if (l.bias) l.bias->Scale(factor);
  }
}

void ParameterTree::Axpy(double factor, const ParameterTree& other) {
  if (!Congruent(other)) throw ShapeError("axpy on incongruent trees");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].weight.Axpy(factor, other.layers_[i].weight);
    if (layers_[i].bias) layers_[i].bias->Axpy(factor, *other.layers_[i].bias);
  }
}

double ParameterTree::SquaredNorm() const {
  double s = 0.0;
  for (const LayerParams& l : layers_) {
    s += l.weight.SquaredNorm();
    if (l.bias) s += l.bias->SquaredNorm();
  }
  return s;
}

ParameterTree ParameterTree::ZerosLike() const {
  ParameterTree z = *this;
  for (LayerParams& l : z.layers_) {
    l.weight.Fill(0.0);
    if (l.bias) l.bias->Fill(0.0);
  }
  return z;
}

void CheckCompatible(const NetworkSpec& spec, const ParameterTree& params) {
  const std::vector<Shape> outs = spec.OutputShapes();
  if (params.size() != spec.layers.size()) {
    throw ShapeError("parameter tree has " + std::to_string(params.size()) +
                     " layers, network expects " +
                     std::to_string(spec.layers.size()));
  }
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const LayerParams& p = params.layer(i);
    const Shape in = i == 0 ? spec.input_shape : outs[i - 1];
    Shape w, b;
    switch (l.kind) {
      case LayerKind::kDense:
        w = {l.units, ShapeSize(in)};
        b = {l.units};
        break;
      case LayerKind::kConv2d:
        w = {l.units, in[0], l.kernel, l.kernel};
        b = {l.units};
        break;
      case LayerKind::kLayerNorm:
        w = in;
        b = in;
        break;
    }
    if (p.name != l.name || p.kind != l.kind || p.weight.shape() != w ||
        p.bias.has_value() != l.bias || (p.bias && p.bias->shape() != b)) {
      throw ShapeError("parameters of layer '" + l.name +
                       "' do not match the network spec");
    }
  }
}

LayerParams InitLayer(const NetworkSpec& spec, std::size_t layer, Rng& rng) {
  const LayerSpec& l = spec.layers.at(layer);
  const Shape in = spec.LayerInputShape(layer);
  LayerParams p;
  p.name = l.name;
  p.kind = l.kind;
  if (l.kind == LayerKind::kLayerNorm) {
    p.weight = Tensor(in, 1.0);
    if (l.bias) p.bias = Tensor(in, 0.0);
    return p;
  }
  std::size_t fan_in = 0;
  if (l.kind == LayerKind::kDense) {
    fan_in = ShapeSize(in);
    p.weight = Tensor({l.units, fan_in});
  } else {
    fan_in = in[0] * l.kernel * l.kernel;
    p.weight = Tensor({l.units, in[0], l.kernel, l.kernel});
  }
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : p.weight.data()) v = u(rng);
  if (l.bias) {
    p.bias = Tensor({l.units});
    for (double& v : p.bias->data()) v = u(rng);
  }
  return p;
}

ParameterTree InitParameters(const NetworkSpec& spec, Rng& rng) {
  spec.OutputShapes();
  std::vector<LayerParams> layers;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    layers.push_back(InitLayer(spec, i, rng));
  }
  return ParameterTree(std::move(layers));
}

ForwardTrace TraceForward(const NetworkSpec& spec, const ParameterTree& params,
                          const Tensor& batch) {
  CheckBatch(spec, batch);
  CheckCompatible(spec, params);
  const std::vector<Shape> outs = spec.OutputShapes();
  const std::size_t n = batch.dim(0);
  ForwardTrace trace;
  trace.input = batch;
  trace.layers.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const LayerParams& p = params.layer(i);
    LayerTrace& t = trace.layers[i];
    const Tensor& in = trace.LayerInput(i);
    t.pre = Tensor(BatchShape(n, outs[i]));
    switch (l.kind) {
      case LayerKind::kDense:
        DenseForward(p, in, t.pre);
        break;
      case LayerKind::kConv2d:
        ConvForward(p, in, t.pre);
        break;
      case LayerKind::kLayerNorm:
        t.normalized = Tensor(in.shape());
        LayerNormForward(p, in, t);
        break;
    }
    if (l.activation == Activation::kIdentity) {
      t.post = t.pre;
    } else {
      t.post = Tensor(t.pre.shape());
      for (std::size_t j = 0; j < t.pre.size(); ++j) {
        t.post[j] = Activate(l.activation, t.pre[j]);
      }
    }
  }
  CheckFinite(trace.logits(), "network output");
  return trace;
}

ForwardResult Forward(const NetworkSpec& spec, const ParameterTree& params,
                      const Tensor& batch,
                      const std::set<std::string>& capture) {
  for (const std::string& name : capture) spec.IndexOf(name);
  ForwardTrace trace = TraceForward(spec, params, batch);
  ForwardResult r;
  for (const std::string& name : capture) {
    r.activations.emplace(name, trace.layers[spec.IndexOf(name)].pre);
  }
  r.logits = std::move(trace.layers.back().post);
  return r;
}

GradTree Backward(const NetworkSpec& spec, const ParameterTree& params,
                  const Tensor& batch, std::span<const int> labels) {
  ForwardTrace trace = TraceForward(spec, params, batch);
  GradTree out;
  out.grads = params.ZerosLike();
  Tensor d_post(trace.logits().shape());
  out.loss = SoftmaxCrossEntropy(trace.logits(), labels, &d_post, nullptr);
  for (std::size_t ii = spec.layers.size(); ii-- > 0;) {
    const LayerSpec& l = spec.layers[ii];
    const LayerTrace& t = trace.layers[ii];
    Tensor d_pre = std::move(d_post);
    if (l.activation != Activation::kIdentity) {
      for (std::size_t j = 0; j < d_pre.size(); ++j) {
        d_pre[j] *= ActivationGrad(l.activation, t.pre[j], t.post[j]);
      }
    }
    const Tensor& in = trace.LayerInput(ii);
    Tensor dx;
    Tensor* dx_ptr = nullptr;
    if (ii > 0) {
      dx = Tensor(in.shape());
      dx_ptr = &dx;
    }
    LayerParams& g = out.grads.layer(ii);
    const LayerParams& p = params.layer(ii);
    switch (l.kind) {
      case LayerKind::kDense:
        DenseBackward(p, in, d_pre, g, dx_ptr);
        break;
      case LayerKind::kConv2d:
        ConvBackward(p, in, d_pre, g, dx_ptr);
        break;
      case LayerKind::kLayerNorm:
        LayerNormBackward(p, t, d_pre, g, dx_ptr);
        break;
    }
    d_post = std::move(dx);
  }
  if (!out.grads.AllFinite() || !std::isfinite(out.loss)) {
    throw NonFiniteError("non-finite gradient or loss in backward pass");
  }
  return out;
}

GradTree FullGradient(const NetworkSpec& spec, const ParameterTree& params,
                      const Tensor& inputs, std::span<const int> labels,
                      std::size_t chunk) {
  const std::size_t n = inputs.dim(0);
  if (labels.size() != n) throw ShapeError("label count mismatch");
  GradTree total;
  total.grads = params.ZerosLike();
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    GradTree g = Backward(spec, params, inputs.Slice(begin, end),
                          labels.subspan(begin, end - begin));
    const double w = static_cast<double>(end - begin) / static_cast<double>(n);
    total.grads.Axpy(w, g.grads);
    total.loss += w * g.loss;
  }
  return total;
}

std::vector<double> PerSampleLoss(const NetworkSpec& spec,
                                  const ParameterTree& params,
                                  const Tensor& inputs,
                                  std::span<const int> labels) {
  const std::size_t n = inputs.dim(0);
  if (labels.size() != n) throw ShapeError("label count mismatch");
  std::vector<double> losses;
  losses.reserve(n);
  for (std::size_t begin = 0; begin < n; begin += kEvalChunk) {
    const std::size_t end = std::min(n, begin + kEvalChunk);
    ForwardResult r = Forward(spec, params, inputs.Slice(begin, end));
    SoftmaxCrossEntropy(r.logits, labels.subspan(begin, end - begin), nullptr,
                        &losses);
  }
  return losses;
}

std::vector<int> Predict(const NetworkSpec& spec, const ParameterTree& params,
                         const Tensor& inputs) {
  const std::size_t n = inputs.dim(0);
  std::vector<int> out;
  out.reserve(n);
  for (std::size_t begin = 0; begin < n; begin += kEvalChunk) {
    const std::size_t end = std::min(n, begin + kEvalChunk);
    ForwardResult r = Forward(spec, params, inputs.Slice(begin, end));
    const std::size_t k = r.logits.RowSize();
    for (std::size_t b = 0; b < end - begin; ++b) {
      const double* z = r.logits.data().data() + b * k;
      // max_element returns the first maximum: lowest index wins ties.
      out.push_back(static_cast<int>(std::max_element(z, z + k) - z));
    }
  }
  return out;
}

LossAccuracy EvaluateLossAccuracy(const NetworkSpec& spec,
                                  const ParameterTree& params,
                                  const Tensor& inputs,
                                  std::span<const int> labels) {
  const std::size_t n = inputs.dim(0);
  if (labels.size() != n) throw ShapeError("label count mismatch");
  LossAccuracy out;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < n; begin += kEvalChunk) {
    const std::size_t end = std::min(n, begin + kEvalChunk);
    ForwardResult r = Forward(spec, params, inputs.Slice(begin, end));
    auto lab = labels.subspan(begin, end - begin);
    out.loss += SoftmaxCrossEntropy(r.logits, lab, nullptr, nullptr) *
                static_cast<double>(end - begin);
    const std::size_t k = r.logits.RowSize();
    for (std::size_t b = 0; b < end - begin; ++b) {
      const double* z = r.logits.data().data() + b * k;
      if (std::max_element(z, z + k) - z == lab[b]) ++correct;
    }
  }
  out.loss /= static_cast<double>(n);
  out.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(n);
  return out;
}

}  // namespace negfu
