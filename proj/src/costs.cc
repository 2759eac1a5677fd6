#include "negfu/costs.h"

namespace negfu {

std::vector<std::uint64_t> LayerMacsPerSample(const NetworkSpec& spec) {
  const std::vector<Shape> outs = spec.OutputShapes();
  std::vector<std::uint64_t> macs;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const Shape in = i == 0 ? spec.input_shape : outs[i - 1];
    switch (l.kind) {
      case LayerKind::kDense:
        macs.push_back(ShapeSize(in) * l.units);
        break;
      case LayerKind::kConv2d:
        macs.push_back(outs[i][1] * outs[i][2] * in[0] * l.kernel * l.kernel *
                       l.units);
        break;
      case LayerKind::kLayerNorm:
        macs.push_back(ShapeSize(in));
        break;
    }
  }
  return macs;
}

CostCount CountCosts(const NetworkSpec& spec, std::uint64_t batch_size) {
  CostCount c;
  const std::vector<Shape> outs = spec.OutputShapes();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const Shape in = i == 0 ? spec.input_shape : outs[i - 1];
    std::uint64_t w = 0, b = 0;
    switch (l.kind) {
      case LayerKind::kDense:
        w = ShapeSize(in) * l.units;
        b = l.units;
        break;
      case LayerKind::kConv2d:
        w = l.units * in[0] * l.kernel * l.kernel;
        b = l.units;
        break;
      case LayerKind::kLayerNorm:
        w = ShapeSize(in);
        b = ShapeSize(in);
        break;
    }
    c.params += w + (l.bias ? b : 0);
  }
  std::uint64_t macs = 0;
  for (std::uint64_t m : LayerMacsPerSample(spec)) macs += m;
  c.fwd_flops = 2 * macs * batch_size;
  c.bwd_flops = 2 * c.fwd_flops;
  return c;
}

}  // namespace negfu
