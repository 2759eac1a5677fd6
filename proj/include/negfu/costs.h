#ifndef NEGFU_COSTS_H_
#define NEGFU_COSTS_H_

#include <cstdint>
#include <vector>

#include "negfu/network.h"

namespace negfu {

// Counting convention:
//   dense      MACs = in * out per sample
//   conv2d     MACs = out_positions * kernel_volume * out_channels
//   layernorm  MACs = features (the affine scale)
// forward FLOPs = 2 * MACs, backward FLOPs = 2 * forward FLOPs.
struct CostCount {
  std::uint64_t params = 0;
  std::uint64_t fwd_flops = 0;
  std::uint64_t bwd_flops = 0;

  std::uint64_t TrainStepFlops() const { return fwd_flops + bwd_flops; }
};

std::vector<std::uint64_t> LayerMacsPerSample(const NetworkSpec& spec);
CostCount CountCosts(const NetworkSpec& spec, std::uint64_t batch_size);

// Bytes for a full parameter tree at 8 bytes per scalar.
inline std::uint64_t TreeBytes(const CostCount& c) { return c.params * 8; }

}  // namespace negfu

#endif  // NEGFU_COSTS_H_
