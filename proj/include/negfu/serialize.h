#ifndef NEGFU_SERIALIZE_H_
#define NEGFU_SERIALIZE_H_

#include <iosfwd>
#include <string>

#include "negfu/data.h"
#include "negfu/network.h"

namespace negfu {

// Dataset file, all integers and doubles little-endian:
//   "NFDS" u32 version(1) u32 class_count u32 rank u64 dims[rank]
//   f64 inputs[prod(dims)] u32 labels[dims[0]]
//   u32 generator_length bytes generator u64 seed
void WriteDataset(std::ostream& out, const Dataset& d);
Dataset ReadDataset(std::istream& in);
void SaveDataset(const std::string& path, const Dataset& d);
Dataset LoadDataset(const std::string& path);

// Parameter tree file:
//   "NFPT" u32 version(1) u32 layer_count
//   per layer: u32 name_length bytes name u8 kind u8 has_bias
//              u32 weight_rank u64 weight_dims[...]
//              [u32 bias_rank u64 bias_dims[...]]
//   payload: per layer, weight then bias, f64 each
void WriteTree(std::ostream& out, const ParameterTree& t);
ParameterTree ReadTree(std::istream& in);
void SaveTree(const std::string& path, const ParameterTree& t);
ParameterTree LoadTree(const std::string& path);

}  // namespace negfu

#endif  // NEGFU_SERIALIZE_H_
