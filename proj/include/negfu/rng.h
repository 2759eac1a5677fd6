#ifndef NEGFU_RNG_H_
#define NEGFU_RNG_H_

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace negfu {

using Rng = std::mt19937_64;

// Counter-based seed split: mixes a master seed with a stream name and an
// optional list of counters (round, client, ...) through splitmix64. Distinct
// (name, counters) pairs give statistically independent streams, so enabling
// one analysis never shifts the random draws of another.
std::uint64_t DeriveSeed(std::uint64_t master, std::string_view stream,
                         std::initializer_list<std::uint64_t> counters = {});

inline Rng MakeRng(std::uint64_t master, std::string_view stream,
                   std::initializer_list<std::uint64_t> counters = {}) {
  return Rng(DeriveSeed(master, stream, counters));
}

}  // namespace negfu

#endif  // NEGFU_RNG_H_
