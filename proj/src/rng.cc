#include "negfu/rng.h"

namespace negfu {
namespace {

std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t DeriveSeed(std::uint64_t master, std::string_view stream,
                         std::initializer_list<std::uint64_t> counters) {
  std::uint64_t h = SplitMix64(master);
  // FNV-1a over the stream name, folded into the mix.
  std::uint64_t name_hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : stream) {
    name_hash = (name_hash ^ c) * 0x100000001b3ULL;
  }
  h = SplitMix64(h ^ name_hash);
  for (std::uint64_t c : counters) h = SplitMix64(h ^ SplitMix64(c + 1));
  return h;
}

}  // namespace negfu
