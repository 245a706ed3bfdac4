#pragma once

#include <cstdint>
#include <random>

namespace jmstate {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; decorrelates nearby integers.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed of the `stream`-th child of `master` (stream-keyed, order free).
inline std::uint64_t split_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(splitmix64(master) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

inline Rng make_rng(std::uint64_t master, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(split_seed(master, stream)),
                    static_cast<std::uint32_t>(split_seed(master, stream) >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

}  // namespace jmstate
