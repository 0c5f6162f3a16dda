#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dgossip {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Stream tags keep independent consumers of one experiment seed apart.
enum class Stream : std::uint64_t {
  Init = 1,
  Client = 2,
  Coordinator = 3,
  Topology = 4,
  Jitter = 5,
  Data = 6,
  TestData = 7,
  Partition = 8,
  Model = 9,
};

/// Derive a sub-seed from a base seed and a path of integers. Pure function of its inputs,
/// so per-client streams do not depend on scheduling.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = splitmix64(base);
  for (std::uint64_t p : path) h = splitmix64(h ^ splitmix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  return Rng(derive_seed(base, path));
}

inline std::uint64_t tag(Stream s) { return static_cast<std::uint64_t>(s); }

}  // namespace dgossip
