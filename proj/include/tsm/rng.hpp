#pragma once

#include <cstdint>
#include <random>

namespace tsm {

// splitmix64 step (Vigna). Used to derive independent seed streams from
// one root seed so every component draws from its own generator.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic seed for stream `stream` of root seed `root`.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  std::uint64_t s = root;
  std::uint64_t mixed = splitmix64(s);
  s = mixed ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
  return splitmix64(s);
}

// Fixed stream ids, one per randomness consumer.
namespace seed_stream {
inline constexpr std::uint64_t kInstanceGen = 1;
inline constexpr std::uint64_t kSvd = 2;
inline constexpr std::uint64_t kPolicyInit = 3;
inline constexpr std::uint64_t kSampling = 4;
inline constexpr std::uint64_t kShuffle = 5;
}  // namespace seed_stream

inline std::mt19937_64 make_rng(std::uint64_t root, std::uint64_t stream) {
  return std::mt19937_64(derive_seed(root, stream));
}

}  // namespace tsm
