#pragma once

#include <cstdint>
#include <random>

namespace taxo {

using Rng = std::mt19937_64;

/// Mixes a parent seed with a stream tag into an independent child seed
/// (splitmix64 finaliser over the pair).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Stream tags used when deriving seeds, so call sites cannot collide.
namespace seed_tag {
inline constexpr std::uint64_t kSplit = 1;
inline constexpr std::uint64_t kBaseline = 2;       // M0 of the taxonomy run
inline constexpr std::uint64_t kFinal = 3;          // head of the final model
inline constexpr std::uint64_t kShuffle = 4;        // timestep permutations
inline constexpr std::uint64_t kPretrain = 5;       // shuffle/hierarchy pretraining
inline constexpr std::uint64_t kLevel = 100;        // + level index
inline constexpr std::uint64_t kRepetition = 1000;  // + repetition index
}  // namespace seed_tag

}  // namespace taxo
