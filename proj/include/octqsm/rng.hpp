#pragma once

#include <cstdint>
#include <random>

namespace octqsm {

using Rng = std::mt19937_64;

/// splitmix64 finalizer over (base ^ stream * golden ratio). Used to give every
/// dataset entry, epoch and noise stream its own independent seed.
[[nodiscard]] constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base ^ (stream * 0x9E3779B97F4A7C15ULL);
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace octqsm
