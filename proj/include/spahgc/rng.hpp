#pragma once

#include <cstdint>
#include <string_view>

namespace spahgc {

/// Stage tags used to fan a single user seed out to independent streams.
enum class SeedStage : std::uint64_t {
  kInit = 1,
  kMask = 2,
  kSynth = 3,
  kCluster = 4,
  kGradCheck = 5,
};

/// splitmix64-style mixing of (base, stage, index); distinct inputs give
/// unrelated 64-bit seeds.
std::uint64_t derive_seed(std::uint64_t base, SeedStage stage, std::uint64_t index = 0);

}  // namespace spahgc
