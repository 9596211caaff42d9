#pragma once

#include <cstdint>
#include <random>

namespace arq {

using Rng = std::mt19937_64;

/// Purpose tags for independent random substreams.
enum class StreamPhase : std::uint64_t {
  init = 1,
  shuffle = 2,
  train_noise = 3,
  select = 4,
  estimate = 5,
  disagree = 6,
  calibration = 7,
  agent = 8,
  finetune_subset = 9,
  dataset = 10,
  validation = 11,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed derived only from (seed, id, phase), so a stream's draws never depend
/// on scheduling or on how many other streams were consumed before it.
constexpr std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t id,
                                       StreamPhase phase) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ (id * 0xd6e8feb86659fd93ULL));
  h = splitmix64(h ^ static_cast<std::uint64_t>(phase));
  return h;
}

inline Rng substream(std::uint64_t seed, std::uint64_t id, StreamPhase phase) {
  return Rng(substream_seed(seed, id, phase));
}

}  // namespace arq
