#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace isfl {

using Rng = std::mt19937_64;

/// Derives an independent stream from a base seed and a list of tags
/// (round, client, purpose...). Streams never depend on thread scheduling.
inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags = {}) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * tags.size());
  words.push_back(static_cast<std::uint32_t>(seed));
  words.push_back(static_cast<std::uint32_t>(seed >> 32));
  for (std::uint64_t t : tags) {
    words.push_back(static_cast<std::uint32_t>(t));
    words.push_back(static_cast<std::uint32_t>(t >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

// Stream purpose tags.
enum class Stream : std::uint64_t {
  kData = 1,
  kPartition = 2,
  kProbe = 3,
  kInit = 4,
  kTrain = 5,
  kStats = 6,
  kSplit = 7,
  kAnchors = 8,
};

inline std::uint64_t tag(Stream s) { return static_cast<std::uint64_t>(s); }

}  // namespace isfl
