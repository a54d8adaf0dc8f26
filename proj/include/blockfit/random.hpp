#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace blockfit {

using Rng = std::mt19937_64;

/// Independent generator for the stream identified by (seed, ids...).
inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {}) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed),
                                   static_cast<std::uint32_t>(seed >> 32)};
  for (std::uint64_t id : stream) {
    words.push_back(static_cast<std::uint32_t>(id));
    words.push_back(static_cast<std::uint32_t>(id >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

}  // namespace blockfit
