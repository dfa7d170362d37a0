#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace jamident {

using Rng = std::mt19937_64;

// Deterministic stream derived from a base seed and a list of stream
// coordinates (sample index, class, purpose tag, ...). Different coordinate
// tuples give statistically independent engines.
Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {});

// 64-bit mixing function used to derive child seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

} // namespace jamident
