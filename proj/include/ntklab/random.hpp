#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace ntk {

// SplitMix64 finaliser; derives independent stream seeds from (seed, stream).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// Uniform integer in [0, n) by rejection, independent of the standard
// library's distribution implementation.
std::size_t uniform_index(std::mt19937_64& rng, std::size_t n);

// Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed);

}  // namespace ntk
