#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace jamlab {

/// Every stochastic operation takes one of these explicitly; there is no global RNG.
using RandomStream = std::mt19937_64;

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Order-sensitive hash of a sequence of words, stable across platforms and releases.
std::uint64_t stable_hash(std::initializer_list<std::uint64_t> words);

/// Seed of one dataset sample, derived so any (class, JNR, realization) cell
/// can be regenerated without touching its neighbours.
std::uint64_t sample_seed(std::uint64_t master_seed, std::uint64_t class_id,
                          std::uint64_t jnr_index, std::uint64_t realization_index);

/// Uniform real in [lo, hi).
double uniform(RandomStream& rng, double lo, double hi);

}  // namespace jamlab
