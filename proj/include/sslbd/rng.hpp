#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace sslbd {

// Every random stream in the project is an mt19937_64 seeded through
// derive_seed(). The std distributions are implementation defined, so the
// helpers below are used instead wherever results end up on disk.
using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

/// Stable 64-bit FNV-1a hash of a string.
std::uint64_t fnv1a64(std::string_view text);

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

inline Rng make_rng(std::uint64_t seed) { return Rng(splitmix64(seed)); }

/// Unbiased integer in [0, n). n must be positive.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

/// Double in [0, 1) with 53 random bits.
double uniform01(Rng& rng);

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

/// Standard normal via Box-Muller.
double standard_normal(Rng& rng);

}  // namespace sslbd
