#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace sslbd {

using TilePermutation = std::array<uint8_t, 9>;

struct PermutationSet {
  std::vector<TilePermutation> perms;
  /// Smallest pairwise Hamming distance observed during greedy selection.
  int min_hamming = 0;
};

int hamming(const TilePermutation& a, const TilePermutation& b);

/// Greedy max-min Hamming selection of `count` permutations of 9 tiles.
/// The first pick is drawn from `seed`; ties go to the lexicographically
/// smallest candidate.
PermutationSet generate_permutation_set(int count, uint64_t seed);

/// Recomputes the minimum pairwise distance from scratch.
int min_pairwise_hamming(const std::vector<TilePermutation>& perms);

}  // namespace sslbd
