#include "sslbd/permutations.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "sslbd/errors.hpp"
#include "sslbd/rng.hpp"

namespace sslbd {

int hamming(const TilePermutation& a, const TilePermutation& b) {
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

PermutationSet generate_permutation_set(int count, uint64_t seed) {
  std::vector<TilePermutation> all;
  TilePermutation p;
  std::iota(p.begin(), p.end(), uint8_t{0});
  do all.push_back(p);
  while (std::next_permutation(p.begin(), p.end()));
  if (count < 1 || static_cast<std::size_t>(count) > all.size()) {
    throw ConfigError("permutation_set_size must be in [1, 9!]");
  }

  Rng rng = make_rng(derive_seed(seed, 0x71650));
  std::vector<int> min_dist(all.size(), std::numeric_limits<int>::max());
  PermutationSet set;
  set.min_hamming = 9;
  std::size_t pick = uniform_index(rng, all.size());
  for (int n = 0; n < count; ++n) {
    if (n > 0) {
      pick = static_cast<std::size_t>(std::max_element(min_dist.begin(), min_dist.end()) - min_dist.begin());
      set.min_hamming = std::min(set.min_hamming, min_dist[pick]);
    }
    set.perms.push_back(all[pick]);
    for (std::size_t i = 0; i < all.size(); ++i) min_dist[i] = std::min(min_dist[i], hamming(all[i], all[pick]));
  }
  return set;
}

int min_pairwise_hamming(const std::vector<TilePermutation>& perms) {
  int best = 9;
  for (std::size_t i = 0; i < perms.size(); ++i) {
    for (std::size_t j = i + 1; j < perms.size(); ++j) best = std::min(best, hamming(perms[i], perms[j]));
  }
  return best;
}

}  // namespace sslbd
