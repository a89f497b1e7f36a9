#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sslbd/manifest.hpp"
#include "sslbd/trigger.hpp"

namespace sslbd {

enum class PoisonMode { kTargeted, kUntargeted, kSuperclass };

std::string to_string(PoisonMode mode);
PoisonMode parse_poison_mode(const std::string& text);

struct PoisonRecipe {
  PoisonMode mode = PoisonMode::kTargeted;
  std::vector<int> target_classes;
  /// Fraction of the whole training split carrying the trigger.
  double injection_rate = 0.0;
  /// Fraction of each target class to poison (targeted / superclass).
  double within_class_fraction = 0.0;
  TriggerSpec trigger;
  std::uint64_t rng_seed = 0;
};

/// Round half to even; used for every poison and subset count.
std::int64_t round_half_even(double value);

/// Builds a targeted recipe whose within-class fraction realizes the overall
/// injection rate: round(rate * |train|) images, all from `target`.
PoisonRecipe targeted_recipe_for_rate(const DatasetManifest& train, int target, double rate,
                                      const TriggerSpec& trigger, std::uint64_t seed);

/// Closed-form poisoned count a recipe must produce on this manifest.
std::int64_t expected_poison_count(const DatasetManifest& manifest, const PoisonRecipe& recipe);

DatasetManifest poison_targeted(const DatasetManifest& manifest, const PoisonRecipe& recipe);
DatasetManifest poison_untargeted(const DatasetManifest& manifest, double rate, const TriggerSpec& trigger,
                                  std::uint64_t rng_seed);
DatasetManifest poison_superclass(const DatasetManifest& manifest, const PoisonRecipe& recipe);
/// Dispatches on recipe.mode.
DatasetManifest apply_recipe(const DatasetManifest& manifest, const PoisonRecipe& recipe);

/// Every validation entry receives the trigger at its own sampled location.
DatasetManifest build_patched_valset(const DatasetManifest& val, const TriggerSpec& trigger, std::uint64_t rng_seed);

struct MaterializeResult {
  DatasetManifest manifest;  // paths rewritten relative to out_root
  std::filesystem::path manifest_path;
  std::string manifest_hash;
  std::size_t poisoned_written = 0;
  std::size_t clean_copied = 0;
};

/// Writes <out_root>/<split>/<class>/<image_id>.png for every entry. Clean
/// entries are byte copies of the source; poisoned ones are re-encoded PNGs
/// with the trigger pasted, plus their clean twin under
/// <out_root>/clean_twins/. The frozen manifest goes to
/// <out_root>/manifest_<split>.json with a .sha256 sidecar.
MaterializeResult materialize(const DatasetManifest& manifest, const std::filesystem::path& source_root,
                              const std::filesystem::path& out_root);

}  // namespace sslbd
