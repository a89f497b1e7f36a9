#include "sslbd/poison.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "sslbd/errors.hpp"
#include "sslbd/hashing.hpp"

namespace sslbd {

namespace fs = std::filesystem;

std::string to_string(PoisonMode mode) {
  switch (mode) {
    case PoisonMode::kTargeted: return "targeted";
    case PoisonMode::kUntargeted: return "untargeted";
    case PoisonMode::kSuperclass: return "superclass";
  }
  return "targeted";
}

PoisonMode parse_poison_mode(const std::string& text) {
  if (text == "targeted") return PoisonMode::kTargeted;
  if (text == "untargeted") return PoisonMode::kUntargeted;
  if (text == "superclass") return PoisonMode::kSuperclass;
  throw ConfigError("unknown poison mode '" + text + "'");
}

std::int64_t round_half_even(double value) { return static_cast<std::int64_t>(std::nearbyint(value)); }

namespace {

void check_fraction(double f, const char* what) {
  if (!(f >= 0.0 && f <= 1.0)) throw ConfigError(std::string(what) + " must lie in [0, 1]");
}

void require_train_split(const DatasetManifest& m) {
  for (const auto& e : m.entries) {
    if (e.split != Split::kTrain) throw ConfigError("poisoning expects a training manifest; got " + e.image_id);
  }
}

// Candidate entry indices are in manifest order; a partial Fisher-Yates draw
// picks `count` of them uniformly without replacement.
std::vector<std::size_t> draw_without_replacement(std::vector<std::size_t> candidates, std::int64_t count, Rng& rng) {
  const auto n = static_cast<std::int64_t>(candidates.size());
  if (count > n) {
    throw ConfigError("rate error: " + std::to_string(count) + " poisons requested but only " + std::to_string(n) +
                      " eligible images");
  }
  for (std::int64_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(n - i)));
    std::swap(candidates[static_cast<std::size_t>(i)], candidates[static_cast<std::size_t>(j)]);
  }
  candidates.resize(static_cast<std::size_t>(count));
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

void mark_poisoned(ManifestEntry& e, const TriggerSpec& trigger, std::uint64_t rng_seed, PoisonKind kind) {
  if (e.is_poisoned) throw DataError("entry " + e.image_id + " is already poisoned");
  // Placement depends only on (seed, image id), never on iteration order.
  Rng rng = make_rng(derive_seed(rng_seed, e.image_id));
  const auto [x, y] = sample_location(e.width, e.height, trigger.patch_size, rng);
  e.is_poisoned = true;
  e.placement = PlacementRecord{e.image_id, x, y};
  e.trigger_id = trigger.trigger_id;
  e.poison_kind = kind;
}

std::vector<std::size_t> clean_indices_of_class(const DatasetManifest& m, int label) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    if (m.entries[i].label == label && !m.entries[i].is_poisoned) out.push_back(i);
  }
  return out;
}

std::int64_t poison_classes(DatasetManifest& m, const std::vector<int>& classes, double fraction,
                            const TriggerSpec& trigger, std::uint64_t seed) {
  std::int64_t total = 0;
  for (int c : classes) {
    const auto count = round_half_even(fraction * static_cast<double>(m.class_size(c)));
    Rng rng = make_rng(derive_seed(seed, 0xC1A55u, static_cast<std::uint64_t>(c)));
    for (auto i : draw_without_replacement(clean_indices_of_class(m, c), count, rng)) {
      mark_poisoned(m.entries[i], trigger, seed, PoisonKind::kTargeted);
    }
    total += count;
  }
  return total;
}

void check_classes(const DatasetManifest& m, const std::vector<int>& classes) {
  std::set<int> seen;
  for (int c : classes) {
    if (c < 0 || c >= static_cast<int>(m.classes.size())) throw ConfigError("target class index out of range");
    if (!seen.insert(c).second) throw ConfigError("duplicate target class " + m.classes[c]);
  }
}

PoisonAccounting accounting_for(const PoisonRecipe& r, std::int64_t count) {
  return {to_string(r.mode), r.target_classes, r.injection_rate, r.within_class_fraction, count, "half-to-even",
          r.rng_seed, r.trigger};
}

}  // namespace

std::int64_t expected_poison_count(const DatasetManifest& m, const PoisonRecipe& r) {
  if (r.mode == PoisonMode::kUntargeted) {
    return round_half_even(r.injection_rate * static_cast<double>(m.entries.size()));
  }
  std::int64_t total = 0;
  for (int c : r.target_classes) {
    total += round_half_even(r.within_class_fraction * static_cast<double>(m.class_size(c)));
  }
  return total;
}

PoisonRecipe targeted_recipe_for_rate(const DatasetManifest& train, int target, double rate,
                                      const TriggerSpec& trigger, std::uint64_t seed) {
  check_fraction(rate, "injection rate");
  const auto n_target = train.class_size(target);
  if (n_target == 0) throw ConfigError("target class has no images");
  const auto count = round_half_even(rate * static_cast<double>(train.entries.size()));
  PoisonRecipe r;
  r.mode = PoisonMode::kTargeted;
  r.target_classes = {target};
  r.injection_rate = rate;
  r.within_class_fraction = static_cast<double>(count) / static_cast<double>(n_target);
  r.trigger = trigger;
  r.rng_seed = seed;
  if (r.within_class_fraction > 1.0) {
    throw ConfigError("rate error: rate " + std::to_string(rate) + " needs " + std::to_string(count) +
                      " poisons but the target class holds " + std::to_string(n_target));
  }
  return r;
}

DatasetManifest poison_targeted(const DatasetManifest& manifest, const PoisonRecipe& recipe) {
  if (recipe.mode != PoisonMode::kTargeted) throw ConfigError("poison_targeted needs a targeted recipe");
  if (recipe.target_classes.size() != 1) throw ConfigError("targeted poisoning needs exactly one target class");
  check_fraction(recipe.within_class_fraction, "within-class fraction");
  require_train_split(manifest);
  check_classes(manifest, recipe.target_classes);

  const auto count = expected_poison_count(manifest, recipe);
  if (recipe.injection_rate > 0.0) {
    // The two parametrizations must describe the same attack up to rounding.
    const double implied = recipe.injection_rate * static_cast<double>(manifest.entries.size());
    if (std::abs(static_cast<double>(count) - implied) > std::max(1.0, 0.1 * implied)) {
      throw ConfigError("rate error: within-class fraction gives " + std::to_string(count) +
                        " poisons but the injection rate implies " + std::to_string(implied));
    }
  }
  DatasetManifest out = manifest;
  const auto made = poison_classes(out, recipe.target_classes, recipe.within_class_fraction, recipe.trigger,
                                   recipe.rng_seed);
  out.poison_history.push_back(accounting_for(recipe, made));
  return out;
}

DatasetManifest poison_untargeted(const DatasetManifest& manifest, double rate, const TriggerSpec& trigger,
                                  std::uint64_t rng_seed) {
  check_fraction(rate, "injection rate");
  require_train_split(manifest);
  DatasetManifest out = manifest;
  const auto count = round_half_even(rate * static_cast<double>(manifest.entries.size()));
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < out.entries.size(); ++i) {
    if (!out.entries[i].is_poisoned) candidates.push_back(i);
  }
  Rng rng = make_rng(derive_seed(rng_seed, 0xA11u));
  for (auto i : draw_without_replacement(std::move(candidates), count, rng)) {
    mark_poisoned(out.entries[i], trigger, rng_seed, PoisonKind::kUntargeted);
  }
  PoisonRecipe r{PoisonMode::kUntargeted, {}, rate, 0.0, trigger, rng_seed};
  out.poison_history.push_back(accounting_for(r, count));
  return out;
}

DatasetManifest poison_superclass(const DatasetManifest& manifest, const PoisonRecipe& recipe) {
  if (recipe.mode != PoisonMode::kSuperclass) throw ConfigError("poison_superclass needs a superclass recipe");
  if (recipe.target_classes.empty()) throw ConfigError("superclass poisoning needs at least one class");
  check_fraction(recipe.within_class_fraction, "within-class fraction");
  require_train_split(manifest);
  check_classes(manifest, recipe.target_classes);
  DatasetManifest out = manifest;
  const auto made = poison_classes(out, recipe.target_classes, recipe.within_class_fraction, recipe.trigger,
                                   recipe.rng_seed);
  out.poison_history.push_back(accounting_for(recipe, made));
  return out;
}

DatasetManifest apply_recipe(const DatasetManifest& manifest, const PoisonRecipe& recipe) {
  switch (recipe.mode) {
    case PoisonMode::kTargeted: return poison_targeted(manifest, recipe);
    case PoisonMode::kUntargeted:
      if (!recipe.target_classes.empty()) throw ConfigError("untargeted recipes take no target classes");
      return poison_untargeted(manifest, recipe.injection_rate, recipe.trigger, recipe.rng_seed);
    case PoisonMode::kSuperclass: return poison_superclass(manifest, recipe);
  }
  throw ConfigError("unknown poison mode");
}

DatasetManifest build_patched_valset(const DatasetManifest& val, const TriggerSpec& trigger, std::uint64_t rng_seed) {
  DatasetManifest out = val;
  for (auto& e : out.entries) {
    if (e.split != Split::kVal) throw ConfigError("patched set expects a validation manifest; got " + e.image_id);
    e.is_poisoned = false;
    e.placement.reset();
    e.trigger_id.reset();
    mark_poisoned(e, trigger, rng_seed, PoisonKind::kPatchedVal);
  }
  out.poison_history.push_back(
      {"patched_val", {}, 1.0, 1.0, static_cast<std::int64_t>(out.entries.size()), "half-to-even", rng_seed, trigger});
  return out;
}

MaterializeResult materialize(const DatasetManifest& manifest, const fs::path& source_root, const fs::path& out_root) {
  validate_manifest(manifest);
  std::map<int, TriggerImage> triggers;
  for (const auto& acc : manifest.poison_history) {
    auto [it, inserted] = triggers.try_emplace(acc.trigger.trigger_id);
    if (inserted) {
      it->second = generate_trigger(acc.trigger);
    } else if (!(it->second.spec == acc.trigger)) {
      throw DataError("trigger id " + std::to_string(acc.trigger.trigger_id) + " used with two different specs");
    }
  }

  MaterializeResult result;
  result.manifest = manifest;
  std::string split_name = "train";
  for (auto& e : result.manifest.entries) {
    split_name = to_string(e.split);
    const std::string class_dir = manifest.classes.at(static_cast<std::size_t>(e.label));
    const std::string rel = split_name + "/" + class_dir + "/" + e.image_id + ".png";
    // Poisoned entries are always re-derived from pristine pixels.
    const fs::path src = source_root / (e.clean_twin_path ? *e.clean_twin_path : e.relative_path);
    if (!fs::exists(src)) throw IoError("missing source image " + src.string() + " for " + e.image_id);
    const fs::path dst = out_root / rel;
    fs::create_directories(dst.parent_path());

    if (!e.is_poisoned) {
      if (fs::absolute(src) != fs::absolute(dst)) fs::copy_file(src, dst, fs::copy_options::overwrite_existing);
      ++result.clean_copied;
    } else {
      auto it = triggers.find(*e.trigger_id);
      if (it == triggers.end()) throw DataError("no trigger spec recorded for " + e.image_id);
      Image clean = read_png(src);
      if (clean.channels != 3) throw FormatError(e.image_id + " is not RGB");
      PlacementRecord placement = *e.placement;
      placement.image_id = e.image_id;
      const Image poisoned = paste_trigger(clean, it->second, placement);
      const std::string twin_rel = "clean_twins/" + rel;
      if (fs::absolute(src) != fs::absolute(out_root / twin_rel)) {
        fs::create_directories((out_root / twin_rel).parent_path());
        fs::copy_file(src, out_root / twin_rel, fs::copy_options::overwrite_existing);
      }
      write_png(dst, poisoned);
      e.clean_twin_path = twin_rel;
      ++result.poisoned_written;
    }
    e.relative_path = rel;
  }
  result.manifest_path = out_root / ("manifest_" + split_name + ".json");
  save_manifest(result.manifest_path, result.manifest);
  result.manifest_hash = result.manifest.content_hash();
  write_text_file(out_root / ("manifest_" + split_name + ".sha256"), result.manifest_hash + "\n");
  return result;
}

}  // namespace sslbd
