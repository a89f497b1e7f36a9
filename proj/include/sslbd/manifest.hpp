#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sslbd/trigger.hpp"

namespace sslbd {

enum class Split { kTrain, kVal };

std::string to_string(Split split);
Split parse_split(const std::string& text);

/// How an entry came to carry a trigger. Used by the controlled view-mode
/// experiments to tell class-targeted poison (targeted and superclass
/// recipes) from class-agnostic poison.
enum class PoisonKind { kNone, kTargeted, kUntargeted, kPatchedVal };

std::string to_string(PoisonKind kind);
PoisonKind parse_poison_kind(const std::string& text);

struct ManifestEntry {
  std::string image_id;
  std::string relative_path;
  int label = 0;  // bookkeeping only; SSL training never reads it
  Split split = Split::kTrain;
  int width = 0;
  int height = 0;
  bool is_poisoned = false;
  std::optional<PlacementRecord> placement;
  std::optional<int> trigger_id;
  PoisonKind poison_kind = PoisonKind::kNone;
  /// Materialized un-pasted original of a poisoned image, when written.
  std::optional<std::string> clean_twin_path;
};

/// Closed-form poison count bookkeeping written alongside the entries.
struct PoisonAccounting {
  std::string mode;
  std::vector<int> target_classes;
  double injection_rate = 0.0;
  double within_class_fraction = 0.0;
  std::int64_t expected_count = 0;
  std::string rounding = "half-to-even";
  std::uint64_t rng_seed = 0;
  TriggerSpec trigger;
};

struct DatasetManifest {
  static constexpr int kSchemaVersion = 1;

  std::string dataset_name;
  std::vector<std::string> classes;
  std::vector<ManifestEntry> entries;
  std::vector<PoisonAccounting> poison_history;

  std::size_t poisoned_count() const;
  std::size_t class_size(int label) const;
  int class_index(const std::string& name) const;

  /// Hash of the canonical serialization (labels included).
  std::string content_hash() const;
};

nlohmann::json to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& j);

/// Canonical text: sorted keys, two-space indent, trailing newline.
std::string dump_manifest(const DatasetManifest& manifest);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Scans <root>/<split>/<class>/*.png. Classes come from <root>/train when it
/// exists so both splits share one label space. Entries are sorted by
/// (class, filename); image ids are file stems and must be unique.
DatasetManifest build_manifest(const std::filesystem::path& root, Split split, const std::string& dataset_name = "");

/// Checks the structural invariants (unique ids, poison fields consistent).
void validate_manifest(const DatasetManifest& manifest);

}  // namespace sslbd
