#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>

#include "sslbd/image.hpp"
#include "sslbd/rng.hpp"

namespace sslbd {

/// Identity of a square patch trigger. Ids 10..19 follow the usual HTBA
/// numbering; any id is accepted.
struct TriggerSpec {
  static constexpr int kBaseResolution = 4;

  int trigger_id = 10;
  std::uint64_t seed = 0;
  int patch_size = 7;

  friend bool operator==(const TriggerSpec&, const TriggerSpec&) = default;
};

struct TriggerImage {
  TriggerSpec spec;
  Image pixels;  // patch_size x patch_size x 3

  int size() const { return pixels.width; }
};

/// Top-left corner of a fully inside trigger placement.
struct PlacementRecord {
  std::string image_id;
  int x = 0;
  int y = 0;

  friend bool operator==(const PlacementRecord&, const PlacementRecord&) = default;
};

/// Side length that keeps the trigger at ~22% of the shorter image side
/// (50 px on 224 px images), never below the 4 px base.
int default_patch_size(int image_width, int image_height);

/// The 4x4 RGB base drawn uniformly per channel from the (id, seed) stream.
Image generate_trigger_base(int trigger_id, std::uint64_t seed);

TriggerImage generate_trigger(const TriggerSpec& spec);

/// Loads an externally supplied square RGB patch verbatim. The returned spec
/// carries the file's side length as patch_size.
TriggerImage load_trigger(const std::filesystem::path& path, int trigger_id);

/// Writes trigger_<id>_<size>.png and trigger_<id>_base.png into dir.
std::pair<std::filesystem::path, std::filesystem::path> save_trigger_files(
    const std::filesystem::path& dir, const TriggerSpec& spec);

/// Uniform over every placement that keeps the patch inside the image.
std::pair<int, int> sample_location(int image_width, int image_height, int patch_size, Rng& rng);

void check_placement(const Image& image, int patch_size, const PlacementRecord& placement);

/// Opaque paste; the input image is left untouched.
Image paste_trigger(const Image& image, const TriggerImage& trigger, const PlacementRecord& placement);

/// Pixels under a placement rectangle, so a paste can be undone exactly.
struct SavedRegion {
  PlacementRecord placement;
  Image pixels;
};

SavedRegion save_region(const Image& image, int patch_size, const PlacementRecord& placement);
Image restore_region(const Image& image, const SavedRegion& region);

}  // namespace sslbd
