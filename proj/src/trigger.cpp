#include "sslbd/trigger.hpp"

#include <algorithm>
#include <cmath>

#include "sslbd/errors.hpp"

namespace sslbd {

int default_patch_size(int image_width, int image_height) {
  const int side = std::min(image_width, image_height);
  return std::max(TriggerSpec::kBaseResolution, static_cast<int>(std::lround(side * 50.0 / 224.0)));
}

Image generate_trigger_base(int trigger_id, std::uint64_t seed) {
  Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(trigger_id), 0x7219u));
  constexpr int n = TriggerSpec::kBaseResolution;
  Image base(n, n, 3);
  for (auto& v : base.pixels) v = static_cast<std::uint8_t>(uniform_index(rng, 256));
  return base;
}

TriggerImage generate_trigger(const TriggerSpec& spec) {
  if (spec.patch_size < TriggerSpec::kBaseResolution) {
    throw ConfigError("invalid trigger size " + std::to_string(spec.patch_size) + " (minimum " +
                      std::to_string(TriggerSpec::kBaseResolution) + ")");
  }
  Image base = generate_trigger_base(spec.trigger_id, spec.seed);
  return {spec, resize_bilinear(base, spec.patch_size, spec.patch_size)};
}

TriggerImage load_trigger(const std::filesystem::path& path, int trigger_id) {
  Image img = read_png(path);
  if (img.channels != 3) throw FormatError(path.string() + ": trigger must be RGB");
  if (img.width != img.height) throw FormatError(path.string() + ": trigger must be square");
  if (img.width < TriggerSpec::kBaseResolution) {
    throw ConfigError("invalid trigger size " + std::to_string(img.width));
  }
  TriggerSpec spec{trigger_id, 0, img.width};
  return {spec, std::move(img)};
}

std::pair<std::filesystem::path, std::filesystem::path> save_trigger_files(
    const std::filesystem::path& dir, const TriggerSpec& spec) {
  const auto id = std::to_string(spec.trigger_id);
  auto patch_path = dir / ("trigger_" + id + "_" + std::to_string(spec.patch_size) + ".png");
  auto base_path = dir / ("trigger_" + id + "_base.png");
  write_png(patch_path, generate_trigger(spec).pixels);
  write_png(base_path, generate_trigger_base(spec.trigger_id, spec.seed));
  return {patch_path, base_path};
}

std::pair<int, int> sample_location(int image_width, int image_height, int patch_size, Rng& rng) {
  if (image_width < patch_size || image_height < patch_size) {
    throw PlacementError("image " + std::to_string(image_width) + "x" + std::to_string(image_height) +
                         " cannot hold a " + std::to_string(patch_size) + " px trigger");
  }
  const auto x = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(image_width - patch_size + 1)));
  const auto y = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(image_height - patch_size + 1)));
  return {x, y};
}

void check_placement(const Image& image, int patch_size, const PlacementRecord& placement) {
  if (placement.x < 0 || placement.y < 0 || placement.x + patch_size > image.width ||
      placement.y + patch_size > image.height) {
    throw PlacementError("trigger at (" + std::to_string(placement.x) + "," + std::to_string(placement.y) +
                         ") leaves the " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                         " image " + placement.image_id);
  }
}

Image paste_trigger(const Image& image, const TriggerImage& trigger, const PlacementRecord& placement) {
  if (image.channels != trigger.pixels.channels) {
    throw FormatError("channel mismatch pasting trigger onto " + placement.image_id);
  }
  const int p = trigger.size();
  check_placement(image, p, placement);
  Image out = image;
  const auto row_bytes = static_cast<std::size_t>(p) * image.channels;
  for (int dy = 0; dy < p; ++dy) {
    std::copy_n(trigger.pixels.pixels.begin() + static_cast<std::ptrdiff_t>(trigger.pixels.index(0, dy)), row_bytes,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(out.index(placement.x, placement.y + dy)));
  }
  return out;
}

SavedRegion save_region(const Image& image, int patch_size, const PlacementRecord& placement) {
  check_placement(image, patch_size, placement);
  SavedRegion region{placement, Image(patch_size, patch_size, image.channels)};
  for (int dy = 0; dy < patch_size; ++dy) {
    for (int dx = 0; dx < patch_size; ++dx) {
      for (int c = 0; c < image.channels; ++c) {
        region.pixels.at(dx, dy, c) = image.at(placement.x + dx, placement.y + dy, c);
      }
    }
  }
  return region;
}

Image restore_region(const Image& image, const SavedRegion& region) {
  TriggerImage patch{{0, 0, region.pixels.width}, region.pixels};
  return paste_trigger(image, patch, region.placement);
}

}  // namespace sslbd
