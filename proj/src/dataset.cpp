#include "sslbd/dataset.hpp"

#include <set>

#include "sslbd/errors.hpp"
#include "sslbd/hashing.hpp"

namespace sslbd {

namespace {

std::string fingerprint_of(const std::vector<UnlabeledSample>& samples) {
  std::string buf;
  for (const auto& s : samples) {
    buf += s.image_id;
    buf += '\0';
    buf += to_string(s.poison_kind);
    buf += '\0';
    buf += std::to_string(s.image.width) + "x" + std::to_string(s.image.height) + "x" +
           std::to_string(s.image.channels);
    buf.append(reinterpret_cast<const char*>(s.image.pixels.data()), s.image.pixels.size());
    if (s.clean_twin) {
      buf += "twin";
      buf.append(reinterpret_cast<const char*>(s.clean_twin->pixels.data()), s.clean_twin->pixels.size());
    }
  }
  return sha256_hex(buf);
}

Image load_rgb(const std::filesystem::path& path, const std::string& id) {
  Image img = read_png(path);
  if (img.channels != 3) throw FormatError(id + ": expected an RGB image");
  return img;
}

}  // namespace

UnlabeledImageSet::UnlabeledImageSet(std::vector<UnlabeledSample> samples)
    : samples_(std::move(samples)), fingerprint_(fingerprint_of(samples_)) {}

UnlabeledImageSet UnlabeledImageSet::load(const DatasetManifest& manifest, const std::filesystem::path& data_root,
                                          bool with_clean_twins) {
  std::vector<UnlabeledSample> samples;
  samples.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    UnlabeledSample s;
    s.image_id = e.image_id;
    s.image = load_rgb(data_root / e.relative_path, e.image_id);
    s.poison_kind = e.is_poisoned ? e.poison_kind : PoisonKind::kNone;
    if (with_clean_twins && e.is_poisoned) {
      if (!e.clean_twin_path) throw DataError("missing clean twin for poisoned image " + e.image_id);
      s.clean_twin = load_rgb(data_root / *e.clean_twin_path, e.image_id);
    }
    samples.push_back(std::move(s));
  }
  return UnlabeledImageSet(std::move(samples));
}

LabeledImageSet LabeledImageSet::load(const DatasetManifest& manifest, const std::filesystem::path& data_root) {
  LabeledImageSet set;
  set.num_classes = static_cast<int>(manifest.classes.size());
  for (const auto& e : manifest.entries) {
    set.ids.push_back(e.image_id);
    set.images.push_back(load_rgb(data_root / e.relative_path, e.image_id));
    set.labels.push_back(e.label);
  }
  return set;
}

DatasetManifest subset_manifest(const DatasetManifest& manifest, const std::vector<std::string>& ids) {
  const std::set<std::string> keep(ids.begin(), ids.end());
  DatasetManifest out = manifest;
  out.entries.clear();
  for (const auto& e : manifest.entries) {
    if (keep.contains(e.image_id)) out.entries.push_back(e);
  }
  if (out.entries.size() != keep.size()) throw DataError("subset names ids that are not in the manifest");
  return out;
}

}  // namespace sslbd
