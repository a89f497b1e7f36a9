#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sslbd/image.hpp"
#include "sslbd/manifest.hpp"

namespace sslbd {

/// One training image as the SSL trainers see it. There is deliberately no
/// label field: poisoning targets unlabeled data and the trainers only ever
/// receive UnlabeledImageSet.
struct UnlabeledSample {
  std::string image_id;
  Image image;
  std::optional<Image> clean_twin;
  PoisonKind poison_kind = PoisonKind::kNone;
};

class UnlabeledImageSet {
 public:
  UnlabeledImageSet() = default;
  explicit UnlabeledImageSet(std::vector<UnlabeledSample> samples);

  /// Loads every entry of `manifest` relative to `data_root`. Clean twins are
  /// read for poisoned entries when `with_clean_twins` is set.
  static UnlabeledImageSet load(const DatasetManifest& manifest, const std::filesystem::path& data_root,
                                bool with_clean_twins = false);

  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const UnlabeledSample& operator[](std::size_t i) const { return samples_[i]; }
  const std::vector<UnlabeledSample>& samples() const { return samples_; }

  /// SHA-256 over ids, poison kinds and pixel bytes; this is what training
  /// checkpoints are stamped with.
  const std::string& fingerprint() const { return fingerprint_; }

 private:
  std::vector<UnlabeledSample> samples_;
  std::string fingerprint_;
};

/// Images with labels, for linear probes and evaluation only.
struct LabeledImageSet {
  std::vector<std::string> ids;
  std::vector<Image> images;
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return images.size(); }
  static LabeledImageSet load(const DatasetManifest& manifest, const std::filesystem::path& data_root);
};

/// Keeps only the entries whose ids are listed, in manifest order.
DatasetManifest subset_manifest(const DatasetManifest& manifest, const std::vector<std::string>& ids);

}  // namespace sslbd
