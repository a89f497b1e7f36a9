#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sslbd/image.hpp"

namespace sslbd {

/// Offline stand-in for CIFAR-10: ten classes of procedurally drawn images.
///  - shapes: one class-specific shape or texture in a class hue on a dark
///    random background.
///  - scenes: a small class-specific object at a random spot over a smooth,
///    class-independent color field.
struct SyntheticSpec {
  std::string style = "shapes";
  int image_size = 32;
  int train_per_class = 500;
  int val_per_class = 100;
  uint64_t seed = 0;
};

inline constexpr int kSyntheticClasses = 10;
const std::vector<std::string>& synthetic_class_names();

Image synthesize_image(const SyntheticSpec& spec, int label, uint64_t image_seed);

/// Writes <root>/{train,val}/<class>/<class>_<index>.png.
void write_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& root);

/// Converts the CIFAR-10 binary release (data_batch_*.bin, test_batch.bin,
/// batches.meta.txt) in `bin_dir` into the same folder layout; test_batch
/// becomes val. `limit_per_class` > 0 keeps only the first images per class.
void import_cifar10(const std::filesystem::path& bin_dir, const std::filesystem::path& root, int limit_per_class = 0);

}  // namespace sslbd
