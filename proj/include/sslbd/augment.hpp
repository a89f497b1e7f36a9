#pragma once

#include <array>
#include <string>
#include <utility>

#include <torch/torch.h>

#include "sslbd/image.hpp"
#include "sslbd/rng.hpp"

namespace sslbd {

struct ColorJitter {
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;
  double probability = 0.8;
};

struct AugmentationPolicy {
  std::pair<double, double> crop_scale{0.2, 1.0};
  std::pair<double, double> crop_ratio{3.0 / 4.0, 4.0 / 3.0};
  double horizontal_flip_prob = 0.5;
  ColorJitter color_jitter;
  double grayscale_prob = 0.2;
  double blur_prob = 0.5;
  std::pair<double, double> blur_sigma{0.1, 2.0};
  int output_size = 32;
  std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
  std::array<float, 3> stddev{0.25f, 0.25f, 0.25f};

  /// The usual MoCo v2 recipe: resized crop 0.2-1, jitter (0.4, 0.4, 0.4,
  /// 0.1) at p=0.8, grayscale 0.2, blur 0.5, flip 0.5.
  static AugmentationPolicy moco_v2(int output_size);
  /// No crop, flip, jitter or blur; only normalization.
  static AugmentationPolicy identity(int output_size);

  void validate() const;
};

/// Source-image rectangle a view was cropped from.
struct CropBox {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
  bool flipped = false;

  bool intersects(int rx, int ry, int rw, int rh) const {
    return x < rx + rw && rx < x + width && y < ry + rh && ry < y + height;
  }
};

struct AugmentedView {
  torch::Tensor pixels;  // [3, S, S] float, normalized
  CropBox crop;
};

/// Random view of `image` under `policy`. All randomness comes from `rng`.
AugmentedView augment(const Image& image, const AugmentationPolicy& policy, Rng& rng);

/// [3, H, W] float tensor in [0, 1] scaled then normalized by policy mean/std.
torch::Tensor to_normalized_tensor(const Image& image, const AugmentationPolicy& policy);

/// Deterministic evaluation preprocessing: shorter side resized to the
/// output size, center crop, normalize.
torch::Tensor preprocess_eval(const Image& image, const AugmentationPolicy& policy);

enum class ViewMode { kStandard, kOneViewPoisoned, kRandomPoisonBothViews };

std::string to_string(ViewMode mode);
ViewMode parse_view_mode(const std::string& text);

struct ViewPair {
  AugmentedView first;
  AugmentedView second;
  /// Which branch was fed the file carrying the trigger (one-view mode).
  bool poisoned_on_first = true;
};

/// Two views of one image.
///  - standard / random_poison_both_views: both views augment `image`.
///  - one_view_poisoned: a fair coin picks the branch that augments `image`;
///    the other branch augments `clean_twin`, which must be given.
ViewPair augment_pair(const Image& image, const AugmentationPolicy& policy, Rng& rng, ViewMode mode,
                      const Image* clean_twin = nullptr);

}  // namespace sslbd
