#include "sslbd/augment.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "sslbd/errors.hpp"

namespace sslbd {
namespace {

// Planar RGB in [0, 1].
struct Planar {
  int width = 0;
  int height = 0;
  std::vector<float> data;  // 3 * H * W

  Planar(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(3) * w * h) {}
  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  std::size_t plane() const { return static_cast<std::size_t>(width) * height; }
};

// Crop (x, y, w, h) of the 8-bit image resampled to out x out with half-pixel
// centers; samples never leave the crop window.
Planar crop_resize(const Image& img, const CropBox& box, int out_w, int out_h) {
  Planar out(out_w, out_h);
  const double sx = static_cast<double>(box.width) / out_w;
  const double sy = static_cast<double>(box.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::max((y + 0.5) * sy - 0.5, 0.0);
    const int y0 = std::min(static_cast<int>(fy), box.height - 1);
    const int y1 = std::min(y0 + 1, box.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::max((x + 0.5) * sx - 0.5, 0.0);
      const int x0 = std::min(static_cast<int>(fx), box.width - 1);
      const int x1 = std::min(x0 + 1, box.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v00 = img.at(box.x + x0, box.y + y0, c);
        const double v01 = img.at(box.x + x1, box.y + y0, c);
        const double v10 = img.at(box.x + x0, box.y + y1, c);
        const double v11 = img.at(box.x + x1, box.y + y1, c);
        const double v = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
        out.at(c, y, x) = static_cast<float>(v / 255.0);
      }
    }
  }
  return out;
}

CropBox sample_crop(int width, int height, const AugmentationPolicy& p, Rng& rng) {
  const double area = static_cast<double>(width) * height;
  const double log_r0 = std::log(p.crop_ratio.first);
  const double log_r1 = std::log(p.crop_ratio.second);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * uniform(rng, p.crop_scale.first, p.crop_scale.second);
    const double ratio = std::exp(uniform(rng, log_r0, log_r1));
    const int w = static_cast<int>(std::lround(std::sqrt(target * ratio)));
    const int h = static_cast<int>(std::lround(std::sqrt(target / ratio)));
    if (w > 0 && h > 0 && w <= width && h <= height) {
      const int x = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(width - w + 1)));
      const int y = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(height - h + 1)));
      return {x, y, w, h, false};
    }
  }
  // Fallback: central crop clamped to the allowed aspect range.
  const double in_ratio = static_cast<double>(width) / height;
  int w = width, h = height;
  if (in_ratio < p.crop_ratio.first) {
    h = static_cast<int>(std::lround(w / p.crop_ratio.first));
  } else if (in_ratio > p.crop_ratio.second) {
    w = static_cast<int>(std::lround(h * p.crop_ratio.second));
  }
  return {(width - w) / 2, (height - h) / 2, w, h, false};
}

float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

void adjust_brightness(Planar& im, float factor) {
  for (auto& v : im.data) v = std::clamp(v * factor, 0.0f, 1.0f);
}

void adjust_contrast(Planar& im, float factor) {
  double mean = 0.0;
  const auto n = im.plane();
  for (std::size_t i = 0; i < n; ++i) mean += luma(im.data[i], im.data[n + i], im.data[2 * n + i]);
  const auto m = static_cast<float>(mean / static_cast<double>(n));
  for (auto& v : im.data) v = std::clamp((v - m) * factor + m, 0.0f, 1.0f);
}

void adjust_saturation(Planar& im, float factor) {
  const auto n = im.plane();
  for (std::size_t i = 0; i < n; ++i) {
    const float g = luma(im.data[i], im.data[n + i], im.data[2 * n + i]);
    for (int c = 0; c < 3; ++c) {
      auto& v = im.data[c * n + i];
      v = std::clamp((v - g) * factor + g, 0.0f, 1.0f);
    }
  }
}

void adjust_hue(Planar& im, float shift) {
  const auto n = im.plane();
  for (std::size_t i = 0; i < n; ++i) {
    float r = im.data[i], g = im.data[n + i], b = im.data[2 * n + i];
    const float mx = std::max({r, g, b});
    const float mn = std::min({r, g, b});
    const float d = mx - mn;
    if (d <= 0.0f) continue;
    float h;
    if (mx == r) {
      h = std::fmod((g - b) / d, 6.0f);
    } else if (mx == g) {
      h = (b - r) / d + 2.0f;
    } else {
      h = (r - g) / d + 4.0f;
    }
    h = h / 6.0f + shift;
    h -= std::floor(h);
    const float s = d / mx, v = mx;
    const float hh = h * 6.0f;
    const int sector = static_cast<int>(hh) % 6;
    const float f = hh - std::floor(hh);
    const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (sector) {
      case 0: r = v; g = t; b = p; break;
      case 1: r = q; g = v; b = p; break;
      case 2: r = p; g = v; b = t; break;
      case 3: r = p; g = q; b = v; break;
      case 4: r = t; g = p; b = v; break;
      default: r = v; g = p; b = q; break;
    }
    im.data[i] = r;
    im.data[n + i] = g;
    im.data[2 * n + i] = b;
  }
}

void to_grayscale(Planar& im) {
  const auto n = im.plane();
  for (std::size_t i = 0; i < n; ++i) {
    const float g = luma(im.data[i], im.data[n + i], im.data[2 * n + i]);
    im.data[i] = im.data[n + i] = im.data[2 * n + i] = g;
  }
}

void gaussian_blur(Planar& im, double sigma) {
  // Kernel ~10% of the image side, odd, at least 3.
  int k = std::max(3, static_cast<int>(0.1 * std::min(im.width, im.height)) | 1);
  const int r = k / 2;
  std::vector<float> w(static_cast<std::size_t>(k));
  double total = 0.0;
  for (int i = -r; i <= r; ++i) total += (w[i + r] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma))));
  for (auto& v : w) v = static_cast<float>(v / total);
  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * n - 2 - i;
    return i;
  };
  Planar tmp = im;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < im.height; ++y)
      for (int x = 0; x < im.width; ++x) {
        float acc = 0.0f;
        for (int i = -r; i <= r; ++i) acc += w[i + r] * im.at(c, y, reflect(x + i, im.width));
        tmp.at(c, y, x) = acc;
      }
    for (int y = 0; y < im.height; ++y)
      for (int x = 0; x < im.width; ++x) {
        float acc = 0.0f;
        for (int i = -r; i <= r; ++i) acc += w[i + r] * tmp.at(c, reflect(y + i, im.height), x);
        im.at(c, y, x) = acc;
      }
  }
}

torch::Tensor normalize(const Planar& im, const AugmentationPolicy& p) {
  auto t = torch::empty({3, im.height, im.width}, torch::kFloat32);
  float* dst = t.data_ptr<float>();
  const auto n = im.plane();
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < n; ++i) dst[c * n + i] = (im.data[c * n + i] - p.mean[c]) / p.stddev[c];
  }
  return t;
}

void check_rgb(const Image& image) {
  if (image.channels != 3 || image.empty()) throw FormatError("augmentation expects a non-empty RGB image");
}

}  // namespace

AugmentationPolicy AugmentationPolicy::moco_v2(int output_size) {
  AugmentationPolicy p;
  p.output_size = output_size;
  return p;
}

AugmentationPolicy AugmentationPolicy::identity(int output_size) {
  AugmentationPolicy p;
  p.crop_scale = {1.0, 1.0};
  p.crop_ratio = {1.0, 1.0};
  p.horizontal_flip_prob = 0.0;
  p.color_jitter.probability = 0.0;
  p.grayscale_prob = 0.0;
  p.blur_prob = 0.0;
  p.output_size = output_size;
  return p;
}

void AugmentationPolicy::validate() const {
  auto prob = [](double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(what) + " must be a probability");
  };
  prob(horizontal_flip_prob, "horizontal_flip_prob");
  prob(color_jitter.probability, "color_jitter.probability");
  prob(grayscale_prob, "grayscale_prob");
  prob(blur_prob, "blur_prob");
  if (!(crop_scale.first > 0.0 && crop_scale.first <= crop_scale.second && crop_scale.second <= 1.0)) {
    throw ConfigError("crop_scale must satisfy 0 < min <= max <= 1");
  }
  if (!(crop_ratio.first > 0.0 && crop_ratio.first <= crop_ratio.second)) throw ConfigError("bad crop_ratio");
  if (output_size <= 0) throw ConfigError("output_size must be positive");
  for (float s : stddev) {
    if (!(s > 0.0f)) throw ConfigError("normalization std must be positive");
  }
}

AugmentedView augment(const Image& image, const AugmentationPolicy& p, Rng& rng) {
  check_rgb(image);
  CropBox box = sample_crop(image.width, image.height, p, rng);
  Planar im = crop_resize(image, box, p.output_size, p.output_size);

  if (bernoulli(rng, p.horizontal_flip_prob)) {
    box.flipped = true;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < im.height; ++y)
        for (int x = 0; x < im.width / 2; ++x) std::swap(im.at(c, y, x), im.at(c, y, im.width - 1 - x));
  }
  if (bernoulli(rng, p.color_jitter.probability)) {
    const auto& j = p.color_jitter;
    const auto b = static_cast<float>(uniform(rng, std::max(0.0, 1 - j.brightness), 1 + j.brightness));
    const auto c = static_cast<float>(uniform(rng, std::max(0.0, 1 - j.contrast), 1 + j.contrast));
    const auto s = static_cast<float>(uniform(rng, std::max(0.0, 1 - j.saturation), 1 + j.saturation));
    const auto h = static_cast<float>(uniform(rng, -j.hue, j.hue));
    // Random order of the four adjustments, as in the usual jitter transform.
    std::array<int, 4> order{0, 1, 2, 3};
    for (int i = 3; i > 0; --i) std::swap(order[i], order[uniform_index(rng, static_cast<std::uint64_t>(i + 1))]);
    for (int op : order) {
      switch (op) {
        case 0: adjust_brightness(im, b); break;
        case 1: adjust_contrast(im, c); break;
        case 2: adjust_saturation(im, s); break;
        case 3: adjust_hue(im, h); break;
      }
    }
  }
  if (bernoulli(rng, p.grayscale_prob)) to_grayscale(im);
  if (bernoulli(rng, p.blur_prob)) gaussian_blur(im, uniform(rng, p.blur_sigma.first, p.blur_sigma.second));
  return {normalize(im, p), box};
}

torch::Tensor to_normalized_tensor(const Image& image, const AugmentationPolicy& p) {
  check_rgb(image);
  return normalize(crop_resize(image, {0, 0, image.width, image.height, false}, image.width, image.height), p);
}

torch::Tensor preprocess_eval(const Image& image, const AugmentationPolicy& p) {
  check_rgb(image);
  const int side = std::min(image.width, image.height);
  const CropBox box{(image.width - side) / 2, (image.height - side) / 2, side, side, false};
  return normalize(crop_resize(image, box, p.output_size, p.output_size), p);
}

std::string to_string(ViewMode mode) {
  switch (mode) {
    case ViewMode::kStandard: return "standard";
    case ViewMode::kOneViewPoisoned: return "one_view_poisoned";
    case ViewMode::kRandomPoisonBothViews: return "random_poison_both_views";
  }
  return "standard";
}

ViewMode parse_view_mode(const std::string& text) {
  for (auto m : {ViewMode::kStandard, ViewMode::kOneViewPoisoned, ViewMode::kRandomPoisonBothViews}) {
    if (to_string(m) == text) return m;
  }
  throw ConfigError("unknown view mode '" + text + "'");
}

ViewPair augment_pair(const Image& image, const AugmentationPolicy& policy, Rng& rng, ViewMode mode,
                      const Image* clean_twin) {
  if (mode != ViewMode::kOneViewPoisoned) {
    ViewPair pair;
    pair.first = augment(image, policy, rng);
    pair.second = augment(image, policy, rng);
    return pair;
  }
  if (clean_twin == nullptr) throw DataError("one-view mode needs the clean twin of a poisoned image");
  ViewPair pair;
  pair.poisoned_on_first = bernoulli(rng, 0.5);
  const Image& a = pair.poisoned_on_first ? image : *clean_twin;
  const Image& b = pair.poisoned_on_first ? *clean_twin : image;
  pair.first = augment(a, policy, rng);
  pair.second = augment(b, policy, rng);
  return pair;
}

}  // namespace sslbd
