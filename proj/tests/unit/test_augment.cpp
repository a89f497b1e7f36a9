#include <gtest/gtest.h>

#include <cmath>

#include "sslbd/augment.hpp"
#include "sslbd/errors.hpp"
#include "sslbd/rng.hpp"

using namespace sslbd;

namespace {

Image textured(int w, int h, uint64_t seed) {
  Rng rng = make_rng(seed);
  Image img(w, h);
  for (auto& v : img.pixels) v = static_cast<uint8_t>(uniform_index(rng, 256));
  return img;
}

AugmentationPolicy geometric_only() {
  auto p = AugmentationPolicy::moco_v2(32);
  p.color_jitter.probability = 0.0;
  p.grayscale_prob = 0.0;
  p.blur_prob = 0.0;
  return p;
}

}  // namespace

TEST(Augment, IdentityPolicyReturnsInputForBothViews) {
  const Image img = textured(32, 32, 1);
  const auto p = AugmentationPolicy::identity(32);
  Rng rng = make_rng(2);
  const auto pair = augment_pair(img, p, rng, ViewMode::kStandard);
  const auto expected = to_normalized_tensor(img, p);
  EXPECT_TRUE(torch::equal(pair.first.pixels, expected));
  EXPECT_TRUE(torch::equal(pair.second.pixels, expected));
  // Undoing the normalization recovers the bytes.
  auto back = (expected * 0.25 + 0.5) * 255.0;
  EXPECT_NEAR(back[0][3][5].item<float>(), img.at(5, 3, 0), 1e-3);
}

TEST(Augment, OneViewCoinIsFair) {
  const Image img = textured(32, 32, 3);
  const Image twin = textured(32, 32, 4);
  const auto p = AugmentationPolicy::identity(32);
  Rng rng = make_rng(5);
  const int n = 4000;
  int first = 0;
  for (int i = 0; i < n; ++i) {
    const auto pair = augment_pair(img, p, rng, ViewMode::kOneViewPoisoned, &twin);
    const auto poisoned = pair.poisoned_on_first ? pair.first.pixels : pair.second.pixels;
    const auto clean = pair.poisoned_on_first ? pair.second.pixels : pair.first.pixels;
    ASSERT_TRUE(torch::equal(poisoned, to_normalized_tensor(img, p)));
    ASSERT_TRUE(torch::equal(clean, to_normalized_tensor(twin, p)));
    first += pair.poisoned_on_first ? 1 : 0;
  }
  // Binomial(4000, 0.5): 4 standard deviations is about 126.
  EXPECT_LT(std::abs(first - n / 2), 127);
}

TEST(Augment, OneViewWithoutTwinIsDataError) {
  Rng rng = make_rng(1);
  EXPECT_THROW(augment_pair(textured(32, 32, 1), AugmentationPolicy::identity(32), rng, ViewMode::kOneViewPoisoned),
               DataError);
}

TEST(Augment, TriggerVisibleIffCropIntersectsPlacement) {
  // Black image with a white square; geometric-only policy so any non-black
  // output pixel must come from the square.
  const int px = 20, py = 6, ps = 7;
  Image img(32, 32, 3, 0);
  for (int y = py; y < py + ps; ++y)
    for (int x = px; x < px + ps; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = 255;
  const auto p = geometric_only();
  const float black = (0.0f - 0.5f) / 0.25f;
  Rng rng = make_rng(11);
  int hits = 0, misses = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto v = augment(img, p, rng);
    const bool visible = (v.pixels > black + 1e-4).any().item<bool>();
    const bool intersects = v.crop.intersects(px, py, ps, ps);
    ASSERT_EQ(visible, intersects) << "crop " << v.crop.x << "," << v.crop.y << " " << v.crop.width << "x"
                                   << v.crop.height;
    (intersects ? hits : misses)++;
  }
  EXPECT_GT(hits, 100);
  EXPECT_GT(misses, 100);
}

TEST(Augment, CropsStayInsideImageAndRespectScale) {
  const auto p = AugmentationPolicy::moco_v2(32);
  Rng rng = make_rng(4);
  const Image img = textured(40, 30, 2);
  for (int i = 0; i < 1000; ++i) {
    const auto v = augment(img, p, rng);
    ASSERT_GE(v.crop.x, 0);
    ASSERT_GE(v.crop.y, 0);
    ASSERT_LE(v.crop.x + v.crop.width, 40);
    ASSERT_LE(v.crop.y + v.crop.height, 30);
    ASSERT_EQ(v.pixels.sizes(), (std::vector<int64_t>{3, 32, 32}));
  }
}

TEST(Augment, SameStreamSameViews) {
  const Image img = textured(32, 32, 8);
  const auto p = AugmentationPolicy::moco_v2(32);
  Rng a = make_rng(3), b = make_rng(3);
  const auto va = augment_pair(img, p, a, ViewMode::kStandard);
  const auto vb = augment_pair(img, p, b, ViewMode::kStandard);
  EXPECT_TRUE(torch::equal(va.first.pixels, vb.first.pixels));
  EXPECT_TRUE(torch::equal(va.second.pixels, vb.second.pixels));
}

TEST(Augment, PolicyValidation) {
  auto p = AugmentationPolicy::moco_v2(32);
  p.grayscale_prob = 1.5;
  EXPECT_THROW(p.validate(), ConfigError);
  p = AugmentationPolicy::moco_v2(32);
  p.crop_scale = {0.8, 0.2};
  EXPECT_THROW(p.validate(), ConfigError);
  p = AugmentationPolicy::moco_v2(32);
  p.crop_scale = {0.0, 1.0};
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Augment, ViewModeParsing) {
  for (auto m : {ViewMode::kStandard, ViewMode::kOneViewPoisoned, ViewMode::kRandomPoisonBothViews})
    EXPECT_EQ(parse_view_mode(to_string(m)), m);
  EXPECT_THROW(parse_view_mode("both"), ConfigError);
}

TEST(Augment, EvalPreprocessingIsDeterministicCenterCrop) {
  const Image img = textured(48, 32, 6);
  const auto p = AugmentationPolicy::identity(32);
  const auto t = preprocess_eval(img, p);
  EXPECT_EQ(t.sizes(), (std::vector<int64_t>{3, 32, 32}));
  EXPECT_TRUE(torch::equal(t, preprocess_eval(img, p)));
  // Shorter side already 32: the center crop is columns 8..39.
  Image crop(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c) crop.at(x, y, c) = img.at(x + 8, y, c);
  EXPECT_TRUE(torch::allclose(t, to_normalized_tensor(crop, p)));
}
