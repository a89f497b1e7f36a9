#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <set>

#include "sslbd/errors.hpp"
#include "sslbd/hashing.hpp"
#include "sslbd/image.hpp"
#include "sslbd/poison.hpp"
#include "sslbd/probe.hpp"
#include "sslbd/synthetic.hpp"
#include "unit/test_util.hpp"

using namespace sslbd;
using sslbd::testing::synthetic_manifest;
using sslbd::testing::TempDir;

namespace {

std::set<std::string> poisoned_ids(const DatasetManifest& m) {
  std::set<std::string> out;
  for (const auto& e : m.entries)
    if (e.is_poisoned) out.insert(e.image_id);
  return out;
}

std::map<int, int> poisoned_per_class(const DatasetManifest& m) {
  std::map<int, int> out;
  for (const auto& e : m.entries)
    if (e.is_poisoned) ++out[e.label];
  return out;
}

// Python-style round half to even, computed independently of the library.
int64_t banker(double v) {
  const double f = std::floor(v);
  const double d = v - f;
  if (d > 0.5) return static_cast<int64_t>(f) + 1;
  if (d < 0.5) return static_cast<int64_t>(f);
  return static_cast<int64_t>(f) % 2 == 0 ? static_cast<int64_t>(f) : static_cast<int64_t>(f) + 1;
}

SyntheticSpec tiny_spec() {
  SyntheticSpec s;
  s.train_per_class = 4;
  s.val_per_class = 2;
  s.seed = 5;
  return s;
}

}  // namespace

TEST(Manifest, BuildsSortedDeterministicManifest) {
  TempDir dir("mf");
  for (const std::string cls : {"b", "a"})
    for (int i = 2; i >= 0; --i)
      write_png(dir / ("train/" + cls + "/" + cls + "_img" + std::to_string(i) + ".png"), Image(8, 6));
  std::ofstream(dir / "train/a/notes.txt") << "not an image";
  const auto m = build_manifest(dir.path(), Split::kTrain, "toy");
  ASSERT_EQ(m.entries.size(), 6u);
  EXPECT_EQ(m.classes, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(m.entries.front().label, 0);
  EXPECT_EQ(m.entries.back().label, 1);
  for (const auto& e : m.entries) {
    EXPECT_FALSE(e.is_poisoned);
    EXPECT_EQ(e.width, 8);
    EXPECT_EQ(e.height, 6);
  }
  EXPECT_LT(m.entries[0].image_id, m.entries[1].image_id);
  EXPECT_EQ(dump_manifest(m), dump_manifest(build_manifest(dir.path(), Split::kTrain, "toy")));
  // Ids are file stems and must stay unique across classes.
  write_png(dir / "train/b/a_img0.png", Image(8, 6));
  EXPECT_THROW(build_manifest(dir.path(), Split::kTrain, "toy"), Error);
}

TEST(Manifest, EmptyClassDirectoryYieldsEmptyClass) {
  TempDir dir("mf_empty");
  write_png(dir / "train/a/x.png", Image(4, 4));
  std::filesystem::create_directories(dir / "train/b");
  const auto m = build_manifest(dir.path(), Split::kTrain);
  EXPECT_EQ(m.classes.size(), 2u);
  EXPECT_EQ(m.class_size(1), 0u);
}

TEST(Manifest, SaveLoadRoundTripAndHash) {
  TempDir dir("mf_rt");
  auto m = synthetic_manifest({3, 4});
  const auto recipe = targeted_recipe_for_rate(m, 1, 2.0 / 7.0, {}, 3);
  m = poison_targeted(m, recipe);
  save_manifest(dir / "m.json", m);
  const auto back = load_manifest(dir / "m.json");
  EXPECT_EQ(dump_manifest(back), dump_manifest(m));
  EXPECT_EQ(back.content_hash(), m.content_hash());
  auto changed = m;
  changed.entries[0].label = 1;
  EXPECT_NE(changed.content_hash(), m.content_hash());
}

TEST(Manifest, ValidationRejectsInconsistentEntries) {
  auto m = synthetic_manifest({2});
  m.entries[0].is_poisoned = true;
  EXPECT_THROW(validate_manifest(m), DataError);
  m = synthetic_manifest({2});
  m.entries[1].image_id = m.entries[0].image_id;
  EXPECT_THROW(validate_manifest(m), DataError);
  EXPECT_THROW(synthetic_manifest({2}).class_index("nope"), ConfigError);
}

TEST(Poison, RoundHalfEvenMatchesIndependentOracle) {
  for (double v : {0.5, 1.5, 2.5, 3.5, 2.4999, 2.5001, 0.0, 499.5, 500.5, 12.0}) EXPECT_EQ(round_half_even(v), banker(v));
}

TEST(Poison, TargetedCifarScaleCount) {
  const auto m = synthetic_manifest(std::vector<int>(10, 5000));
  const auto recipe = targeted_recipe_for_rate(m, 3, 0.01, {}, 42);
  EXPECT_DOUBLE_EQ(recipe.within_class_fraction, 0.1);
  const auto p = poison_targeted(m, recipe);
  EXPECT_EQ(p.poisoned_count(), 500u);
  EXPECT_EQ(poisoned_per_class(p), (std::map<int, int>{{3, 500}}));
  EXPECT_EQ(p.entries.size(), m.entries.size());
  EXPECT_EQ(m.poisoned_count(), 0u);  // input untouched
}

TEST(Poison, TargetedHalfClassAtPaperScale) {
  // ~1300 per class over 100 classes, half of one class poisoned.
  const auto m = synthetic_manifest(std::vector<int>(100, 1300));
  PoisonRecipe r;
  r.mode = PoisonMode::kTargeted;
  r.target_classes = {7};
  r.within_class_fraction = 0.5;
  r.rng_seed = 1;
  const auto p = poison_targeted(m, r);
  EXPECT_EQ(p.poisoned_count(), 650u);
  EXPECT_NEAR(650.0 / 130000.0, 0.005, 1e-12);
}

TEST(Poison, ZeroFractionIsIdentity) {
  const auto m = synthetic_manifest({10, 10});
  PoisonRecipe r;
  r.target_classes = {0};
  const auto p = poison_targeted(m, r);
  EXPECT_EQ(p.poisoned_count(), 0u);
  for (std::size_t i = 0; i < m.entries.size(); ++i) EXPECT_EQ(p.entries[i].image_id, m.entries[i].image_id);
  EXPECT_EQ(poison_untargeted(m, 0.0, {}, 1).poisoned_count(), 0u);
}

TEST(Poison, RateBeyondClassSizeIsRateError) {
  const auto m = synthetic_manifest({10, 10});
  EXPECT_THROW(targeted_recipe_for_rate(m, 0, 0.8, {}, 1), ConfigError);
  EXPECT_THROW(poison_untargeted(m, 1.5, {}, 1), ConfigError);
}

TEST(Poison, UntargetedClassHistogramIsUniform) {
  const auto m = synthetic_manifest(std::vector<int>(10, 5000));
  const auto p = poison_untargeted(m, 0.05, {}, 77);
  ASSERT_EQ(p.poisoned_count(), 2500u);
  // Multivariate hypergeometric draw; the chi-square statistic is scaled by
  // the finite-population factor (N - 1) / (N - n).
  const double expected = 250.0;
  double chi2 = 0.0;
  for (auto [c, k] : poisoned_per_class(p)) chi2 += (k - expected) * (k - expected) / expected;
  chi2 *= (50000.0 - 1.0) / (50000.0 - 2500.0);
  EXPECT_LT(chi2, 21.666);  // chi-square, 9 dof, p = 0.01
}

TEST(Poison, SuperclassCountsPerClass) {
  const auto m = synthetic_manifest({100, 100, 100});
  PoisonRecipe r;
  r.mode = PoisonMode::kSuperclass;
  r.target_classes = {0, 2};
  r.within_class_fraction = 0.25;
  r.rng_seed = 9;
  const auto p = poison_superclass(m, r);
  EXPECT_EQ(p.poisoned_count(), 50u);
  EXPECT_EQ(poisoned_per_class(p), (std::map<int, int>{{0, 25}, {2, 25}}));
  r.target_classes = {0, 0};
  EXPECT_THROW(poison_superclass(m, r), ConfigError);
}

TEST(Poison, SingleClassSuperclassEqualsTargeted) {
  const auto m = synthetic_manifest({40, 40});
  PoisonRecipe r;
  r.mode = PoisonMode::kSuperclass;
  r.target_classes = {1};
  r.within_class_fraction = 0.3;
  r.rng_seed = 4;
  const auto s = poison_superclass(m, r);
  r.mode = PoisonMode::kTargeted;
  const auto t = poison_targeted(m, r);
  ASSERT_EQ(s.entries.size(), t.entries.size());
  for (std::size_t i = 0; i < s.entries.size(); ++i) {
    EXPECT_EQ(s.entries[i].is_poisoned, t.entries[i].is_poisoned);
    EXPECT_EQ(s.entries[i].placement, t.entries[i].placement);
  }
}

TEST(Poison, SeedSensitivityAndDeterminism) {
  const auto m = synthetic_manifest(std::vector<int>(10, 200));
  const auto a = poison_untargeted(m, 0.05, {}, 1);
  const auto b = poison_untargeted(m, 0.05, {}, 1);
  const auto c = poison_untargeted(m, 0.05, {}, 2);
  EXPECT_EQ(dump_manifest(a), dump_manifest(b));
  EXPECT_NE(poisoned_ids(a), poisoned_ids(c));
}

TEST(Poison, PoisonedEntriesCarryValidPlacements) {
  const auto m = synthetic_manifest(std::vector<int>(4, 50));
  const auto p = poison_untargeted(m, 0.5, {10, 0, 7}, 3);
  for (const auto& e : p.entries) {
    if (!e.is_poisoned) {
      EXPECT_FALSE(e.placement.has_value());
      continue;
    }
    ASSERT_TRUE(e.placement.has_value());
    EXPECT_EQ(e.trigger_id, 10);
    EXPECT_GE(e.placement->x, 0);
    EXPECT_LE(e.placement->x + 7, e.width);
    EXPECT_LE(e.placement->y + 7, e.height);
  }
  EXPECT_NO_THROW(validate_manifest(p));
}

TEST(Poison, RandomizedRecipesMatchClosedForm) {
  Rng rng = make_rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> sizes;
    const int k = 2 + static_cast<int>(uniform_index(rng, 8));
    for (int c = 0; c < k; ++c) sizes.push_back(20 + static_cast<int>(uniform_index(rng, 200)));
    const auto m = synthetic_manifest(sizes);
    const int64_t n = static_cast<int64_t>(m.entries.size());
    const int mode = trial % 3;
    DatasetManifest p;
    int64_t closed = 0;
    std::set<int> allowed;
    if (mode == 0) {
      const int t = static_cast<int>(uniform_index(rng, k));
      const double rate = uniform(rng, 0.0, 0.9) * sizes[t] / static_cast<double>(n);
      closed = banker(rate * n);
      p = poison_targeted(m, targeted_recipe_for_rate(m, t, rate, {}, trial));
      allowed = {t};
    } else if (mode == 1) {
      const double rate = uniform(rng, 0.0, 0.3);
      closed = banker(rate * n);
      p = poison_untargeted(m, rate, {}, trial);
      for (int c = 0; c < k; ++c) allowed.insert(c);
    } else {
      PoisonRecipe r;
      r.mode = PoisonMode::kSuperclass;
      r.within_class_fraction = uniform(rng, 0.0, 1.0);
      r.rng_seed = trial;
      for (int c = 0; c < k; c += 2) r.target_classes.push_back(c);
      for (int c : r.target_classes) closed += banker(r.within_class_fraction * sizes[c]);
      allowed = {r.target_classes.begin(), r.target_classes.end()};
      p = poison_superclass(m, r);
    }
    EXPECT_EQ(static_cast<int64_t>(p.poisoned_count()), closed) << "trial " << trial;
    for (auto [c, cnt] : poisoned_per_class(p)) EXPECT_TRUE(allowed.count(c)) << "trial " << trial;
    const auto labeled = select_labeled_subset(p, 0.5, trial);
    for (const auto& e : labeled.entries) EXPECT_FALSE(poisoned_ids(p).count(e.image_id));
  }
}

TEST(Poison, PatchedValsetPoisonsEverythingDeterministically) {
  const auto val = synthetic_manifest(std::vector<int>(10, 500), Split::kVal);
  const auto a = build_patched_valset(val, {}, 8);
  const auto b = build_patched_valset(val, {}, 8);
  EXPECT_EQ(a.poisoned_count(), 5000u);
  EXPECT_EQ(dump_manifest(a), dump_manifest(b));
  EXPECT_THROW(build_patched_valset(synthetic_manifest({2}), {}, 1), ConfigError);
}

TEST(Materialize, ZeroPoisonCopiesBytes) {
  TempDir src("mat_src"), out("mat_out");
  write_synthetic_dataset(tiny_spec(), src.path());
  const auto m = build_manifest(src.path(), Split::kTrain);
  const auto r = materialize(m, src.path(), out.path());
  EXPECT_EQ(r.clean_copied, m.entries.size());
  for (const auto& e : m.entries)
    EXPECT_EQ(sha256_file(src / e.relative_path), sha256_file(out / e.relative_path)) << e.image_id;
  EXPECT_EQ(read_text_file(out / "manifest_train.sha256"), r.manifest_hash + "\n");
}

TEST(Materialize, PoisonedFilesHoldTriggerAndNothingElseChanges) {
  TempDir src("mat2_src"), out("mat2_out"), again("mat2_again");
  write_synthetic_dataset(tiny_spec(), src.path());
  const TriggerSpec trig{11, 2, 7};
  const auto val = build_manifest(src.path(), Split::kVal);
  const auto patched = build_patched_valset(val, trig, 3);
  const auto r = materialize(patched, src.path(), out.path());
  EXPECT_EQ(r.poisoned_written, val.entries.size());
  const auto t = generate_trigger(trig);
  for (std::size_t i = 0; i < val.entries.size(); ++i) {
    const auto& e = r.manifest.entries[i];
    const Image clean = read_png(src / val.entries[i].relative_path);
    const Image poisoned = read_png(out / e.relative_path);
    const auto& pl = *e.placement;
    for (int y = 0; y < clean.height; ++y)
      for (int x = 0; x < clean.width; ++x)
        for (int c = 0; c < 3; ++c) {
          const bool inside = x >= pl.x && x < pl.x + 7 && y >= pl.y && y < pl.y + 7;
          if (inside) {
            ASSERT_EQ(poisoned.at(x, y, c), t.pixels.at(x - pl.x, y - pl.y, c));
          } else {
            ASSERT_EQ(poisoned.at(x, y, c), clean.at(x, y, c));
          }
        }
    EXPECT_EQ(read_png(out / *e.clean_twin_path), clean);
  }
  // Re-materializing from the frozen manifest reproduces identical files.
  const auto frozen = load_manifest(r.manifest_path);
  const auto r2 = materialize(frozen, out.path(), again.path());
  EXPECT_EQ(r2.manifest_hash, r.manifest_hash);
  for (const auto& e : r.manifest.entries)
    EXPECT_EQ(sha256_file(out / e.relative_path), sha256_file(again / e.relative_path));
}

TEST(Materialize, MissingSourceAndBadPlacementAreReported) {
  TempDir src("mat3_src"), out("mat3_out");
  write_synthetic_dataset(tiny_spec(), src.path());
  auto m = build_manifest(src.path(), Split::kTrain);
  auto missing = m;
  missing.entries[0].relative_path = "train/none.png";
  EXPECT_THROW(materialize(missing, src.path(), out.path()), IoError);

  m.entries[0].width = 200;
  m.entries[0].height = 200;
  PoisonRecipe r;
  r.mode = PoisonMode::kTargeted;
  r.target_classes = {m.entries[0].label};
  r.within_class_fraction = 1.0;
  r.rng_seed = 1;
  auto p = poison_targeted(m, r);
  p.entries[0].placement->x = 150;
  try {
    materialize(p, src.path(), out.path());
    FAIL() << "expected a placement error";
  } catch (const PlacementError& e) {
    EXPECT_NE(std::string(e.what()).find(p.entries[0].image_id), std::string::npos);
  }
}
