#include <gtest/gtest.h>
#include <torch/torch.h>

#include <algorithm>
#include <numeric>

#include "sslbd/checkpoint.hpp"
#include "sslbd/errors.hpp"
#include "sslbd/hashing.hpp"
#include "sslbd/manifest.hpp"
#include "sslbd/synthetic.hpp"
#include "sslbd/trainer.hpp"
#include "test_util.hpp"

using namespace sslbd;
using sslbd::testing::TempDir;

namespace {

MethodConfig tiny(MethodKind kind) {
  auto c = MethodConfig::desk(kind);
  c.backbone = BackboneConfig::desk();
  c.backbone.base_width = 4;
  c.batch_size = 8;
  c.queue_size = 32;
  c.memory_bank_size = 32;
  c.embedding_dim = 16;
  c.head_hidden_dim = 32;
  c.predictor_hidden_dim = 32;
  c.permutation_set_size = 10;
  c.augmentation = AugmentationPolicy::moco_v2(24);
  c.epochs = 2;
  return c;
}

UnlabeledImageSet in_memory(int n, uint64_t seed) {
  SyntheticSpec spec;
  spec.seed = seed;
  std::vector<UnlabeledSample> samples;
  for (int i = 0; i < n; ++i) {
    UnlabeledSample s;
    s.image_id = "img" + std::to_string(i);
    s.image = synthesize_image(spec, i % kSyntheticClasses, seed * 1000 + i);
    samples.push_back(std::move(s));
  }
  return UnlabeledImageSet(std::move(samples));
}

double slope(const std::vector<double>& y) {
  const double n = static_cast<double>(y.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    sx += i;
    sy += y[i];
    sxx += double(i) * i;
    sxy += i * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

TEST(EpochOrder, IsPermutationDependingOnlyOnSeedAndEpoch) {
  for (int epoch : {0, 1, 7}) {
    auto order = epoch_order(5, epoch, 100);
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> iota(100);
    std::iota(iota.begin(), iota.end(), 0);
    EXPECT_EQ(sorted, iota);
    EXPECT_EQ(order, epoch_order(5, epoch, 100));
  }
  EXPECT_NE(epoch_order(5, 0, 100), epoch_order(5, 1, 100));
  EXPECT_NE(epoch_order(5, 0, 100), epoch_order(6, 0, 100));
}

TEST(Trainer, ZeroEpochsWritesTheInitialization) {
  TempDir dir("train0");
  auto c = tiny(MethodKind::kMocoV2);
  c.epochs = 0;
  const auto result = train(c, in_memory(16, 1), dir.path());
  EXPECT_TRUE(result.step_losses.empty());
  auto fresh = make_method(c);
  auto loaded = load_encoder(result.checkpoint);
  EXPECT_TRUE(module_state_equal(*loaded.backbone, *fresh->backbone()));
  EXPECT_EQ(loaded.meta.epoch, 0);
}

TEST(Trainer, SameSeedSameLossesAndBytes) {
  TempDir a("train_a"), b("train_b");
  const auto data = in_memory(32, 2);
  const auto c = tiny(MethodKind::kMocoV2);
  const auto ra = train(c, data, a.path());
  const auto rb = train(c, data, b.path());
  ASSERT_EQ(ra.step_losses.size(), 8u);
  EXPECT_EQ(ra.step_losses, rb.step_losses);
  EXPECT_EQ(sha256_file(ra.checkpoint), sha256_file(rb.checkpoint));
  auto c2 = c;
  c2.seed = c.seed + 1;
  TempDir d("train_d");
  EXPECT_NE(train(c2, data, d.path()).step_losses, ra.step_losses);
}

TEST(Trainer, LabelsNeverInfluenceTraining) {
  TempDir root("labels");
  SyntheticSpec spec;
  spec.train_per_class = 3;
  spec.val_per_class = 1;
  write_synthetic_dataset(spec, root / "data");
  auto manifest = build_manifest(root / "data", Split::kTrain);
  auto scrambled = manifest;
  for (std::size_t i = 0; i < scrambled.entries.size(); ++i)
    scrambled.entries[i].label = static_cast<int>((i * 7 + 3) % scrambled.classes.size());
  const auto d1 = UnlabeledImageSet::load(manifest, root / "data");
  const auto d2 = UnlabeledImageSet::load(scrambled, root / "data");
  EXPECT_EQ(d1.fingerprint(), d2.fingerprint());
  auto c = tiny(MethodKind::kByol);
  c.epochs = 1;
  const auto r1 = train(c, d1, root / "run1");
  const auto r2 = train(c, d2, root / "run2");
  EXPECT_EQ(sha256_file(r1.checkpoint), sha256_file(r2.checkpoint));
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
  for (auto kind : {MethodKind::kMocoV2, MethodKind::kMsf}) {
    TempDir full("resume_full"), cut("resume_cut");
    const auto data = in_memory(24, 3);
    auto c = tiny(kind);
    c.epochs = 3;
    const auto reference = train(c, data, full.path());

    TrainOptions crash;
    crash.on_epoch = [](int epoch, double) {
      if (epoch == 1) throw std::runtime_error("simulated interruption");
    };
    EXPECT_THROW(train(c, data, cut.path(), crash), std::runtime_error);
    EXPECT_FALSE(std::filesystem::exists(cut / "final.ckpt"));
    const auto resumed = train(c, data, cut.path());
    EXPECT_EQ(resumed.resumed_from_epoch, 2) << to_string(kind);
    EXPECT_EQ(resumed.step_losses, reference.step_losses) << to_string(kind);
    EXPECT_EQ(sha256_file(resumed.checkpoint), sha256_file(reference.checkpoint)) << to_string(kind);
  }
}

TEST(Trainer, DataChangeDisablesResume) {
  TempDir dir("resume_data");
  auto c = tiny(MethodKind::kRotNet);
  c.epochs = 1;
  train(c, in_memory(16, 4), dir.path());
  c.epochs = 2;
  const auto r = train(c, in_memory(16, 5), dir.path());
  EXPECT_EQ(r.resumed_from_epoch, 0);
}

TEST(Trainer, DivergenceNamesStepAndBatch) {
  TempDir dir("diverge");
  auto c = tiny(MethodKind::kRotNet);
  c.optimizer.lr = 1e30;
  c.epochs = 5;
  try {
    train(c, in_memory(16, 6), dir.path());
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("batch ids: img"), std::string::npos) << e.what();
  }
}

TEST(Trainer, ViewModesNeedTwoViewMethod) {
  TempDir dir("views");
  TrainOptions o;
  o.view_mode = ViewMode::kOneViewPoisoned;
  EXPECT_THROW(train(tiny(MethodKind::kJigsaw), in_memory(16, 7), dir.path(), o), ConfigError);
  EXPECT_THROW(train(tiny(MethodKind::kMocoV2), UnlabeledImageSet{}, dir.path()), DataError);
}

// Smoke oracle: on structured data every method's loss trends down.
TEST(Trainer, LossTrendsDownForEveryMethod) {
  const auto data = in_memory(64, 8);
  for (auto kind : {MethodKind::kMocoV2, MethodKind::kByol, MethodKind::kMsf, MethodKind::kRotNet, MethodKind::kJigsaw}) {
    TempDir dir("trend");
    auto c = tiny(kind);
    c.epochs = 12;
    c.batch_size = 16;
    const auto r = train(c, data, dir.path());
    // Skip the first epoch, where queues and banks still hold random init.
    std::vector<double> tail(r.epoch_losses.begin() + 1, r.epoch_losses.end());
    EXPECT_LT(slope(tail), 0.0) << to_string(kind) << " first " << tail.front() << " last " << tail.back();
  }
}
