#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "sslbd/augment.hpp"
#include "sslbd/backbone.hpp"
#include "sslbd/permutations.hpp"
#include "sslbd/queue.hpp"

namespace sslbd {

enum class MethodKind { kMocoV2, kByol, kMsf, kRotNet, kJigsaw };

std::string to_string(MethodKind kind);
MethodKind parse_method(const std::string& text);

/// Frozen-feature tap per method: GAP output for the exemplar methods,
/// layer4 for RotNet, layer3 for Jigsaw.
TapLayer default_tap(MethodKind kind);

struct OptimizerConfig {
  std::string kind = "sgd";  // sgd | adam
  double lr = 0.06;
  double weight_decay = 1e-4;
  double momentum = 0.9;
};

struct ScheduleConfig {
  std::string kind = "cosine";  // cosine | step
  std::vector<int> milestones;  // epochs, step schedule only
  double gamma = 0.1;

  /// Learning rate for global step `step` of `total_steps` in epoch `epoch`.
  /// Cosine reaches exactly 0 at the final step.
  double lr_at(double base_lr, int64_t step, int64_t total_steps, int epoch) const;
};

struct MethodConfig {
  MethodKind method = MethodKind::kMocoV2;
  int embedding_dim = 128;
  int head_hidden_dim = 512;
  int predictor_hidden_dim = 512;
  double temperature = 0.2;
  int64_t queue_size = 4096;
  double ema_momentum = 0.999;
  int nn_count = 10;
  int64_t memory_bank_size = 16384;
  int permutation_set_size = 100;
  OptimizerConfig optimizer;
  ScheduleConfig schedule;
  int epochs = 200;
  int batch_size = 256;
  uint64_t seed = 0;
  BackboneConfig backbone = BackboneConfig::resnet18();
  AugmentationPolicy augmentation = AugmentationPolicy::moco_v2(32);

  /// Full-size hyperparameters as published for each method.
  static MethodConfig paper(MethodKind kind);
  /// CIFAR-scale defaults (smaller queue and bank, 32 px inputs).
  static MethodConfig desk(MethodKind kind);

  bool pairwise() const {
    return method == MethodKind::kMocoV2 || method == MethodKind::kByol || method == MethodKind::kMsf;
  }
  void validate() const;
};

nlohmann::json to_json(const MethodConfig& c);
MethodConfig method_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AugmentationPolicy& p);
AugmentationPolicy augmentation_from_json(const nlohmann::json& j);

/// One optimizer step worth of inputs.
///  - pairwise methods: view1/view2 are [N, 3, S, S].
///  - rotnet: view1 holds rotated images, labels the quarter-turn index.
///  - jigsaw: view1 holds shuffled tiles [N * 9, 3, t, t], labels the
///    permutation index.
struct TrainBatch {
  torch::Tensor view1;
  torch::Tensor view2;
  torch::Tensor labels;
};

/// Backbone followed by a projection head.
class EncoderImpl : public torch::nn::Module {
 public:
  EncoderImpl(ResNet backbone, torch::nn::Sequential head);
  torch::Tensor forward(const torch::Tensor& x);

  ResNet backbone{nullptr};
  torch::nn::Sequential head{nullptr};
};
TORCH_MODULE(Encoder);

/// Interface shared by all pretext methods. The owning trainer calls
/// loss(), backpropagates, steps the optimizer and then after_step().
class SslMethod : public torch::nn::Module {
 public:
  explicit SslMethod(const MethodConfig& config);

  virtual torch::Tensor loss(const TrainBatch& batch) = 0;
  /// Post-optimizer bookkeeping (EMA, queue/bank update).
  virtual void after_step() {}

  /// Parameters the optimizer updates.
  virtual std::vector<torch::Tensor> trainable_parameters();

  /// Non-parameter state (queues) in and out of a checkpoint archive.
  virtual void save_state(torch::serialize::OutputArchive& archive) const;
  virtual void load_state(torch::serialize::InputArchive& archive);

  ResNet& backbone() { return backbone_; }
  const MethodConfig& config() const { return config_; }

 protected:
  MethodConfig config_;
  ResNet backbone_{nullptr};
};

class MocoV2 : public SslMethod {
 public:
  explicit MocoV2(const MethodConfig& config);
  torch::Tensor loss(const TrainBatch& batch) override;
  void after_step() override;
  std::vector<torch::Tensor> trainable_parameters() override;
  void save_state(torch::serialize::OutputArchive& archive) const override;
  void load_state(torch::serialize::InputArchive& archive) override;

  FeatureQueue& queue() { return queue_; }
  torch::nn::Module& query_encoder() { return *query_; }
  torch::nn::Module& key_encoder() { return *key_; }

 private:
  Encoder query_{nullptr};
  Encoder key_{nullptr};
  torch::nn::Sequential head_{nullptr};
  FeatureQueue queue_;
  torch::Tensor pending_keys_;
};

class Byol : public SslMethod {
 public:
  explicit Byol(const MethodConfig& config);
  torch::Tensor loss(const TrainBatch& batch) override;
  void after_step() override;
  std::vector<torch::Tensor> trainable_parameters() override;

  torch::nn::Module& online_encoder() { return *online_; }
  torch::nn::Module& target_encoder() { return *target_; }

 private:
  Encoder online_{nullptr};
  Encoder target_{nullptr};
  torch::nn::Sequential predictor_{nullptr};
};

class Msf : public SslMethod {
 public:
  explicit Msf(const MethodConfig& config);
  torch::Tensor loss(const TrainBatch& batch) override;
  void after_step() override;
  std::vector<torch::Tensor> trainable_parameters() override;
  void save_state(torch::serialize::OutputArchive& archive) const override;
  void load_state(torch::serialize::InputArchive& archive) override;

  FeatureQueue& bank() { return bank_; }

 private:
  Encoder online_{nullptr};
  Encoder target_{nullptr};
  torch::nn::Sequential predictor_{nullptr};
  FeatureQueue bank_;
  torch::Tensor pending_targets_;
};

class RotNet : public SslMethod {
 public:
  explicit RotNet(const MethodConfig& config);
  torch::Tensor loss(const TrainBatch& batch) override;
  std::vector<torch::Tensor> trainable_parameters() override;

 private:
  torch::nn::Linear head_{nullptr};
};

class Jigsaw : public SslMethod {
 public:
  explicit Jigsaw(const MethodConfig& config);
  torch::Tensor loss(const TrainBatch& batch) override;
  std::vector<torch::Tensor> trainable_parameters() override;

  const PermutationSet& permutations() const { return perms_; }

 private:
  torch::nn::Sequential head_{nullptr};
  PermutationSet perms_;
};

std::shared_ptr<SslMethod> make_method(const MethodConfig& config);

/// Side length the jigsaw path resizes views to before tiling.
int jigsaw_canvas(int output_size);

/// Cuts a [3, S, S] view into a 3x3 grid and reorders tiles so that grid
/// cell i holds source tile perm[i]. Returns [9, 3, S/3, S/3].
torch::Tensor jigsaw_tiles(const torch::Tensor& view, const TilePermutation& perm);

/// Inverse of jigsaw_tiles for the identity ordering.
torch::Tensor assemble_tiles(const torch::Tensor& tiles);

/// Counter-clockwise quarter turns of a [3, S, S] view.
torch::Tensor rotate_view(const torch::Tensor& view, int quarter_turns);

}  // namespace sslbd
