#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>
#include <torch/torch.h>

#include "sslbd/backbone.hpp"

namespace sslbd {

class SslMethod;

inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  int version = kCheckpointVersion;
  /// "ssl" for pretext training, "student" for distilled encoders.
  std::string kind = "ssl";
  nlohmann::json config;
  /// Fingerprint of the unlabeled training data the weights were fit on.
  std::string data_fingerprint;
  int epoch = 0;
  TapLayer tap = TapLayer::kPooled;
};

nlohmann::json to_json(const CheckpointMeta& m);
CheckpointMeta checkpoint_meta_from_json(const nlohmann::json& j);

/// Single-file archive: meta JSON, the backbone, the full method module, its
/// queue state and optionally optimizer state.
void save_checkpoint(const std::filesystem::path& path, const CheckpointMeta& meta, torch::nn::Module& backbone,
                     torch::nn::Module& full_model, const SslMethod* method_state = nullptr,
                     torch::optim::Optimizer* optimizer = nullptr);

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

/// Restores the full module (and optimizer, queues) of a training run.
void load_training_state(const std::filesystem::path& path, torch::nn::Module& full_model, SslMethod* method_state,
                         torch::optim::Optimizer* optimizer);

/// Frozen encoder for evaluation.
struct LoadedEncoder {
  CheckpointMeta meta;
  ResNet backbone{nullptr};
  std::string file_hash;
};

LoadedEncoder load_encoder(const std::filesystem::path& path);

}  // namespace sslbd
