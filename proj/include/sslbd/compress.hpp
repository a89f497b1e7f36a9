#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "sslbd/checkpoint.hpp"
#include "sslbd/dataset.hpp"
#include "sslbd/ssl_methods.hpp"

namespace sslbd {

struct DistillConfig {
  double clean_fraction = 0.25;
  int64_t anchor_count = 4096;
  double temperature = 0.04;
  OptimizerConfig optimizer{"sgd", 0.05, 1e-4, 0.9};
  ScheduleConfig schedule{"cosine", {}, 0.1};
  int epochs = 130;
  int batch_size = 256;
  int head_hidden_dim = 512;
  uint64_t seed = 0;
  /// Student backbone; empty means "same as the teacher".
  nlohmann::json student_backbone;

  void validate() const;
};

nlohmann::json to_json(const DistillConfig& c);
DistillConfig distill_config_from_json(const nlohmann::json& j);

/// Unit-norm teacher embeddings of a fixed anchor image set.
struct AnchorBank {
  torch::Tensor anchors;  // [A, d]
  std::vector<std::string> ids;
  double temperature = 0.04;

  int64_t size() const { return anchors.defined() ? anchors.size(0) : 0; }
};

/// Teacher embeddings (normalized) of `images` under eval preprocessing.
torch::Tensor teacher_embed(LoadedEncoder& teacher, const torch::Tensor& batch);

/// Draws min(count, |data|) anchors from `data` with `seed` and embeds them.
AnchorBank build_anchor_bank(LoadedEncoder& teacher, const UnlabeledImageSet& data, int64_t count, double temperature,
                             uint64_t seed);

/// Per-row softmax over anchor cosines / temperature.
torch::Tensor similarity_distribution(const torch::Tensor& embeddings, const AnchorBank& bank);

/// KL(teacher || student), averaged over rows.
torch::Tensor compress_loss(const torch::Tensor& teacher_dist, const torch::Tensor& student_dist);

/// Fresh backbone plus a head projecting into the teacher's embedding width.
class StudentImpl : public torch::nn::Module {
 public:
  StudentImpl(const BackboneConfig& backbone, int teacher_dim, int hidden_dim);
  torch::Tensor forward(const torch::Tensor& x);
  ResNet backbone{nullptr};
  torch::nn::Sequential head{nullptr};
};
TORCH_MODULE(Student);

/// Subset of a clean manifest used for distillation. Fractions share one
/// shuffled order, so smaller fractions are prefixes of larger ones.
DatasetManifest select_distill_subset(const DatasetManifest& clean_train, double fraction, uint64_t seed);

/// Refuses manifests carrying poisoned entries; lists offending ids.
void require_clean(const DatasetManifest& manifest);

struct DistillResult {
  std::filesystem::path checkpoint;
  std::vector<double> epoch_losses;
  std::string teacher_hash_before;
  std::string teacher_hash_after;
};

/// Trains a fresh student to match the teacher's anchor distributions on
/// `clean`. Writes <out_dir>/student.ckpt and distill_log.jsonl.
DistillResult distill(const std::filesystem::path& teacher_checkpoint, const UnlabeledImageSet& clean,
                      const DistillConfig& config, const std::filesystem::path& out_dir, int threads = 1);

}  // namespace sslbd
