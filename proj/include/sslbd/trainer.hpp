#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "sslbd/augment.hpp"
#include "sslbd/dataset.hpp"
#include "sslbd/ssl_methods.hpp"

namespace sslbd {

struct TrainOptions {
  /// standard: both views from the stored file.
  /// one_view_poisoned: every poisoned sample shows its trigger in one view.
  /// random_poison_both_views: targeted poisons one view, untargeted poisons
  /// both views (the mixed control).
  ViewMode view_mode = ViewMode::kStandard;
  /// Epoch checkpoints kept on disk; 0 keeps all of them.
  int keep_epoch_checkpoints = 1;
  bool resume = true;
  int threads = 1;
  std::function<void(int epoch, double mean_loss)> on_epoch;
};

struct TrainResult {
  std::filesystem::path checkpoint;
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;
  int resumed_from_epoch = 0;
};

/// Ordering of sample indices for one epoch; depends only on (seed, epoch).
std::vector<std::size_t> epoch_order(uint64_t seed, int epoch, std::size_t n);

/// Augmentation stream for one sample; independent of batch composition.
Rng sample_rng(uint64_t seed, int epoch, std::size_t index);

/// Builds the method-specific inputs for `indices`.
TrainBatch make_batch(const SslMethod& method, const UnlabeledImageSet& data, const std::vector<std::size_t>& indices,
                      int epoch, ViewMode view_mode);

/// Runs the pretext task on `data` and writes <out_dir>/final.ckpt, epoch
/// checkpoints and train_log.jsonl. Labels never reach this function.
TrainResult train(const MethodConfig& config, const UnlabeledImageSet& data, const std::filesystem::path& out_dir,
                  const TrainOptions& options = {});

/// Optimizer over `params` as configured.
std::unique_ptr<torch::optim::Optimizer> make_optimizer(const OptimizerConfig& config,
                                                        const std::vector<torch::Tensor>& params);
void set_learning_rate(torch::optim::Optimizer& optimizer, double lr);

}  // namespace sslbd
