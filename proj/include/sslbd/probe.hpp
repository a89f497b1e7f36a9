#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "sslbd/augment.hpp"
#include "sslbd/checkpoint.hpp"
#include "sslbd/image.hpp"
#include "sslbd/manifest.hpp"

namespace sslbd {

struct EmbeddingMatrix {
  torch::Tensor rows;  // [n, d] float
  std::vector<std::string> row_ids;
  std::string source_checkpoint_hash;
  std::string preprocessing = "resize+center-crop+normalize";

  int64_t size() const { return rows.defined() ? rows.size(0) : 0; }
  int64_t dim() const { return rows.defined() ? rows.size(1) : 0; }
};

/// Deterministic frozen features at the checkpoint's tap, in input order.
EmbeddingMatrix extract_embeddings(LoadedEncoder& encoder, const std::vector<Image>& images,
                                   const std::vector<std::string>& ids, int batch_size = 256);

/// Eval preprocessing recorded in the checkpoint's config.
AugmentationPolicy eval_policy(const CheckpointMeta& meta);

struct ProbeConfig {
  double label_fraction = 0.1;
  double lr = 0.01;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  int epochs = 40;
  std::vector<int> milestones{15, 30};
  double gamma = 0.1;
  int batch_size = 32;
  /// Per-feature standardization of the inputs; off by default.
  bool standardize = false;
  uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const ProbeConfig& c);
ProbeConfig probe_config_from_json(const nlohmann::json& j);

/// Class-stratified sample of never-poisoned entries; round(fraction * n_c)
/// per class, at least one.
DatasetManifest select_labeled_subset(const DatasetManifest& train, double fraction, uint64_t seed);

struct LinearProbe {
  torch::Tensor weight;  // [C, d]
  torch::Tensor bias;    // [C]
  torch::Tensor feature_mean;  // [d], standardization only
  torch::Tensor feature_scale;  // [d]
  double train_accuracy = 0.0;
  std::vector<double> epoch_losses;

  int64_t num_classes() const { return weight.size(0); }
  int64_t dim() const { return weight.size(1); }
  torch::Tensor scores(const torch::Tensor& x) const;
};

LinearProbe train_linear_probe(const torch::Tensor& embeddings, const std::vector<int>& labels, int num_classes,
                               const ProbeConfig& config);

/// Argmax of class scores; exact ties go to the lowest class index.
std::vector<int> predict(const LinearProbe& probe, const torch::Tensor& embeddings);

void save_probe(const std::filesystem::path& path, const LinearProbe& probe);
LinearProbe load_probe(const std::filesystem::path& path);

struct EvalReport {
  static constexpr int kSchemaVersion = 1;
  std::vector<std::string> classes;
  int64_t n = 0;
  double clean_acc = 0.0;    // percent
  double patched_acc = 0.0;  // percent
  std::vector<int64_t> fp_clean;
  std::vector<int64_t> fp_patched;
  std::optional<int> target_class;
  nlohmann::json metadata = nlohmann::json::object();

  int64_t target_fp_clean() const { return target_class ? fp_clean.at(*target_class) : 0; }
  int64_t target_fp_patched() const { return target_class ? fp_patched.at(*target_class) : 0; }
  /// Classes ordered by patched FP, descending (ties by index), first `k`.
  std::vector<int> top_fp_classes(std::size_t k = 10) const;
};

/// FP(c) = |{x : true(x) != c and pred(x) = c}|.
std::vector<int64_t> false_positives(const std::vector<int>& truth, const std::vector<int>& pred, int num_classes);
double accuracy_percent(const std::vector<int>& truth, const std::vector<int>& pred);

EvalReport make_eval_report(const std::vector<std::string>& classes, const std::vector<int>& truth,
                            const std::vector<int>& pred_clean, const std::vector<int>& pred_patched,
                            std::optional<int> target_class);

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

/// Table-1-style text for one report.
std::string render_eval_table(const EvalReport& r);

/// Embeddings of clean and patched validation images for external
/// projection. Picks `per_class` clean rows from each listed class and
/// `patched_count` patched rows from those classes.
struct ExportSpec {
  std::vector<int> classes;
  int per_class = 50;
  int patched_count = 50;
  uint64_t seed = 0;
};

struct ExportBundle {
  std::vector<std::string> row_ids;
  std::vector<int> labels;
  std::vector<bool> is_patched;
  torch::Tensor rows;
};

ExportBundle select_export_rows(const EmbeddingMatrix& clean, const EmbeddingMatrix& patched,
                                const std::vector<int>& labels, const ExportSpec& spec);
void write_export_bundle(const std::filesystem::path& csv_path, const ExportBundle& bundle, int64_t dim,
                         const nlohmann::json& sidecar);

}  // namespace sslbd
