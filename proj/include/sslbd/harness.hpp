#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sslbd/compress.hpp"
#include "sslbd/probe.hpp"
#include "sslbd/report.hpp"
#include "sslbd/ssl_methods.hpp"
#include "sslbd/synthetic.hpp"
#include "sslbd/trigger.hpp"

namespace sslbd {

inline constexpr const char* kToolVersion = "sslbd 0.1.0";

struct DatasetConfig {
  /// synthetic | cifar10 | stl10 | imagenet-subset | folder
  std::string preset = "synthetic";
  /// Folder with train/ and val/ class subdirectories. For the synthetic
  /// preset an empty root means "generate under <output_root>/datasets".
  std::filesystem::path root;
  SyntheticSpec synthetic;
};

struct PoisonConfig {
  /// targeted | untargeted | superclass | none
  std::string mode = "targeted";
  /// Class names (or decimal indices).
  std::vector<std::string> target_classes;
  /// Fraction of the whole training split; targeted recipes derive their
  /// within-class fraction from it.
  double rate = 0.01;
  /// Superclass only: fraction of each listed class.
  double within_class_fraction = 0.0;
  /// Class-agnostic poison added on top, shown in both views.
  double extra_untargeted_rate = 0.0;
};

struct StageSeeds {
  uint64_t poison = 1;
  uint64_t patched_val = 2;
  uint64_t train = 3;
  uint64_t probe = 4;
  uint64_t distill = 5;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetConfig dataset;
  TriggerSpec trigger;
  PoisonConfig poison;
  MethodConfig method = MethodConfig::desk(MethodKind::kMocoV2);
  ProbeConfig probe;
  std::optional<DistillConfig> distill;
  ViewMode view_mode = ViewMode::kStandard;
  StageSeeds seeds;
  std::filesystem::path output_root = "runs";
  int threads = 1;
  /// Epoch checkpoints kept per training stage (0 keeps all).
  int keep_epoch_checkpoints = 1;
};

nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Hash of everything that determines results (output root and thread
/// count excluded), 16 hex digits.
std::string config_hash(const ExperimentConfig& c);

struct StageRecord {
  std::string name;
  std::filesystem::path dir;
  std::string input_hash;
  double seconds = 0.0;
  bool reused = false;
  std::map<std::string, std::string> artifacts;  // name -> sha256
};

struct RunRecord {
  std::string config_hash;
  nlohmann::json config;
  std::vector<StageRecord> stages;
  std::string tool_version = kToolVersion;
  EvalReport clean_model;
  EvalReport backdoored_model;
  std::optional<EvalReport> student;
  std::int64_t poisoned_count = 0;
  std::int64_t expected_poisoned_count = 0;

  const StageRecord& stage(const std::string& name) const;
};

nlohmann::json to_json(const RunRecord& r);
RunRecord run_record_from_json(const nlohmann::json& j);

/// poison -> train (clean and backdoored) -> probe -> evaluate, plus the
/// optional distillation of the backdoored encoder. Completed runs are
/// loaded from <out>/<hash>/run_record.json unless `force`.
RunRecord run_attack_pipeline(const ExperimentConfig& config, bool force = false);

struct ViewAnalysisRow {
  std::string label;
  ViewMode view_mode = ViewMode::kStandard;
  double extra_untargeted_rate = 0.0;
  RunRecord run;
};

struct ViewAnalysis {
  std::vector<ViewAnalysisRow> rows;
  nlohmann::json json;
  std::string text;
};

/// Standard attack, one-view attack, one-view attack plus both-view random
/// poison at the same rate; shared seeds.
ViewAnalysis run_view_mode_analysis(const ExperimentConfig& config);

struct AblationPoint {
  double rate = 0.0;
  double target_fp = 0.0;
  double clean_acc = 0.0;
  double patched_acc = 0.0;
  RunRecord run;
};

struct RateAblation {
  std::vector<AblationPoint> points;
  double clean_baseline_fp = 0.0;
  nlohmann::json json;
  std::string text;
};

/// One pipeline per rate; `rates` must be sorted in descending order.
RateAblation run_rate_ablation(const ExperimentConfig& config, const std::vector<double>& rates);

/// Dataset root for `config`, generating the synthetic preset if needed.
std::filesystem::path resolve_dataset_root(const ExperimentConfig& config);

/// Probe on `labeled`, then classify clean and patched validation images.
EvalReport evaluate_encoder(const std::filesystem::path& checkpoint, const LabeledImageSet& labeled,
                            const LabeledImageSet& val, const LabeledImageSet& patched_val,
                            const std::vector<std::string>& classes, std::optional<int> target_class,
                            const ProbeConfig& probe, const std::filesystem::path& probe_out = {});

}  // namespace sslbd
