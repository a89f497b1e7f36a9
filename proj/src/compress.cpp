#include "sslbd/compress.hpp"

#include <cmath>
#include <fstream>

#include "sslbd/errors.hpp"
#include "sslbd/hashing.hpp"
#include "sslbd/losses.hpp"
#include "sslbd/probe.hpp"
#include "sslbd/trainer.hpp"

namespace sslbd {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

void DistillConfig::validate() const {
  if (!(clean_fraction > 0.0 && clean_fraction <= 1.0)) throw ConfigError("clean_fraction must lie in (0, 1]");
  if (anchor_count < 1) throw ConfigError("anchor_count must be positive");
  if (!(temperature > 0.0)) throw ConfigError("distillation temperature must be positive");
  if (epochs < 0 || batch_size <= 0) throw ConfigError("invalid distillation schedule");
}

nlohmann::json to_json(const DistillConfig& c) {
  return {{"clean_fraction", c.clean_fraction},
          {"anchor_count", c.anchor_count},
          {"temperature", c.temperature},
          {"optimizer",
           {{"kind", c.optimizer.kind},
            {"lr", c.optimizer.lr},
            {"weight_decay", c.optimizer.weight_decay},
            {"momentum", c.optimizer.momentum}}},
          {"schedule", {{"kind", c.schedule.kind}, {"milestones", c.schedule.milestones}, {"gamma", c.schedule.gamma}}},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"head_hidden_dim", c.head_hidden_dim},
          {"seed", c.seed},
          {"student_backbone", c.student_backbone}};
}

DistillConfig distill_config_from_json(const nlohmann::json& j) {
  DistillConfig c;
  try {
    c.clean_fraction = j.value("clean_fraction", c.clean_fraction);
    c.anchor_count = j.value("anchor_count", c.anchor_count);
    c.temperature = j.value("temperature", c.temperature);
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      c.optimizer.kind = o.value("kind", c.optimizer.kind);
      c.optimizer.lr = o.value("lr", c.optimizer.lr);
      c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
      c.optimizer.momentum = o.value("momentum", c.optimizer.momentum);
    }
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      c.schedule.kind = s.value("kind", c.schedule.kind);
      c.schedule.milestones = s.value("milestones", c.schedule.milestones);
      c.schedule.gamma = s.value("gamma", c.schedule.gamma);
    }
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.head_hidden_dim = j.value("head_hidden_dim", c.head_hidden_dim);
    c.seed = j.value("seed", c.seed);
    if (j.contains("student_backbone")) c.student_backbone = j.at("student_backbone");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("distill config: ") + e.what());
  }
  c.validate();
  return c;
}

torch::Tensor teacher_embed(LoadedEncoder& teacher, const torch::Tensor& batch) {
  torch::NoGradGuard guard;
  teacher.backbone->eval();
  return F::normalize(teacher.backbone->features(batch, teacher.meta.tap), F::NormalizeFuncOptions().dim(1));
}

AnchorBank build_anchor_bank(LoadedEncoder& teacher, const UnlabeledImageSet& data, int64_t count, double temperature,
                             uint64_t seed) {
  if (data.empty() || count < 1) throw ConfigError("anchor bank needs at least one image");
  const auto policy = eval_policy(teacher.meta);
  std::vector<std::size_t> order = epoch_order(derive_seed(seed, "anchors"), 0, data.size());
  order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(count)));
  AnchorBank bank;
  bank.temperature = temperature;
  std::vector<torch::Tensor> chunks;
  for (std::size_t i = 0; i < order.size(); i += 256) {
    std::vector<torch::Tensor> batch;
    for (std::size_t j = i; j < std::min(order.size(), i + 256); ++j) {
      batch.push_back(preprocess_eval(data[order[j]].image, policy));
      bank.ids.push_back(data[order[j]].image_id);
    }
    chunks.push_back(teacher_embed(teacher, torch::stack(batch)));
  }
  bank.anchors = torch::cat(chunks, 0);
  return bank;
}

torch::Tensor similarity_distribution(const torch::Tensor& embeddings, const AnchorBank& bank) {
  return similarity_distribution(embeddings, bank.anchors, bank.temperature);
}

torch::Tensor compress_loss(const torch::Tensor& teacher_dist, const torch::Tensor& student_dist) {
  return kl_divergence(teacher_dist, student_dist);
}

StudentImpl::StudentImpl(const BackboneConfig& cfg, int teacher_dim, int hidden_dim) {
  backbone = register_module("backbone", ResNet(cfg));
  head = register_module("head", make_mlp_head(cfg.output_dim(), hidden_dim, teacher_dim));
}

torch::Tensor StudentImpl::forward(const torch::Tensor& x) {
  return F::normalize(head->forward(backbone->forward(x)), F::NormalizeFuncOptions().dim(1));
}

void require_clean(const DatasetManifest& manifest) {
  std::string bad;
  std::size_t count = 0;
  for (const auto& e : manifest.entries) {
    if (!e.is_poisoned) continue;
    if (count++ < 20) bad += (bad.empty() ? "" : ", ") + e.image_id;
  }
  if (count > 0) {
    throw DataError("distillation data must be clean; " + std::to_string(count) + " poisoned entries: " + bad +
                    (count > 20 ? ", ..." : ""));
  }
}

DatasetManifest select_distill_subset(const DatasetManifest& clean_train, double fraction, uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("clean fraction must lie in (0, 1]");
  require_clean(clean_train);
  const auto order = epoch_order(derive_seed(seed, "distill-subset"), 0, clean_train.entries.size());
  const auto n = static_cast<std::size_t>(
      std::max<int64_t>(1, std::llround(fraction * static_cast<double>(clean_train.entries.size()))));
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n && i < order.size(); ++i) ids.push_back(clean_train.entries[order[i]].image_id);
  return subset_manifest(clean_train, ids);
}

DistillResult distill(const fs::path& teacher_checkpoint, const UnlabeledImageSet& clean, const DistillConfig& config,
                      const fs::path& out_dir, int threads) {
  config.validate();
  if (clean.empty()) throw DataError("distillation set is empty");
  for (const auto& s : clean.samples()) {
    if (s.poison_kind != PoisonKind::kNone) throw DataError("poisoned image in distillation data: " + s.image_id);
  }
  torch::set_num_threads(threads);
  fs::create_directories(out_dir);

  DistillResult result;
  result.teacher_hash_before = sha256_file(teacher_checkpoint);
  auto teacher = load_encoder(teacher_checkpoint);
  const auto policy = eval_policy(teacher.meta);
  const auto bank = build_anchor_bank(teacher, clean, config.anchor_count, config.temperature, config.seed);

  const BackboneConfig student_cfg = config.student_backbone.is_null() || config.student_backbone.empty()
                                         ? teacher.backbone->config()
                                         : backbone_from_json(config.student_backbone);
  torch::manual_seed(static_cast<uint64_t>(derive_seed(config.seed, "student-init") & 0x7fffffffffffffffULL));
  Student student(student_cfg, static_cast<int>(bank.anchors.size(1)), config.head_hidden_dim);
  student->train();
  auto optimizer = make_optimizer(config.optimizer, student->parameters());

  const std::size_t n = clean.size();
  const std::size_t batch = std::min<std::size_t>(config.batch_size, n);
  const int64_t steps_per_epoch = static_cast<int64_t>(n / batch);
  const int64_t total_steps = steps_per_epoch * config.epochs;
  std::ofstream log(out_dir / "distill_log.jsonl", std::ios::trunc);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = epoch_order(derive_seed(config.seed, "distill"), epoch, n);
    double total = 0.0;
    for (int64_t s = 0; s < steps_per_epoch; ++s) {
      const int64_t step = epoch * steps_per_epoch + s;
      const double lr = config.schedule.lr_at(config.optimizer.lr, step, total_steps, epoch);
      set_learning_rate(*optimizer, lr);
      std::vector<torch::Tensor> views;
      for (std::size_t k = s * batch; k < (s + 1) * batch; ++k) {
        Rng rng = sample_rng(derive_seed(config.seed, "distill"), epoch, order[k]);
        views.push_back(augment(clean[order[k]].image, policy, rng).pixels);
      }
      const auto x = torch::stack(views);
      const auto p_t = similarity_distribution(teacher_embed(teacher, x), bank);
      const auto p_s = similarity_distribution(student->forward(x), bank);
      auto loss = compress_loss(p_t, p_s);
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        throw DivergenceError("non-finite distillation loss at step " + std::to_string(step));
      }
      optimizer->zero_grad();
      loss.backward();
      optimizer->step();
      total += value;
      log << nlohmann::json{{"step", step}, {"epoch", epoch}, {"lr", lr}, {"loss", value}}.dump() << "\n";
    }
    result.epoch_losses.push_back(total / static_cast<double>(std::max<int64_t>(1, steps_per_epoch)));
  }

  CheckpointMeta meta;
  meta.kind = "student";
  meta.config = {{"backbone", to_json(student_cfg)},
                 {"augmentation", to_json(policy)},
                 {"distill", to_json(config)},
                 {"teacher_hash", result.teacher_hash_before}};
  meta.data_fingerprint = clean.fingerprint();
  meta.epoch = config.epochs;
  meta.tap = TapLayer::kPooled;
  result.checkpoint = out_dir / "student.ckpt";
  save_checkpoint(result.checkpoint, meta, *student->backbone, *student);
  result.teacher_hash_after = sha256_file(teacher_checkpoint);
  if (result.teacher_hash_after != result.teacher_hash_before) throw ProvenanceError("teacher checkpoint changed");
  return result;
}

}  // namespace sslbd
