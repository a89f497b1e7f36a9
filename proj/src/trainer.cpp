#include "sslbd/trainer.hpp"

#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

#include "sslbd/checkpoint.hpp"
#include "sslbd/errors.hpp"
#include "sslbd/hashing.hpp"

namespace sslbd {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

std::vector<std::size_t> epoch_order(uint64_t seed, int epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = make_rng(derive_seed(derive_seed(seed, "order"), static_cast<uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  return order;
}

Rng sample_rng(uint64_t seed, int epoch, std::size_t index) {
  return make_rng(derive_seed(derive_seed(seed, "augment"), static_cast<uint64_t>(epoch), index));
}

namespace {

ViewMode sample_mode(ViewMode mode, PoisonKind kind) {
  if (kind == PoisonKind::kNone) return ViewMode::kStandard;
  if (mode == ViewMode::kRandomPoisonBothViews) {
    return kind == PoisonKind::kUntargeted ? ViewMode::kStandard : ViewMode::kOneViewPoisoned;
  }
  return mode;
}

}  // namespace

TrainBatch make_batch(const SslMethod& method, const UnlabeledImageSet& data, const std::vector<std::size_t>& indices,
                      int epoch, ViewMode view_mode) {
  const auto& cfg = method.config();
  const auto& policy = cfg.augmentation;
  std::vector<torch::Tensor> v1, v2;
  std::vector<int64_t> labels;
  for (std::size_t idx : indices) {
    const auto& s = data[idx];
    Rng rng = sample_rng(cfg.seed, epoch, idx);
    if (cfg.pairwise()) {
      const ViewMode mode = sample_mode(view_mode, s.poison_kind);
      const Image* twin = s.clean_twin ? &*s.clean_twin : nullptr;
      auto pair = augment_pair(s.image, policy, rng, mode, twin);
      v1.push_back(pair.first.pixels);
      v2.push_back(pair.second.pixels);
    } else if (cfg.method == MethodKind::kRotNet) {
      const int k = static_cast<int>(uniform_index(rng, 4));
      v1.push_back(rotate_view(augment(s.image, policy, rng).pixels, k));
      labels.push_back(k);
    } else {
      const auto& jig = static_cast<const Jigsaw&>(method);
      const int side = jigsaw_canvas(policy.output_size);
      auto view = augment(s.image, policy, rng).pixels;
      if (view.size(1) != side) {
        view = F::interpolate(view.unsqueeze(0), F::InterpolateFuncOptions()
                                                     .size(std::vector<int64_t>{side, side})
                                                     .mode(torch::kBilinear)
                                                     .align_corners(false))
                   .squeeze(0);
      }
      const auto p = uniform_index(rng, jig.permutations().perms.size());
      v1.push_back(jigsaw_tiles(view, jig.permutations().perms[p]));
      labels.push_back(static_cast<int64_t>(p));
    }
  }
  TrainBatch batch;
  if (cfg.method == MethodKind::kJigsaw) {
    batch.view1 = torch::cat(v1, 0);
  } else {
    batch.view1 = torch::stack(v1);
  }
  if (!v2.empty()) batch.view2 = torch::stack(v2);
  if (!labels.empty()) batch.labels = torch::tensor(labels, torch::kLong);
  return batch;
}

std::unique_ptr<torch::optim::Optimizer> make_optimizer(const OptimizerConfig& config,
                                                        const std::vector<torch::Tensor>& params) {
  if (config.kind == "sgd") {
    return std::make_unique<torch::optim::SGD>(
        params, torch::optim::SGDOptions(config.lr).momentum(config.momentum).weight_decay(config.weight_decay));
  }
  if (config.kind == "adam") {
    return std::make_unique<torch::optim::Adam>(params,
                                                torch::optim::AdamOptions(config.lr).weight_decay(config.weight_decay));
  }
  throw ConfigError("unknown optimizer '" + config.kind + "'");
}

void set_learning_rate(torch::optim::Optimizer& optimizer, double lr) {
  for (auto& group : optimizer.param_groups()) group.options().set_lr(lr);
}

namespace {

fs::path epoch_path(const fs::path& dir, int epoch) {
  std::ostringstream name;
  name << "epoch_" << std::setw(4) << std::setfill('0') << epoch << ".ckpt";
  return dir / name.str();
}

// Latest epoch checkpoint whose metadata matches this run, or 0.
int find_resume_epoch(const fs::path& dir, const CheckpointMeta& want) {
  if (!fs::exists(dir)) return 0;
  const std::regex pattern("epoch_(\\d+)\\.ckpt");
  int best = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const auto name = entry.path().filename().string();
    if (!std::regex_match(name, m, pattern)) continue;
    const int e = std::stoi(m[1]);
    if (e <= best) continue;
    try {
      const auto meta = read_checkpoint_meta(entry.path());
      if (meta.config == want.config && meta.data_fingerprint == want.data_fingerprint) best = e;
    } catch (const Error&) {
    }
  }
  return best;
}

void trim_log(const fs::path& log, int keep_below_epoch) {
  if (!fs::exists(log)) return;
  std::ifstream in(log);
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (nlohmann::json::parse(line).at("epoch").get<int>() < keep_below_epoch) kept += line + "\n";
  }
  in.close();
  write_text_file(log, kept);
}

std::vector<double> read_log_losses(const fs::path& log) {
  std::vector<double> out;
  if (!fs::exists(log)) return out;
  std::ifstream in(log);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(nlohmann::json::parse(line).at("loss").get<double>());
  }
  return out;
}

}  // namespace

TrainResult train(const MethodConfig& config, const UnlabeledImageSet& data, const fs::path& out_dir,
                  const TrainOptions& options) {
  config.validate();
  if (data.empty()) throw DataError("training set is empty");
  if (!config.pairwise() && options.view_mode != ViewMode::kStandard) {
    throw ConfigError("view modes other than standard need a two-view method");
  }
  torch::set_num_threads(options.threads);
  fs::create_directories(out_dir);

  auto method = make_method(config);
  method->train();
  auto optimizer = make_optimizer(config.optimizer, method->trainable_parameters());

  CheckpointMeta meta;
  meta.config = to_json(config);
  meta.data_fingerprint = data.fingerprint();
  meta.tap = default_tap(config.method);

  const fs::path log_path = out_dir / "train_log.jsonl";
  TrainResult result;
  int start_epoch = 0;
  if (options.resume) start_epoch = find_resume_epoch(out_dir, meta);
  if (start_epoch > 0) {
    load_training_state(epoch_path(out_dir, start_epoch), *method, method.get(), optimizer.get());
    trim_log(log_path, start_epoch);
    result.step_losses = read_log_losses(log_path);
  } else if (fs::exists(log_path)) {
    fs::remove(log_path);
  }
  result.resumed_from_epoch = start_epoch;

  const std::size_t n = data.size();
  const std::size_t batch = std::min<std::size_t>(config.batch_size, n);
  const int64_t steps_per_epoch = static_cast<int64_t>(n / batch);
  const int64_t total_steps = steps_per_epoch * config.epochs;

  std::ofstream log(log_path, std::ios::app);
  for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
    const auto order = epoch_order(config.seed, epoch, n);
    double epoch_loss = 0.0;
    for (int64_t s = 0; s < steps_per_epoch; ++s) {
      const int64_t step = epoch * steps_per_epoch + s;
      const double lr = config.schedule.lr_at(config.optimizer.lr, step, total_steps, epoch);
      set_learning_rate(*optimizer, lr);
      std::vector<std::size_t> idx(order.begin() + s * batch, order.begin() + (s + 1) * batch);
      const auto inputs = make_batch(*method, data, idx, epoch, options.view_mode);
      auto loss = method->loss(inputs);
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << step << " (epoch " << epoch << ", lr " << lr << "); batch ids:";
        for (std::size_t i = 0; i < idx.size() && i < 16; ++i) msg << ' ' << data[idx[i]].image_id;
        if (idx.size() > 16) msg << " ...";
        throw DivergenceError(msg.str());
      }
      optimizer->zero_grad();
      loss.backward();
      optimizer->step();
      method->after_step();
      result.step_losses.push_back(value);
      epoch_loss += value;
      log << nlohmann::json{{"step", step}, {"epoch", epoch}, {"lr", lr}, {"loss", value}}.dump() << "\n";
    }
    log.flush();
    epoch_loss /= static_cast<double>(std::max<int64_t>(1, steps_per_epoch));
    result.epoch_losses.push_back(epoch_loss);
    meta.epoch = epoch + 1;
    save_checkpoint(epoch_path(out_dir, epoch + 1), meta, *method->backbone(), *method, method.get(), optimizer.get());
    if (options.keep_epoch_checkpoints > 0 && epoch + 1 - options.keep_epoch_checkpoints >= 1) {
      fs::remove(epoch_path(out_dir, epoch + 1 - options.keep_epoch_checkpoints));
    }
    if (options.on_epoch) options.on_epoch(epoch, epoch_loss);
  }
  meta.epoch = config.epochs;
  result.checkpoint = out_dir / "final.ckpt";
  save_checkpoint(result.checkpoint, meta, *method->backbone(), *method, method.get());
  return result;
}

}  // namespace sslbd
