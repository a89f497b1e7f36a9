#include "sslbd/ssl_methods.hpp"

#include <cmath>
#include <numbers>

#include "sslbd/errors.hpp"
#include "sslbd/losses.hpp"

namespace sslbd {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

std::string to_string(MethodKind kind) {
  switch (kind) {
    case MethodKind::kMocoV2: return "moco_v2";
    case MethodKind::kByol: return "byol";
    case MethodKind::kMsf: return "msf";
    case MethodKind::kRotNet: return "rotnet";
    case MethodKind::kJigsaw: return "jigsaw";
  }
  return "moco_v2";
}

MethodKind parse_method(const std::string& text) {
  if (text == "moco_v2" || text == "moco") return MethodKind::kMocoV2;
  if (text == "byol") return MethodKind::kByol;
  if (text == "msf") return MethodKind::kMsf;
  if (text == "rotnet") return MethodKind::kRotNet;
  if (text == "jigsaw") return MethodKind::kJigsaw;
  throw ConfigError("unknown method '" + text + "'");
}

TapLayer default_tap(MethodKind kind) {
  switch (kind) {
    case MethodKind::kRotNet: return TapLayer::kLayer4;
    case MethodKind::kJigsaw: return TapLayer::kLayer3;
    default: return TapLayer::kPooled;
  }
}

double ScheduleConfig::lr_at(double base_lr, int64_t step, int64_t total_steps, int epoch) const {
  if (kind == "cosine") {
    if (total_steps <= 1) return base_lr;
    const double t = static_cast<double>(step) / static_cast<double>(total_steps - 1);
    // cos(pi) is not exactly -1 in floating point; pin the final step to 0.
    if (step >= total_steps - 1) return 0.0;
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
  }
  if (kind == "step") {
    double lr = base_lr;
    for (int m : milestones) {
      if (epoch >= m) lr *= gamma;
    }
    return lr;
  }
  throw ConfigError("unknown schedule '" + kind + "'");
}

MethodConfig MethodConfig::paper(MethodKind kind) {
  MethodConfig c;
  c.method = kind;
  c.backbone = BackboneConfig::resnet18();
  c.backbone.small_input_stem = false;
  c.augmentation = AugmentationPolicy::moco_v2(224);
  c.epochs = 200;
  c.batch_size = 256;
  switch (kind) {
    case MethodKind::kMocoV2:
      c.embedding_dim = 128;
      c.queue_size = 65536;
      c.ema_momentum = 0.999;
      c.optimizer = {"sgd", 0.06, 1e-4, 0.9};
      c.schedule = {"cosine", {}, 0.1};
      break;
    case MethodKind::kByol:
      c.embedding_dim = 128;
      c.ema_momentum = 0.99;
      c.head_hidden_dim = 1024;
      c.predictor_hidden_dim = 1024;
      c.batch_size = 512;
      c.optimizer = {"adam", 2e-3, 1e-6, 0.0};
      c.schedule = {"step", {150, 175}, 0.2};
      break;
    case MethodKind::kMsf:
      c.embedding_dim = 128;
      c.head_hidden_dim = 1024;
      c.predictor_hidden_dim = 1024;
      c.ema_momentum = 0.99;
      c.memory_bank_size = 128000;
      c.nn_count = 10;
      c.optimizer = {"sgd", 0.05, 1e-4, 0.9};
      c.schedule = {"cosine", {}, 0.1};
      break;
    case MethodKind::kJigsaw:
      c.permutation_set_size = 2000;
      c.optimizer = {"sgd", 0.01, 1e-4, 0.9};
      c.schedule = {"step", {30, 60, 90, 100}, 0.1};
      c.epochs = 105;
      break;
    case MethodKind::kRotNet:
      c.optimizer = {"sgd", 0.05, 1e-4, 0.9};
      c.schedule = {"step", {30, 60, 90, 100}, 0.1};
      c.epochs = 105;
      break;
  }
  return c;
}

MethodConfig MethodConfig::desk(MethodKind kind) {
  MethodConfig c = paper(kind);
  c.backbone = BackboneConfig::resnet18();
  c.backbone.small_input_stem = true;
  c.augmentation = AugmentationPolicy::moco_v2(32);
  c.batch_size = 256;
  c.queue_size = 4096;
  c.memory_bank_size = 16384;
  c.permutation_set_size = 100;
  c.head_hidden_dim = kind == MethodKind::kMocoV2 ? 512 : c.head_hidden_dim;
  if (kind == MethodKind::kMocoV2 || kind == MethodKind::kByol || kind == MethodKind::kMsf) c.epochs = 200;
  return c;
}

void MethodConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (embedding_dim <= 0) throw ConfigError("embedding_dim must be positive");
  if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0)) throw ConfigError("ema_momentum must lie in [0, 1]");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (method == MethodKind::kMocoV2 && (queue_size <= 0 || queue_size % batch_size != 0)) {
    throw ConfigError("queue_size must be a positive multiple of batch_size");
  }
  if (method == MethodKind::kMsf && (nn_count < 1 || nn_count > memory_bank_size)) {
    throw ConfigError("nn_count must lie in [1, memory_bank_size]");
  }
  if (method == MethodKind::kJigsaw && permutation_set_size < 2) {
    throw ConfigError("permutation_set_size must be at least 2");
  }
  if (optimizer.kind != "sgd" && optimizer.kind != "adam") throw ConfigError("optimizer must be sgd or adam");
  if (schedule.kind != "cosine" && schedule.kind != "step") throw ConfigError("schedule must be cosine or step");
  augmentation.validate();
}

nlohmann::json to_json(const AugmentationPolicy& p) {
  return {{"crop_scale", {p.crop_scale.first, p.crop_scale.second}},
          {"crop_ratio", {p.crop_ratio.first, p.crop_ratio.second}},
          {"horizontal_flip_prob", p.horizontal_flip_prob},
          {"color_jitter",
           {{"brightness", p.color_jitter.brightness},
            {"contrast", p.color_jitter.contrast},
            {"saturation", p.color_jitter.saturation},
            {"hue", p.color_jitter.hue},
            {"probability", p.color_jitter.probability}}},
          {"grayscale_prob", p.grayscale_prob},
          {"blur_prob", p.blur_prob},
          {"blur_sigma", {p.blur_sigma.first, p.blur_sigma.second}},
          {"output_size", p.output_size},
          {"mean", p.mean},
          {"std", p.stddev}};
}

AugmentationPolicy augmentation_from_json(const nlohmann::json& j) {
  AugmentationPolicy p;
  auto pair = [&](const char* key, std::pair<double, double>& out) {
    if (j.contains(key)) {
      const auto& v = j.at(key);
      out = {v.at(0).get<double>(), v.at(1).get<double>()};
    }
  };
  pair("crop_scale", p.crop_scale);
  pair("crop_ratio", p.crop_ratio);
  pair("blur_sigma", p.blur_sigma);
  p.horizontal_flip_prob = j.value("horizontal_flip_prob", p.horizontal_flip_prob);
  if (j.contains("color_jitter")) {
    const auto& c = j.at("color_jitter");
    p.color_jitter.brightness = c.value("brightness", p.color_jitter.brightness);
    p.color_jitter.contrast = c.value("contrast", p.color_jitter.contrast);
    p.color_jitter.saturation = c.value("saturation", p.color_jitter.saturation);
    p.color_jitter.hue = c.value("hue", p.color_jitter.hue);
    p.color_jitter.probability = c.value("probability", p.color_jitter.probability);
  }
  p.grayscale_prob = j.value("grayscale_prob", p.grayscale_prob);
  p.blur_prob = j.value("blur_prob", p.blur_prob);
  p.output_size = j.value("output_size", p.output_size);
  p.mean = j.value("mean", p.mean);
  p.stddev = j.value("std", p.stddev);
  p.validate();
  return p;
}

nlohmann::json to_json(const MethodConfig& c) {
  return {{"method", to_string(c.method)},
          {"embedding_dim", c.embedding_dim},
          {"head_hidden_dim", c.head_hidden_dim},
          {"predictor_hidden_dim", c.predictor_hidden_dim},
          {"temperature", c.temperature},
          {"queue_size", c.queue_size},
          {"ema_momentum", c.ema_momentum},
          {"nn_count", c.nn_count},
          {"memory_bank_size", c.memory_bank_size},
          {"permutation_set_size", c.permutation_set_size},
          {"optimizer",
           {{"kind", c.optimizer.kind},
            {"lr", c.optimizer.lr},
            {"weight_decay", c.optimizer.weight_decay},
            {"momentum", c.optimizer.momentum}}},
          {"schedule", {{"kind", c.schedule.kind}, {"milestones", c.schedule.milestones}, {"gamma", c.schedule.gamma}}},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"backbone", to_json(c.backbone)},
          {"augmentation", to_json(c.augmentation)}};
}

MethodConfig method_config_from_json(const nlohmann::json& j) {
  try {
    // Unspecified fields fall back to the desk preset of the named method.
    MethodConfig c = MethodConfig::desk(parse_method(j.value("method", std::string("moco_v2"))));
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.head_hidden_dim = j.value("head_hidden_dim", c.head_hidden_dim);
    c.predictor_hidden_dim = j.value("predictor_hidden_dim", c.predictor_hidden_dim);
    c.temperature = j.value("temperature", c.temperature);
    c.queue_size = j.value("queue_size", c.queue_size);
    c.ema_momentum = j.value("ema_momentum", c.ema_momentum);
    c.nn_count = j.value("nn_count", c.nn_count);
    c.memory_bank_size = j.value("memory_bank_size", c.memory_bank_size);
    c.permutation_set_size = j.value("permutation_set_size", c.permutation_set_size);
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
    c.seed = j.value("seed", c.seed);
    if (j.contains("backbone")) c.backbone = backbone_from_json(j.at("backbone"));
    if (j.contains("augmentation")) c.augmentation = augmentation_from_json(j.at("augmentation"));
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("method config: ") + e.what());
  }
}

namespace {

nn::Sequential moco_head(int in, int hidden, int out) {
  return nn::Sequential(nn::Linear(in, hidden), nn::ReLU(), nn::Linear(hidden, out));
}

std::vector<torch::Tensor> params_of(std::initializer_list<const nn::Module*> modules) {
  std::vector<torch::Tensor> out;
  for (const auto* m : modules) {
    for (const auto& p : m->parameters()) out.push_back(p);
  }
  return out;
}

void freeze(nn::Module& m) {
  for (auto& p : m.parameters()) p.set_requires_grad(false);
}

torch::Tensor unit(const torch::Tensor& x) { return F::normalize(x, F::NormalizeFuncOptions().dim(1)); }

void save_queue(torch::serialize::OutputArchive& a, const std::string& name, const FeatureQueue& q) {
  a.write(name + ".storage", q.storage());
  a.write(name + ".cursor", torch::tensor(q.cursor(), torch::kLong));
  a.write(name + ".size", torch::tensor(q.size(), torch::kLong));
}

void load_queue(torch::serialize::InputArchive& a, const std::string& name, FeatureQueue& q) {
  torch::Tensor storage, cursor, size;
  a.read(name + ".storage", storage);
  a.read(name + ".cursor", cursor);
  a.read(name + ".size", size);
  q.restore(storage, cursor.item<int64_t>(), size.item<int64_t>());
}

}  // namespace

SslMethod::SslMethod(const MethodConfig& config) : config_(config) {
  config_.validate();
  torch::manual_seed(static_cast<uint64_t>(derive_seed(config.seed, "init") & 0x7fffffffffffffffULL));
  backbone_ = register_module("backbone", ResNet(config.backbone));
}

std::vector<torch::Tensor> SslMethod::trainable_parameters() { return backbone_->parameters(); }

void SslMethod::save_state(torch::serialize::OutputArchive&) const {}
void SslMethod::load_state(torch::serialize::InputArchive&) {}

EncoderImpl::EncoderImpl(ResNet b, nn::Sequential h) {
  backbone = register_module("backbone", std::move(b));
  head = register_module("head", std::move(h));
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x) { return head->forward(backbone->forward(x)); }

// Query/online encoders share backbone_ so EMA can walk backbone and head at once.
MocoV2::MocoV2(const MethodConfig& config) : SslMethod(config) {
  const int d = backbone_->config().output_dim();
  head_ = register_module("head", moco_head(d, config.head_hidden_dim, config.embedding_dim));
  query_ = Encoder(backbone_, head_);
  key_ = register_module("key", Encoder(ResNet(config.backbone),
                                               moco_head(d, config.head_hidden_dim, config.embedding_dim)));
  copy_module_state(*key_, *query_);
  freeze(*key_);
  queue_ = FeatureQueue(config.queue_size, config.embedding_dim);
  queue_.fill_random(derive_seed(config.seed, "queue"));
}

torch::Tensor MocoV2::loss(const TrainBatch& batch) {
  auto q = unit(query_->forward(batch.view1));
  {
    torch::NoGradGuard guard;
    pending_keys_ = unit(key_->forward(batch.view2));
  }
  return info_nce_loss(q, pending_keys_, queue_.view(), config_.temperature);
}

void MocoV2::after_step() {
  ema_update(*key_, *query_, config_.ema_momentum);
  if (pending_keys_.defined()) queue_.enqueue(pending_keys_);
  pending_keys_ = torch::Tensor();
}

std::vector<torch::Tensor> MocoV2::trainable_parameters() { return params_of({backbone_.get(), head_.get()}); }

void MocoV2::save_state(torch::serialize::OutputArchive& a) const { save_queue(a, "queue", queue_); }
void MocoV2::load_state(torch::serialize::InputArchive& a) { load_queue(a, "queue", queue_); }

Byol::Byol(const MethodConfig& config) : SslMethod(config) {
  const int d = backbone_->config().output_dim();
  auto proj = register_module("projector", make_mlp_head(d, config.head_hidden_dim, config.embedding_dim));
  online_ = Encoder(backbone_, proj);
  predictor_ = register_module(
      "predictor", make_mlp_head(config.embedding_dim, config.predictor_hidden_dim, config.embedding_dim));
  target_ = register_module("target", Encoder(ResNet(config.backbone),
                                                     make_mlp_head(d, config.head_hidden_dim, config.embedding_dim)));
  copy_module_state(*target_, *online_);
  freeze(*target_);
}

torch::Tensor Byol::loss(const TrainBatch& batch) {
  auto p1 = predictor_->forward(online_->forward(batch.view1));
  auto p2 = predictor_->forward(online_->forward(batch.view2));
  torch::Tensor z1, z2;
  {
    torch::NoGradGuard guard;
    z1 = target_->forward(batch.view1);
    z2 = target_->forward(batch.view2);
  }
  return byol_loss(p1, z2, p2, z1);
}

void Byol::after_step() { ema_update(*target_, *online_, config_.ema_momentum); }

std::vector<torch::Tensor> Byol::trainable_parameters() {
  return params_of({online_.get(), predictor_.get()});
}

Msf::Msf(const MethodConfig& config) : SslMethod(config) {
  const int d = backbone_->config().output_dim();
  auto proj = register_module("projector", make_mlp_head(d, config.head_hidden_dim, config.embedding_dim));
  online_ = Encoder(backbone_, proj);
  predictor_ = register_module(
      "predictor", make_mlp_head(config.embedding_dim, config.predictor_hidden_dim, config.embedding_dim));
  target_ = register_module("target", Encoder(ResNet(config.backbone),
                                                     make_mlp_head(d, config.head_hidden_dim, config.embedding_dim)));
  copy_module_state(*target_, *online_);
  freeze(*target_);
  bank_ = FeatureQueue(config.memory_bank_size, config.embedding_dim);
  bank_.fill_random(derive_seed(config.seed, "bank"));
}

torch::Tensor Msf::loss(const TrainBatch& batch) {
  auto q = unit(predictor_->forward(online_->forward(batch.view1)));
  {
    torch::NoGradGuard guard;
    pending_targets_ = unit(target_->forward(batch.view2));
  }
  return msf_loss(q, pending_targets_, bank_.view(), config_.nn_count);
}

void Msf::after_step() {
  ema_update(*target_, *online_, config_.ema_momentum);
  if (pending_targets_.defined()) bank_.enqueue(pending_targets_);
  pending_targets_ = torch::Tensor();
}

std::vector<torch::Tensor> Msf::trainable_parameters() { return params_of({online_.get(), predictor_.get()}); }

void Msf::save_state(torch::serialize::OutputArchive& a) const { save_queue(a, "bank", bank_); }
void Msf::load_state(torch::serialize::InputArchive& a) { load_queue(a, "bank", bank_); }

RotNet::RotNet(const MethodConfig& config) : SslMethod(config) {
  head_ = register_module("head", nn::Linear(backbone_->config().output_dim(), 4));
}

torch::Tensor RotNet::loss(const TrainBatch& batch) {
  return F::cross_entropy(head_->forward(backbone_->forward(batch.view1)), batch.labels);
}

std::vector<torch::Tensor> RotNet::trainable_parameters() { return params_of({backbone_.get(), head_.get()}); }

Jigsaw::Jigsaw(const MethodConfig& config)
    : SslMethod(config), perms_(generate_permutation_set(config.permutation_set_size, config.seed)) {
  const int d = backbone_->config().output_dim();
  head_ = register_module("head", nn::Sequential(nn::Linear(9 * d, 512), nn::ReLU(),
                                                 nn::Linear(512, config.permutation_set_size)));
}

torch::Tensor Jigsaw::loss(const TrainBatch& batch) {
  auto feats = backbone_->forward(batch.view1);  // [N*9, d]
  auto joined = feats.reshape({-1, 9 * feats.size(1)});
  return F::cross_entropy(head_->forward(joined), batch.labels);
}

std::vector<torch::Tensor> Jigsaw::trainable_parameters() { return params_of({backbone_.get(), head_.get()}); }

std::shared_ptr<SslMethod> make_method(const MethodConfig& config) {
  switch (config.method) {
    case MethodKind::kMocoV2: return std::make_shared<MocoV2>(config);
    case MethodKind::kByol: return std::make_shared<Byol>(config);
    case MethodKind::kMsf: return std::make_shared<Msf>(config);
    case MethodKind::kRotNet: return std::make_shared<RotNet>(config);
    case MethodKind::kJigsaw: return std::make_shared<Jigsaw>(config);
  }
  throw ConfigError("unknown method");
}

int jigsaw_canvas(int output_size) { return std::max(3, output_size / 3 * 3); }

torch::Tensor jigsaw_tiles(const torch::Tensor& view, const TilePermutation& perm) {
  const int64_t s = view.size(1) / 3;
  if (s == 0 || view.size(1) != 3 * s || view.size(2) != 3 * s) throw ConfigError("jigsaw view must be 3t x 3t");
  std::vector<torch::Tensor> tiles;
  for (int i = 0; i < 9; ++i) {
    const int src = perm[i];
    tiles.push_back(view.narrow(1, (src / 3) * s, s).narrow(2, (src % 3) * s, s));
  }
  return torch::stack(tiles);
}

torch::Tensor assemble_tiles(const torch::Tensor& tiles) {
  std::vector<torch::Tensor> rows;
  for (int r = 0; r < 3; ++r) rows.push_back(torch::cat({tiles[3 * r], tiles[3 * r + 1], tiles[3 * r + 2]}, 2));
  return torch::cat(rows, 1);
}

torch::Tensor rotate_view(const torch::Tensor& view, int quarter_turns) {
  return torch::rot90(view, quarter_turns, {1, 2}).contiguous();
}

}  // namespace sslbd
