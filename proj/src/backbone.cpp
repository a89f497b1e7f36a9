#include "sslbd/backbone.hpp"

#include "sslbd/errors.hpp"

namespace sslbd {

namespace nn = torch::nn;

BackboneConfig BackboneConfig::resnet18() { return {}; }

BackboneConfig BackboneConfig::desk() {
  BackboneConfig c;
  c.blocks = {1, 1, 1, 1};
  c.base_width = 16;
  c.small_input_stem = true;
  c.stem_stride = 2;
  return c;
}

nlohmann::json to_json(const BackboneConfig& c) {
  return {{"blocks", c.blocks},
          {"base_width", c.base_width},
          {"small_input_stem", c.small_input_stem},
          {"stem_stride", c.stem_stride}};
}

BackboneConfig backbone_from_json(const nlohmann::json& j) {
  BackboneConfig c;
  c.blocks = j.value("blocks", c.blocks);
  c.base_width = j.value("base_width", c.base_width);
  c.small_input_stem = j.value("small_input_stem", c.small_input_stem);
  c.stem_stride = j.value("stem_stride", c.stem_stride);
  if (c.blocks.size() < 3 || c.base_width <= 0) throw ConfigError("backbone needs >= 3 stages and a positive width");
  return c;
}

std::string to_string(TapLayer tap) {
  switch (tap) {
    case TapLayer::kPooled: return "pooled";
    case TapLayer::kLayer3: return "layer3";
    case TapLayer::kLayer4: return "layer4";
  }
  return "pooled";
}

BasicBlockImpl::BasicBlockImpl(int in_channels, int out_channels, int stride) {
  conv1_ = register_module(
      "conv1", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 3).stride(stride).padding(1).bias(false)));
  bn1_ = register_module("bn1", nn::BatchNorm2d(out_channels));
  conv2_ = register_module("conv2",
                           nn::Conv2d(nn::Conv2dOptions(out_channels, out_channels, 3).padding(1).bias(false)));
  bn2_ = register_module("bn2", nn::BatchNorm2d(out_channels));
  if (stride != 1 || in_channels != out_channels) {
    shortcut_conv_ = register_module(
        "shortcut_conv", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 1).stride(stride).bias(false)));
    shortcut_bn_ = register_module("shortcut_bn", nn::BatchNorm2d(out_channels));
  }
}

torch::Tensor BasicBlockImpl::forward(const torch::Tensor& x) {
  auto y = torch::relu(bn1_(conv1_(x)));
  y = bn2_(conv2_(y));
  auto skip = shortcut_conv_ ? shortcut_bn_(shortcut_conv_(x)) : x;
  return torch::relu(y + skip);
}

ResNetImpl::ResNetImpl(const BackboneConfig& config) : config_(config) {
  if (config.blocks.size() < 3) throw ConfigError("backbone needs at least three stages");
  const int w = config.base_width;
  if (config.small_input_stem) {
    stem_ = nn::Sequential(
        nn::Conv2d(nn::Conv2dOptions(3, w, 3).stride(config.stem_stride).padding(1).bias(false)),
        nn::BatchNorm2d(w), nn::ReLU());
  } else {
    stem_ = nn::Sequential(nn::Conv2d(nn::Conv2dOptions(3, w, 7).stride(2).padding(3).bias(false)),
                           nn::BatchNorm2d(w), nn::ReLU(), nn::MaxPool2d(nn::MaxPool2dOptions(3).stride(2).padding(1)));
  }
  register_module("stem", stem_);
  int in = w;
  for (std::size_t s = 0; s < config.blocks.size(); ++s) {
    const int out = config.stage_width(static_cast<int>(s));
    nn::Sequential stage;
    for (int b = 0; b < config.blocks[s]; ++b) {
      const int stride = (b == 0 && s > 0) ? 2 : 1;
      stage->push_back(BasicBlock(b == 0 ? in : out, out, stride));
    }
    in = out;
    stages_.push_back(register_module("stage" + std::to_string(s + 1), stage));
  }
}

torch::Tensor ResNetImpl::forward(const torch::Tensor& x) { return features(x, TapLayer::kPooled); }

torch::Tensor ResNetImpl::features(const torch::Tensor& x, TapLayer tap) {
  auto h = stem_->forward(x);
  // Stage index whose output is tapped; layer3 -> 2nd stage, layer4 -> 3rd.
  const std::size_t last = tap == TapLayer::kLayer3 ? 1 : tap == TapLayer::kLayer4 ? 2 : stages_.size() - 1;
  for (std::size_t s = 0; s <= last; ++s) h = stages_[s]->forward(h);
  return h.mean({2, 3});
}

int ResNetImpl::tap_dim(TapLayer tap) const {
  switch (tap) {
    case TapLayer::kLayer3: return config_.stage_width(1);
    case TapLayer::kLayer4: return config_.stage_width(2);
    case TapLayer::kPooled: break;
  }
  return config_.output_dim();
}

nn::Sequential make_mlp_head(int in_dim, int hidden_dim, int out_dim) {
  return nn::Sequential(nn::Linear(in_dim, hidden_dim), nn::BatchNorm1d(hidden_dim), nn::ReLU(),
                        nn::Linear(hidden_dim, out_dim));
}

void copy_module_state(nn::Module& dst, const nn::Module& src) {
  torch::NoGradGuard guard;
  auto dp = dst.named_parameters(true);
  auto sp = src.named_parameters(true);
  for (const auto& item : sp) dp[item.key()].copy_(item.value());
  auto db = dst.named_buffers(true);
  auto sb = src.named_buffers(true);
  for (const auto& item : sb) db[item.key()].copy_(item.value());
}

bool module_state_equal(const nn::Module& a, const nn::Module& b) {
  auto ap = a.named_parameters(true);
  auto bp = b.named_parameters(true);
  if (ap.size() != bp.size()) return false;
  for (const auto& item : ap) {
    const auto* other = bp.find(item.key());
    if (other == nullptr || !torch::equal(item.value(), *other)) return false;
  }
  auto ab = a.named_buffers(true);
  auto bb = b.named_buffers(true);
  for (const auto& item : ab) {
    const auto* other = bb.find(item.key());
    if (other == nullptr || !torch::equal(item.value(), *other)) return false;
  }
  return true;
}

}  // namespace sslbd
