#pragma once

#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace sslbd {

/// Residual encoder geometry. `resnet18()` is the full-size preset (four
/// stages of two basic blocks, widths 64..512); `desk()` is a narrow variant
/// that fits CPU budgets.
struct BackboneConfig {
  std::vector<int> blocks{2, 2, 2, 2};
  int base_width = 64;
  /// 3x3 stride-1 stem for small inputs; 7x7/2 + max-pool otherwise.
  bool small_input_stem = true;
  int stem_stride = 1;

  static BackboneConfig resnet18();
  static BackboneConfig desk();

  int stage_width(int stage) const { return base_width << stage; }
  int output_dim() const { return stage_width(static_cast<int>(blocks.size()) - 1); }
};

nlohmann::json to_json(const BackboneConfig& c);
BackboneConfig backbone_from_json(const nlohmann::json& j);

/// Feature tap used for frozen-feature evaluation. Stage naming counts the
/// stem as layer1, so layer3/layer4 are the second/third residual stages.
enum class TapLayer { kPooled, kLayer3, kLayer4 };

std::string to_string(TapLayer tap);

class BasicBlockImpl : public torch::nn::Module {
 public:
  BasicBlockImpl(int in_channels, int out_channels, int stride);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, shortcut_conv_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr}, shortcut_bn_{nullptr};
};
TORCH_MODULE(BasicBlock);

class ResNetImpl : public torch::nn::Module {
 public:
  explicit ResNetImpl(const BackboneConfig& config);

  /// Global-average-pooled output of the last stage, [N, output_dim].
  torch::Tensor forward(const torch::Tensor& x);
  /// Spatially averaged features of the requested tap, [N, tap_dim(tap)].
  torch::Tensor features(const torch::Tensor& x, TapLayer tap);
  int tap_dim(TapLayer tap) const;

  const BackboneConfig& config() const { return config_; }

 private:
  BackboneConfig config_;
  torch::nn::Sequential stem_{nullptr};
  std::vector<torch::nn::Sequential> stages_;
};
TORCH_MODULE(ResNet);

/// Linear -> BN -> ReLU -> Linear head used for projections and predictors.
torch::nn::Sequential make_mlp_head(int in_dim, int hidden_dim, int out_dim);

/// Copies every parameter and buffer of `src` into `dst` (same architecture).
void copy_module_state(torch::nn::Module& dst, const torch::nn::Module& src);

/// True when all parameters and buffers are bitwise equal.
bool module_state_equal(const torch::nn::Module& a, const torch::nn::Module& b);

}  // namespace sslbd
