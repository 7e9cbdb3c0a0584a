#pragma once

#include <string>
#include <vector>

#include "gtrans/nn.hpp"
#include "gtrans/tensor.hpp"

namespace gtrans {

enum class BackboneFamily { tiny_test, resnet34, wide_resnet50_2 };

BackboneFamily backbone_family_from_string(const std::string& s);
std::string to_string(BackboneFamily f);

struct BackboneConfig {
  BackboneFamily family = BackboneFamily::resnet34;
  std::vector<int> critical_layers = {1, 2, 3};  // 1-based residual stage indices
  bool pretrained = false;

  void validate() const;
};

// Residual or plain conv block. tiny_test stages are single conv-bn-relu
// blocks; resnet34 uses basic blocks; wide_resnet50_2 uses bottlenecks.
struct ConvBlock {
  enum class Kind { plain, basic, bottleneck };
  Kind kind = Kind::plain;
  Conv2d conv1, conv2, conv3;
  BatchNorm2d bn1, bn2, bn3;
  bool has_downsample = false;
  Conv2d down_conv;
  BatchNorm2d down_bn;

  Var forward(const Var& x, bool training);
  void collect(const std::string& prefix, ParamList& out) const;
  void collect_buffers(const std::string& prefix, BufferList& out);
};

struct BackboneStage {
  std::vector<ConvBlock> blocks;
};

class Backbone {
 public:
  // Builds the network. Pretrained tiny_test instances are a deterministic
  // fixture (fixed internal seed, warmed running statistics); pretrained
  // resnet/wide-resnet instances load weights from `weight_cache`.
  static Backbone build(const BackboneConfig& config, uint64_t seed,
                        const std::string& weight_cache = "");

  static int stage_count(BackboneFamily f);
  static std::vector<int> stage_channels(BackboneFamily f);
  // Channel count at each configured critical layer.
  std::vector<int> critical_channels() const;
  // Total spatial stride at the deepest configured critical layer.
  int required_stride() const;

  // Per-critical-layer activations for an (N,3,H,W) batch, in layer order.
  // A frozen network runs in inference mode with no gradient bookkeeping.
  std::vector<Var> extract_pyramid(const Var& batch);

  void freeze();
  bool frozen() const { return frozen_; }
  void set_training(bool training) { training_ = training; }
  bool training_mode() const { return training_; }
  // Momentum used by every batch-norm buffer update (training mode only).
  void set_bn_momentum(Scalar momentum);

  ParamList parameters(const std::string& prefix = "") const;
  BufferList buffers(const std::string& prefix = "");
  uint64_t checksum();
  void load_weights(const std::string& path);

  const BackboneConfig& config() const { return config_; }

 private:
  BackboneConfig config_;
  Conv2d stem_conv_;
  BatchNorm2d stem_bn_;
  bool stem_pool_ = false;
  std::vector<BackboneStage> stages_;
  bool frozen_ = false;
  bool training_ = true;
};

}  // namespace gtrans
