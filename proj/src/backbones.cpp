#include "gtrans/backbones.hpp"

#include <algorithm>

#include "gtrans/errors.hpp"
#include "gtrans/serialize.hpp"

namespace gtrans {

namespace {

// Fixture seed for "pretrained" tiny_test guides; keeps the guide a
// reproducible deterministic function independent of the run seed.
constexpr uint64_t kTinyPretrainSeed = 0x67747261'6e730001ULL;

ConvBlock make_plain(int c_in, int c_out, int stride, std::mt19937_64& rng) {
  ConvBlock b;
  b.kind = ConvBlock::Kind::plain;
  b.conv1 = Conv2d::make(c_in, c_out, 3, stride, 1, false, rng);
  b.bn1 = BatchNorm2d::make(c_out);
  return b;
}

ConvBlock make_basic(int c_in, int c_out, int stride, std::mt19937_64& rng) {
  ConvBlock b;
  b.kind = ConvBlock::Kind::basic;
  b.conv1 = Conv2d::make(c_in, c_out, 3, stride, 1, false, rng);
  b.bn1 = BatchNorm2d::make(c_out);
  b.conv2 = Conv2d::make(c_out, c_out, 3, 1, 1, false, rng);
  b.bn2 = BatchNorm2d::make(c_out);
  if (stride != 1 || c_in != c_out) {
    b.has_downsample = true;
    b.down_conv = Conv2d::make(c_in, c_out, 1, stride, 0, false, rng);
    b.down_bn = BatchNorm2d::make(c_out);
  }
  return b;
}

ConvBlock make_bottleneck(int c_in, int width, int c_out, int stride, std::mt19937_64& rng) {
  ConvBlock b;
  b.kind = ConvBlock::Kind::bottleneck;
  b.conv1 = Conv2d::make(c_in, width, 1, 1, 0, false, rng);
  b.bn1 = BatchNorm2d::make(width);
  b.conv2 = Conv2d::make(width, width, 3, stride, 1, false, rng);
  b.bn2 = BatchNorm2d::make(width);
  b.conv3 = Conv2d::make(width, c_out, 1, 1, 0, false, rng);
  b.bn3 = BatchNorm2d::make(c_out);
  if (stride != 1 || c_in != c_out) {
    b.has_downsample = true;
    b.down_conv = Conv2d::make(c_in, c_out, 1, stride, 0, false, rng);
    b.down_bn = BatchNorm2d::make(c_out);
  }
  return b;
}

}  // namespace

BackboneFamily backbone_family_from_string(const std::string& s) {
  if (s == "tiny_test") return BackboneFamily::tiny_test;
  if (s == "resnet34") return BackboneFamily::resnet34;
  if (s == "wide_resnet50_2") return BackboneFamily::wide_resnet50_2;
  throw ConfigError("unknown backbone family: " + s);
}

std::string to_string(BackboneFamily f) {
  switch (f) {
    case BackboneFamily::tiny_test: return "tiny_test";
    case BackboneFamily::resnet34: return "resnet34";
    case BackboneFamily::wide_resnet50_2: return "wide_resnet50_2";
  }
  return "?";
}

void BackboneConfig::validate() const {
  if (critical_layers.empty()) throw ConfigError("critical_layers must be non-empty");
  int n_stages = Backbone::stage_count(family);
  int prev = 0;
  for (int l : critical_layers) {
    if (l <= prev)
      throw ConfigError("critical_layers must be strictly increasing");
    if (l < 1 || l > n_stages)
      throw ConfigError("critical layer " + std::to_string(l) + " outside stages 1.." +
                        std::to_string(n_stages) + " of " + to_string(family));
    prev = l;
  }
}

Var ConvBlock::forward(const Var& x, bool training) {
  if (kind == Kind::plain) return relu(bn1.forward(conv1.forward(x), training));
  Var identity = has_downsample ? down_bn.forward(down_conv.forward(x), training) : x;
  if (kind == Kind::basic) {
    Var h = relu(bn1.forward(conv1.forward(x), training));
    h = bn2.forward(conv2.forward(h), training);
    return relu(add(h, identity));
  }
  Var h = relu(bn1.forward(conv1.forward(x), training));
  h = relu(bn2.forward(conv2.forward(h), training));
  h = bn3.forward(conv3.forward(h), training);
  return relu(add(h, identity));
}

void ConvBlock::collect(const std::string& prefix, ParamList& out) const {
  conv1.collect(prefix + ".conv1", out);
  bn1.collect(prefix + ".bn1", out);
  if (kind != Kind::plain) {
    conv2.collect(prefix + ".conv2", out);
    bn2.collect(prefix + ".bn2", out);
  }
  if (kind == Kind::bottleneck) {
    conv3.collect(prefix + ".conv3", out);
    bn3.collect(prefix + ".bn3", out);
  }
  if (has_downsample) {
    down_conv.collect(prefix + ".downsample.conv", out);
    down_bn.collect(prefix + ".downsample.bn", out);
  }
}

void ConvBlock::collect_buffers(const std::string& prefix, BufferList& out) {
  bn1.collect_buffers(prefix + ".bn1", out);
  if (kind != Kind::plain) bn2.collect_buffers(prefix + ".bn2", out);
  if (kind == Kind::bottleneck) bn3.collect_buffers(prefix + ".bn3", out);
  if (has_downsample) down_bn.collect_buffers(prefix + ".downsample.bn", out);
}

int Backbone::stage_count(BackboneFamily f) {
  return f == BackboneFamily::tiny_test ? 3 : 4;
}

std::vector<int> Backbone::stage_channels(BackboneFamily f) {
  switch (f) {
    case BackboneFamily::tiny_test: return {8, 16, 32};
    case BackboneFamily::resnet34: return {64, 128, 256, 512};
    case BackboneFamily::wide_resnet50_2: return {256, 512, 1024, 2048};
  }
  return {};
}

Backbone Backbone::build(const BackboneConfig& config, uint64_t seed,
                         const std::string& weight_cache) {
  config.validate();
  Backbone net;
  net.config_ = config;
  bool tiny_fixture = config.pretrained && config.family == BackboneFamily::tiny_test;
  std::mt19937_64 rng(tiny_fixture ? kTinyPretrainSeed : seed);

  switch (config.family) {
    case BackboneFamily::tiny_test: {
      net.stem_conv_ = Conv2d::make(3, 8, 3, 2, 1, false, rng);
      net.stem_bn_ = BatchNorm2d::make(8);
      net.stem_pool_ = false;
      int c_in = 8;
      for (int c_out : {8, 16, 32}) {
        BackboneStage stage;
        stage.blocks.push_back(make_plain(c_in, c_out, 2, rng));
        net.stages_.push_back(std::move(stage));
        c_in = c_out;
      }
      break;
    }
    case BackboneFamily::resnet34: {
      net.stem_conv_ = Conv2d::make(3, 64, 7, 2, 3, false, rng);
      net.stem_bn_ = BatchNorm2d::make(64);
      net.stem_pool_ = true;
      const int depths[4] = {3, 4, 6, 3};
      const int widths[4] = {64, 128, 256, 512};
      int c_in = 64;
      for (int s = 0; s < 4; ++s) {
        BackboneStage stage;
        for (int b = 0; b < depths[s]; ++b) {
          int stride = (b == 0 && s > 0) ? 2 : 1;
          stage.blocks.push_back(make_basic(c_in, widths[s], stride, rng));
          c_in = widths[s];
        }
        net.stages_.push_back(std::move(stage));
      }
      break;
    }
    case BackboneFamily::wide_resnet50_2: {
      net.stem_conv_ = Conv2d::make(3, 64, 7, 2, 3, false, rng);
      net.stem_bn_ = BatchNorm2d::make(64);
      net.stem_pool_ = true;
      const int depths[4] = {3, 4, 6, 3};
      const int planes[4] = {64, 128, 256, 512};
      int c_in = 64;
      for (int s = 0; s < 4; ++s) {
        int width = planes[s] * 2;  // wide variant doubles the inner 3x3 width
        int c_out = planes[s] * 4;
        BackboneStage stage;
        for (int b = 0; b < depths[s]; ++b) {
          int stride = (b == 0 && s > 0) ? 2 : 1;
          stage.blocks.push_back(make_bottleneck(c_in, width, c_out, stride, rng));
          c_in = c_out;
        }
        net.stages_.push_back(std::move(stage));
      }
      break;
    }
  }

  if (tiny_fixture) {
    // Stand-in for real pretraining: warm the running statistics on a fixed
    // noise batch so inference mode sees calibrated normalization.
    std::mt19937_64 warm_rng(kTinyPretrainSeed ^ 0x9e3779b97f4a7c15ULL);
    Var warm(randu({4, 3, 64, 64}, 0.0, 1.0, warm_rng));
    NoGradGuard ng;
    Var h = relu(net.stem_bn_.forward(net.stem_conv_.forward(warm), true));
    for (auto& stage : net.stages_)
      for (auto& block : stage.blocks) h = block.forward(h, true);
  } else if (config.pretrained) {
    if (weight_cache.empty())
      throw DataError("pretrained " + to_string(config.family) +
                      " requested but no weight cache path configured");
    net.load_weights(weight_cache + "/" + to_string(config.family) + ".gtw");
  }
  return net;
}

std::vector<int> Backbone::critical_channels() const {
  std::vector<int> chans = stage_channels(config_.family);
  std::vector<int> out;
  for (int l : config_.critical_layers) out.push_back(chans[static_cast<size_t>(l - 1)]);
  return out;
}

int Backbone::required_stride() const {
  int deepest = config_.critical_layers.back();
  int stride = config_.family == BackboneFamily::tiny_test ? 2 : 4;  // stem
  for (int s = 1; s <= deepest; ++s)
    if (config_.family == BackboneFamily::tiny_test || s > 1) stride *= 2;
  return stride;
}

std::vector<Var> Backbone::extract_pyramid(const Var& batch) {
  if (batch.val().ndim() != 4 || batch.val().dim(1) != 3)
    throw ShapeError("extract_pyramid: expected (N,3,H,W), got " + shape_str(batch.val().shape()));
  int stride = required_stride();
  if (batch.val().dim(2) % stride != 0 || batch.val().dim(3) % stride != 0)
    throw ShapeError("extract_pyramid: input " + shape_str(batch.val().shape()) +
                     " not divisible by backbone stride " + std::to_string(stride));

  auto run = [&](const Var& x) {
    bool train = training_ && !frozen_;
    std::vector<Var> taps;
    Var h = relu(stem_bn_.forward(stem_conv_.forward(x), train));
    if (stem_pool_) h = max_pool2d(h, 3, 2, 1);
    int deepest = config_.critical_layers.back();
    for (int s = 1; s <= deepest; ++s) {
      for (auto& block : stages_[static_cast<size_t>(s - 1)].blocks) h = block.forward(h, train);
      if (std::find(config_.critical_layers.begin(), config_.critical_layers.end(), s) !=
          config_.critical_layers.end())
        taps.push_back(h);
    }
    return taps;
  };

  if (frozen_) {
    NoGradGuard ng;
    return run(batch);
  }
  return run(batch);
}

void Backbone::freeze() {
  set_requires_grad(parameters(), false);
  frozen_ = true;
  training_ = false;
}

void Backbone::set_bn_momentum(Scalar momentum) {
  stem_bn_.momentum = momentum;
  for (auto& stage : stages_)
    for (auto& block : stage.blocks) {
      block.bn1.momentum = momentum;
      block.bn2.momentum = momentum;
      block.bn3.momentum = momentum;
      block.down_bn.momentum = momentum;
    }
}

ParamList Backbone::parameters(const std::string& prefix) const {
  ParamList out;
  std::string p = prefix.empty() ? "" : prefix + ".";
  stem_conv_.collect(p + "stem.conv", out);
  stem_bn_.collect(p + "stem.bn", out);
  for (size_t s = 0; s < stages_.size(); ++s)
    for (size_t b = 0; b < stages_[s].blocks.size(); ++b)
      stages_[s].blocks[b].collect(
          p + "stage" + std::to_string(s + 1) + ".block" + std::to_string(b), out);
  return out;
}

BufferList Backbone::buffers(const std::string& prefix) {
  BufferList out;
  std::string p = prefix.empty() ? "" : prefix + ".";
  stem_bn_.collect_buffers(p + "stem.bn", out);
  for (size_t s = 0; s < stages_.size(); ++s)
    for (size_t b = 0; b < stages_[s].blocks.size(); ++b)
      stages_[s].blocks[b].collect_buffers(
          p + "stage" + std::to_string(s + 1) + ".block" + std::to_string(b), out);
  return out;
}

uint64_t Backbone::checksum() {
  return checksum_params(parameters(), buffers());
}

void Backbone::load_weights(const std::string& path) {
  ContainerData data = read_tensor_container(path);
  ParamList params = parameters();
  BufferList bufs = buffers();
  for (auto& p : params) {
    auto it = data.tensors.find(p.name);
    if (it == data.tensors.end()) throw DataError("weight file " + path + " missing " + p.name);
    if (!it->second.same_shape(p.var.val()))
      throw DataError("weight " + p.name + " shape " + shape_str(it->second.shape()) +
                      " vs expected " + shape_str(p.var.val().shape()));
    const_cast<Var&>(p.var).val() = it->second;
  }
  for (auto& b : bufs) {
    auto it = data.tensors.find(b.name);
    if (it == data.tensors.end()) throw DataError("weight file " + path + " missing " + b.name);
    *b.tensor = it->second;
  }
}

}  // namespace gtrans
