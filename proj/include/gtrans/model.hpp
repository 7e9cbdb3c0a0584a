#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gtrans/backbones.hpp"
#include "gtrans/mapper.hpp"
#include "gtrans/tfm.hpp"
#include "gtrans/tokenizer.hpp"

namespace gtrans {

struct ModelConfig {
  BackboneConfig backbone;
  int groups = 8;     // semantic groups per layer
  int dim = 256;      // token dimension
  int tfm_blocks = 2;
  bool use_decoder = true;
  TokenSource token_source = TokenSource::encoder;
  QuerySource query_source = QuerySource::guide;
  uint64_t seed = 0;
  std::string weight_cache;  // pretrained backbone weights for non-tiny guides

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Frozen pretrained guide plus the trainable detection network (student
// backbone, both tokenizers, TFM, mapper).
class GTransModel {
 public:
  static GTransModel build(const ModelConfig& config);

  // Mean distillation loss over a normalized (N,3,H,W) batch.
  Var training_loss(const Tensor& batch);

  // Per-image guide and mapped pyramids, each layer (c, h, w), computed in
  // inference mode with no gradient bookkeeping.
  struct ImagePyramids {
    std::vector<Tensor> guide;
    std::vector<Tensor> mapped;
  };
  std::vector<ImagePyramids> eval_forward(const Tensor& batch);

  ParamList trainable_parameters() const;
  BufferList student_buffers();
  uint64_t guide_checksum() { return guide_.checksum(); }
  void set_training(bool training) { student_.set_training(training); }

  const ModelConfig& config() const { return config_; }
  Backbone& guide() { return guide_; }
  Backbone& student() { return student_; }
  const Tokenizer& guide_tokenizer() const { return guide_tokenizer_; }
  const Tokenizer& student_tokenizer() const { return student_tokenizer_; }
  const Tfm& tfm() const { return tfm_; }
  const Mapper& mapper() const { return mapper_; }

  // Per-layer lambda balancing weights; empty until calibrated.
  std::vector<Scalar> lambdas;

  void save_checkpoint(const std::string& path, const std::string& run_config_json, int epoch,
                       int64_t step) const;

 private:
  ModelConfig config_;
  Backbone guide_;
  Backbone student_;
  Tokenizer guide_tokenizer_;
  Tokenizer student_tokenizer_;
  Tfm tfm_;
  Mapper mapper_;

  struct ForwardOut {
    std::vector<Var> guide_features;   // per layer, (c, w*h) for one image
    std::vector<Var> mapped_features;  // per layer, (c, w*h)
  };
  ForwardOut forward_image(const std::vector<Var>& guide_pyr, const std::vector<Var>& student_pyr,
                           int image);
};

struct LoadedCheckpoint {
  GTransModel model;
  int epoch = 0;
  int64_t step = 0;
  std::string run_config_json;
};

LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const std::string& weight_cache_override = "");

}  // namespace gtrans
