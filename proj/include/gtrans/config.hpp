#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gtrans/datasets.hpp"
#include "gtrans/metrics.hpp"
#include "gtrans/model.hpp"
#include "gtrans/scoring.hpp"
#include "gtrans/training.hpp"

namespace gtrans {

// Fully resolved run configuration. Defaults reproduce the reference
// settings: g=8, d=256, S=2, layers 1-3, 256->224 preprocessing, Adam
// 1e-3/1e-4, 300 epochs, decay 0.9, mode P6.
struct RunConfig {
  uint64_t seed = 0;

  struct Paths {
    std::string data_root = "data";
    std::string weight_cache = "weights";
    std::string out_dir = "runs";
  } paths;

  struct Dataset {
    std::string kind = "mvtec";  // mvtec | synthetic
    std::string category = "bottle";
    Scalar split_ratio = 0.8;
    PreprocessConfig preprocess;
    SyntheticSpec synthetic;
  } dataset;

  BackboneConfig backbone;  // family + critical layers; guide is always pretrained
  int tokenizer_groups = 8;
  int tokenizer_dim = 256;
  int tfm_blocks = 2;
  bool tfm_use_decoder = true;
  TokenSource mapper_token_source = TokenSource::encoder;
  QuerySource mapper_query_source = QuerySource::guide;
  TrainConfig training;
  ScoreConfig score;
  std::string lambda_source = "checkpoint";  // checkpoint | unit
  Scalar fpr_cap = 0.3;

  // Canonical default tree; every legal key appears here.
  static nlohmann::json defaults();
  // Parses and validates; any key absent from the default tree is an error.
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  // Loads a config file ("default" or "" for built-in defaults), applies
  // dotted-path overrides ("training.epochs=3"), then environment overrides
  // (GTRANS_DATA_ROOT, GTRANS_WEIGHT_CACHE).
  static RunConfig load(const std::string& path_or_default,
                        const std::vector<std::string>& overrides);

  ModelConfig model_config() const;
  EvalSettings eval_settings() const;
  // Category label used in artifact filenames; synthetic runs report "synthetic".
  std::string category_name() const;
};

// Materializes the configured dataset (mvtec directory tree or synthetic).
DatasetSplit load_dataset(const RunConfig& config);

}  // namespace gtrans
