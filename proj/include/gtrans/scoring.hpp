#pragma once

#include <string>
#include <vector>

#include "gtrans/datasets.hpp"
#include "gtrans/model.hpp"
#include "gtrans/tensor.hpp"

namespace gtrans {

enum class CombinationMode { P1, P2, P3, P4, P5, P6 };
enum class WeightKind { half, mse, cos, harmonic };

CombinationMode combination_mode_from_string(const std::string& s);
WeightKind weight_kind_from_string(const std::string& s);
std::string to_string(CombinationMode m);
std::string to_string(WeightKind w);
std::vector<CombinationMode> all_combination_modes();

// Critical-layer ids (1-based stage indices) referenced by each product/sum
// term of a combination mode.
std::vector<std::vector<int>> mode_terms(CombinationMode mode);

struct ScoreConfig {
  CombinationMode mode = CombinationMode::P6;
  Scalar sigma = 4.0;
  WeightKind weight = WeightKind::harmonic;
  // Plain weighted sum over every configured layer instead of the mode table;
  // used by the layer-subset ablation where the P1-P6 ids need not exist.
  bool sum_all_layers = false;
};

struct LayerLossMap {
  Tensor values;  // (h_l, w_l), non-negative
  int layer = 0;
};

// Per-pixel channel-summed squared-L2 discrepancy with the 1/2 factor,
// normalized by the layer's pixel count. Inputs are (c,h,w).
Tensor layer_loss_map(const Tensor& guide_layer, const Tensor& mapped_layer);

// Mean squared difference over every entry (spatial and channel).
Scalar alpha_mse(const Tensor& guide_layer, const Tensor& mapped_layer);

// 1 - cosine similarity of the flattened layers, in [0,2]. Two all-zero
// inputs are defined as 0 and flagged degenerate.
Scalar alpha_cos(const Tensor& guide_layer, const Tensor& mapped_layer,
                 bool* degenerate = nullptr);

// Lambda-balanced harmonic mean; 0 when the denominator underflows.
Scalar layer_weight(Scalar a_mse, Scalar a_cos, Scalar lambda);

struct AnomalyMap {
  Tensor values;  // (H, W), non-negative
  Scalar image_score = 0;  // max over values
  CombinationMode mode = CombinationMode::P6;
  Scalar sigma = 0;
};

// Weighted resized per-layer maps combined per the mode, then Gaussian
// smoothed. `critical_layers` names the stage id of each pyramid entry.
AnomalyMap anomaly_map(const std::vector<Tensor>& guide, const std::vector<Tensor>& mapped,
                       const std::vector<Scalar>& lambdas, const ScoreConfig& config, int out_h,
                       int out_w, const std::vector<int>& critical_layers);

Scalar image_score(const AnomalyMap& map);

struct LambdaCalibration {
  std::vector<Scalar> lambdas;  // per layer, clamped to [1e-6, 1e6]
  std::vector<bool> clamped;    // true where the mean alpha_cos was degenerate
};

// lambda_l = mean over validation normals of alpha_mse / mean of alpha_cos.
LambdaCalibration calibrate_lambda(GTransModel& model, const std::vector<ImageSample>& val,
                                   const PreprocessConfig& preprocess, int batch_size = 8);

}  // namespace gtrans
