#include "gtrans/scoring.hpp"

#include <algorithm>
#include <cmath>

#include "gtrans/errors.hpp"
#include "gtrans/image_utils.hpp"

namespace gtrans {

CombinationMode combination_mode_from_string(const std::string& s) {
  if (s == "P1") return CombinationMode::P1;
  if (s == "P2") return CombinationMode::P2;
  if (s == "P3") return CombinationMode::P3;
  if (s == "P4") return CombinationMode::P4;
  if (s == "P5") return CombinationMode::P5;
  if (s == "P6") return CombinationMode::P6;
  throw ConfigError("unknown combination mode: " + s);
}

WeightKind weight_kind_from_string(const std::string& s) {
  if (s == "0.5" || s == "half") return WeightKind::half;
  if (s == "mse") return WeightKind::mse;
  if (s == "cos") return WeightKind::cos;
  if (s == "harmonic") return WeightKind::harmonic;
  throw ConfigError("unknown score weight kind: " + s);
}

std::string to_string(CombinationMode m) {
  switch (m) {
    case CombinationMode::P1: return "P1";
    case CombinationMode::P2: return "P2";
    case CombinationMode::P3: return "P3";
    case CombinationMode::P4: return "P4";
    case CombinationMode::P5: return "P5";
    case CombinationMode::P6: return "P6";
  }
  return "?";
}

std::string to_string(WeightKind w) {
  switch (w) {
    case WeightKind::half: return "0.5";
    case WeightKind::mse: return "mse";
    case WeightKind::cos: return "cos";
    case WeightKind::harmonic: return "harmonic";
  }
  return "?";
}

std::vector<CombinationMode> all_combination_modes() {
  return {CombinationMode::P1, CombinationMode::P2, CombinationMode::P3,
          CombinationMode::P4, CombinationMode::P5, CombinationMode::P6};
}

std::vector<std::vector<int>> mode_terms(CombinationMode mode) {
  switch (mode) {
    case CombinationMode::P1: return {{3}};
    case CombinationMode::P2: return {{1, 3}};
    case CombinationMode::P3: return {{2, 3}};
    case CombinationMode::P4: return {{1}, {2}, {3}};
    case CombinationMode::P5: return {{1, 2, 3}};
    case CombinationMode::P6: return {{1, 3}, {2, 3}};
  }
  return {};
}

Tensor layer_loss_map(const Tensor& guide_layer, const Tensor& mapped_layer) {
  if (!guide_layer.same_shape(mapped_layer) || guide_layer.ndim() != 3)
    throw ShapeError("layer_loss_map: " + shape_str(guide_layer.shape()) + " vs " +
                     shape_str(mapped_layer.shape()));
  int c = guide_layer.dim(0), h = guide_layer.dim(1), w = guide_layer.dim(2);
  int64_t hw = static_cast<int64_t>(h) * w;
  Tensor out({h, w});
  Scalar norm = 0.5 / static_cast<Scalar>(hw);
  for (int ch = 0; ch < c; ++ch) {
    const Scalar* g = guide_layer.data() + ch * hw;
    const Scalar* m = mapped_layer.data() + ch * hw;
    for (int64_t i = 0; i < hw; ++i) {
      Scalar d = g[i] - m[i];
      out[i] += norm * d * d;
    }
  }
  return out;
}

Scalar alpha_mse(const Tensor& guide_layer, const Tensor& mapped_layer) {
  if (!guide_layer.same_shape(mapped_layer))
    throw ShapeError("alpha_mse: shape mismatch");
  Scalar s = 0;
  for (int64_t i = 0; i < guide_layer.size(); ++i) {
    Scalar d = guide_layer[i] - mapped_layer[i];
    s += d * d;
  }
  return s / static_cast<Scalar>(guide_layer.size());
}

Scalar alpha_cos(const Tensor& guide_layer, const Tensor& mapped_layer, bool* degenerate) {
  if (!guide_layer.same_shape(mapped_layer))
    throw ShapeError("alpha_cos: shape mismatch");
  Scalar dot = 0, ng = 0, nm = 0;
  for (int64_t i = 0; i < guide_layer.size(); ++i) {
    dot += guide_layer[i] * mapped_layer[i];
    ng += guide_layer[i] * guide_layer[i];
    nm += mapped_layer[i] * mapped_layer[i];
  }
  if (degenerate) *degenerate = false;
  if (ng == 0 && nm == 0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  if (ng == 0 || nm == 0) return 1.0;  // orthogonal to any zero vector
  Scalar value = 1.0 - dot / (std::sqrt(ng) * std::sqrt(nm));
  return std::clamp<Scalar>(value, 0.0, 2.0);  // rounding can leave the true range
}

Scalar layer_weight(Scalar a_mse, Scalar a_cos, Scalar lambda) {
  if (a_mse < 0 || a_cos < 0) throw InvalidInputError("layer_weight: negative dissimilarity");
  if (lambda <= 0) throw InvalidInputError("layer_weight: lambda must be positive");
  Scalar denom = a_mse + lambda * a_cos;
  if (denom < 1e-12) return 0.0;
  return lambda * a_cos * a_mse / denom;
}

AnomalyMap anomaly_map(const std::vector<Tensor>& guide, const std::vector<Tensor>& mapped,
                       const std::vector<Scalar>& lambdas, const ScoreConfig& config, int out_h,
                       int out_w, const std::vector<int>& critical_layers) {
  if (guide.size() != mapped.size() || guide.size() != critical_layers.size())
    throw ShapeError("anomaly_map: layer count mismatch");
  if (config.weight == WeightKind::harmonic && lambdas.size() != guide.size())
    throw ConfigError("anomaly_map: harmonic weighting needs one lambda per layer");

  // weighted resized per-layer maps, keyed by critical-layer id
  std::vector<Tensor> weighted(guide.size());
  for (size_t l = 0; l < guide.size(); ++l) {
    Tensor p = layer_loss_map(guide[l], mapped[l]);
    Scalar w = 0;
    switch (config.weight) {
      case WeightKind::half: w = 0.5; break;
      case WeightKind::mse: w = alpha_mse(guide[l], mapped[l]); break;
      case WeightKind::cos: w = alpha_cos(guide[l], mapped[l]); break;
      case WeightKind::harmonic:
        w = layer_weight(alpha_mse(guide[l], mapped[l]), alpha_cos(guide[l], mapped[l]),
                         lambdas[l]);
        break;
    }
    Tensor resized = resize_bilinear(p, out_h, out_w);
    for (int64_t i = 0; i < resized.size(); ++i) resized[i] *= w;
    weighted[l] = std::move(resized);
  }

  auto layer_index = [&](int id) {
    for (size_t l = 0; l < critical_layers.size(); ++l)
      if (critical_layers[l] == id) return l;
    throw ConfigError("combination mode " + to_string(config.mode) + " references layer " +
                      std::to_string(id) + " outside the configured critical layers");
  };

  Tensor combined({out_h, out_w});
  if (config.sum_all_layers) {
    for (const Tensor& w : weighted)
      for (int64_t i = 0; i < combined.size(); ++i) combined[i] += w[i];
  } else {
    for (const auto& term : mode_terms(config.mode)) {
      Tensor product = weighted[layer_index(term[0])];
      for (size_t k = 1; k < term.size(); ++k) {
        const Tensor& next = weighted[layer_index(term[k])];
        for (int64_t i = 0; i < product.size(); ++i) product[i] *= next[i];
      }
      for (int64_t i = 0; i < combined.size(); ++i) combined[i] += product[i];
    }
  }

  AnomalyMap out;
  out.values = gaussian_blur(combined, config.sigma);
  out.image_score = out.values.max_value();
  out.mode = config.mode;
  out.sigma = config.sigma;
  return out;
}

Scalar image_score(const AnomalyMap& map) { return map.values.max_value(); }

LambdaCalibration calibrate_lambda(GTransModel& model, const std::vector<ImageSample>& val,
                                   const PreprocessConfig& preprocess, int batch_size) {
  if (val.empty()) throw DataError("calibrate_lambda: empty validation set");
  size_t layers = model.config().backbone.critical_layers.size();
  std::vector<Scalar> sum_mse(layers, 0.0), sum_cos(layers, 0.0);
  for (size_t start = 0; start < val.size(); start += static_cast<size_t>(batch_size)) {
    std::vector<size_t> idx;
    for (size_t k = start; k < std::min(val.size(), start + static_cast<size_t>(batch_size)); ++k)
      idx.push_back(k);
    Tensor batch = make_batch(val, idx, preprocess);
    auto pyramids = model.eval_forward(batch);
    for (const auto& img : pyramids)
      for (size_t l = 0; l < layers; ++l) {
        sum_mse[l] += alpha_mse(img.guide[l], img.mapped[l]);
        sum_cos[l] += alpha_cos(img.guide[l], img.mapped[l]);
      }
  }
  LambdaCalibration out;
  out.lambdas.resize(layers);
  out.clamped.resize(layers, false);
  for (size_t l = 0; l < layers; ++l) {
    Scalar mean_mse = sum_mse[l] / static_cast<Scalar>(val.size());
    Scalar mean_cos = sum_cos[l] / static_cast<Scalar>(val.size());
    Scalar lambda;
    if (mean_cos <= 0) {
      lambda = 1e6;  // clamp: direction dissimilarity vanished on validation
      out.clamped[l] = true;
    } else {
      lambda = mean_mse / mean_cos;
    }
    Scalar clamped_value = std::clamp<Scalar>(lambda, 1e-6, 1e6);
    if (clamped_value != lambda) out.clamped[l] = true;
    out.lambdas[l] = clamped_value;
  }
  return out;
}

}  // namespace gtrans
