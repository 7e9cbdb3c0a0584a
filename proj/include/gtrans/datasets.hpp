#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gtrans/tensor.hpp"

namespace gtrans {

struct PreprocessConfig {
  int resize_edge = 256;
  int crop_size = 224;
  // channel normalization statistics of the guide's pretraining corpus
  std::array<Scalar, 3> mean = {0.485, 0.456, 0.406};
  std::array<Scalar, 3> stddev = {0.229, 0.224, 0.225};

  void validate() const;
};

enum class Label { normal, anomalous };

struct ImageSample {
  Tensor pixels;  // (3, crop, crop) in [0,1]; geometry applied, not normalized
  Label label = Label::normal;
  Tensor mask;  // (crop, crop) in {0,1}; empty when absent
  std::string category;
  std::string path;
};

struct DatasetSplit {
  std::vector<ImageSample> train;  // all normal
  std::vector<ImageSample> val;    // all normal
  std::vector<ImageSample> test;   // mixed
};

// Resize (bilinear) to resize_edge, center crop to crop_size; values stay in [0,1].
Tensor preprocess_geometry(const Tensor& raw, const PreprocessConfig& config);
// Mask geometry follows the image path with nearest-neighbor interpolation.
Tensor preprocess_mask(const Tensor& raw_mask, const PreprocessConfig& config);
// Per-channel (x - mean) / std.
Tensor normalize_channels(const Tensor& pixels01, const PreprocessConfig& config);
// Full preprocessing: geometry then channel normalization.
Tensor preprocess_image(const Tensor& raw, const PreprocessConfig& config);

// Normalized network input (N,3,crop,crop) for the selected samples.
Tensor make_batch(const std::vector<ImageSample>& samples, const std::vector<size_t>& indices,
                  const PreprocessConfig& config);

// Loads one MVTec-AD-layout category. Train images are split train/val
// deterministically under the seed; defect test images carry binarized masks.
DatasetSplit load_mvtec_category(const std::string& root_path, const std::string& category,
                                 const PreprocessConfig& config, Scalar split_ratio = 0.8,
                                 uint64_t seed = 0);

enum class TextureFamily { smooth_noise };
enum class AnomalyShape { square, blob };

TextureFamily texture_family_from_string(const std::string& s);
AnomalyShape anomaly_shape_from_string(const std::string& s);

struct SyntheticSpec {
  int image_size = 64;
  int train_count = 40;
  int val_count = 10;
  int test_normal = 10;
  int test_anomalous = 10;
  TextureFamily texture = TextureFamily::smooth_noise;
  AnomalyShape anomaly = AnomalyShape::square;
  int patch_size = 12;
  uint64_t seed = 0;

  void validate() const;
};

// Deterministic desk-scale dataset: clean smoothed-noise textures plus test
// images with an injected out-of-distribution patch and its exact mask.
DatasetSplit generate_synthetic_dataset(const SyntheticSpec& spec);

}  // namespace gtrans
