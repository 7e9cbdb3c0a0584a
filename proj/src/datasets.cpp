#include "gtrans/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "gtrans/errors.hpp"
#include "gtrans/image_io.hpp"
#include "gtrans/image_utils.hpp"

namespace fs = std::filesystem;

namespace gtrans {

void PreprocessConfig::validate() const {
  if (resize_edge < 2 || crop_size < 2) throw ConfigError("preprocess sizes must be >= 2");
  if (crop_size > resize_edge) throw ConfigError("crop_size larger than resize_edge");
  for (Scalar s : stddev)
    if (s <= 0) throw ConfigError("preprocess std must be positive");
}

Tensor preprocess_geometry(const Tensor& raw, const PreprocessConfig& config) {
  if (raw.ndim() != 3 || raw.dim(0) != 3)
    throw InvalidInputError("preprocess: expected 3-channel (3,H,W) input, got " +
                            shape_str(raw.shape()));
  if (raw.dim(1) < 2 || raw.dim(2) < 2)
    throw InvalidInputError("preprocess: input smaller than 2x2");
  // geometry is idempotent: an already resized-and-cropped image passes through
  if (raw.dim(1) == config.crop_size && raw.dim(2) == config.crop_size) return raw;
  Tensor resized = resize_bilinear(raw, config.resize_edge, config.resize_edge);
  return center_crop(resized, config.crop_size, config.crop_size);
}

Tensor preprocess_mask(const Tensor& raw_mask, const PreprocessConfig& config) {
  if (raw_mask.ndim() != 2) throw InvalidInputError("preprocess_mask: expected (H,W) mask");
  if (raw_mask.dim(0) == config.crop_size && raw_mask.dim(1) == config.crop_size) return raw_mask;
  Tensor resized = resize_nearest(raw_mask, config.resize_edge, config.resize_edge);
  return center_crop(resized, config.crop_size, config.crop_size);
}

Tensor normalize_channels(const Tensor& pixels01, const PreprocessConfig& config) {
  if (pixels01.ndim() != 3 || pixels01.dim(0) != 3)
    throw InvalidInputError("normalize_channels: expected (3,H,W)");
  Tensor out = pixels01;
  int64_t hw = static_cast<int64_t>(out.dim(1)) * out.dim(2);
  for (int c = 0; c < 3; ++c) {
    Scalar* p = out.data() + c * hw;
    for (int64_t i = 0; i < hw; ++i) p[i] = (p[i] - config.mean[size_t(c)]) / config.stddev[size_t(c)];
  }
  return out;
}

Tensor preprocess_image(const Tensor& raw, const PreprocessConfig& config) {
  return normalize_channels(preprocess_geometry(raw, config), config);
}

Tensor make_batch(const std::vector<ImageSample>& samples, const std::vector<size_t>& indices,
                  const PreprocessConfig& config) {
  if (indices.empty()) throw DataError("make_batch: empty index list");
  int h = samples[indices[0]].pixels.dim(1);
  int w = samples[indices[0]].pixels.dim(2);
  Tensor batch({static_cast<int>(indices.size()), 3, h, w});
  int64_t plane = static_cast<int64_t>(3) * h * w;
  for (size_t k = 0; k < indices.size(); ++k) {
    Tensor norm = normalize_channels(samples[indices[k]].pixels, config);
    if (norm.size() != plane)
      throw ShapeError("make_batch: sample " + samples[indices[k]].path + " has shape " +
                       shape_str(norm.shape()) + ", batch expects (3," + std::to_string(h) + "," +
                       std::to_string(w) + ")");
    std::copy(norm.data(), norm.data() + plane, batch.data() + static_cast<int64_t>(k) * plane);
  }
  return batch;
}

namespace {

std::vector<std::string> sorted_files(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".PNG") {
      out.push_back(entry.path().string());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

void require_dir(const fs::path& p) {
  if (!fs::is_directory(p)) throw DataError("dataset layout error: missing directory " + p.string());
}

}  // namespace

DatasetSplit load_mvtec_category(const std::string& root_path, const std::string& category,
                                 const PreprocessConfig& config, Scalar split_ratio,
                                 uint64_t seed) {
  config.validate();
  if (split_ratio <= 0 || split_ratio > 1) throw ConfigError("split_ratio must be in (0,1]");
  fs::path base = fs::path(root_path) / category;
  fs::path train_good = base / "train" / "good";
  fs::path test_dir = base / "test";
  fs::path gt_dir = base / "ground_truth";
  require_dir(base);
  require_dir(train_good);
  require_dir(test_dir);
  require_dir(gt_dir);

  auto load_normal = [&](const std::string& file) {
    ImageSample s;
    s.pixels = preprocess_geometry(decode_image(file), config);
    s.label = Label::normal;
    s.category = category;
    s.path = file;
    return s;
  };

  // deterministic train/val split over the sorted file list
  std::vector<std::string> train_files = sorted_files(train_good);
  if (train_files.empty()) throw DataError("dataset layout error: no images under " + train_good.string());
  std::vector<size_t> order(train_files.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  size_t n = train_files.size();
  size_t n_train = static_cast<size_t>(std::llround(split_ratio * static_cast<Scalar>(n)));
  n_train = std::min(n_train, n);
  if (split_ratio < 1 && n >= 2) n_train = std::clamp<size_t>(n_train, 1, n - 1);

  DatasetSplit split;
  for (size_t k = 0; k < n; ++k) {
    ImageSample s = load_normal(train_files[order[k]]);
    (k < n_train ? split.train : split.val).push_back(std::move(s));
  }

  std::vector<fs::path> defect_dirs;
  for (const auto& entry : fs::directory_iterator(test_dir))
    if (entry.is_directory()) defect_dirs.push_back(entry.path());
  std::sort(defect_dirs.begin(), defect_dirs.end());

  for (const fs::path& defect : defect_dirs) {
    bool is_good = defect.filename() == "good";
    if (!is_good) require_dir(gt_dir / defect.filename());
    for (const std::string& file : sorted_files(defect)) {
      if (is_good) {
        split.test.push_back(load_normal(file));
        continue;
      }
      ImageSample s;
      Tensor raw = decode_image(file);
      fs::path mask_path =
          gt_dir / defect.filename() / (fs::path(file).stem().string() + "_mask.png");
      if (!fs::exists(mask_path))
        throw DataError("dataset layout error: missing mask " + mask_path.string());
      Tensor raw_mask = decode_mask(mask_path.string());
      if (raw_mask.dim(0) != raw.dim(1) || raw_mask.dim(1) != raw.dim(2))
        throw DataError("corrupt sample: mask dimensions differ from image for " + file);
      s.pixels = preprocess_geometry(raw, config);
      s.mask = preprocess_mask(raw_mask, config);
      s.label = Label::anomalous;
      s.category = category;
      s.path = file;
      split.test.push_back(std::move(s));
    }
  }
  return split;
}

TextureFamily texture_family_from_string(const std::string& s) {
  if (s == "smooth_noise") return TextureFamily::smooth_noise;
  throw ConfigError("unknown texture family: " + s);
}

AnomalyShape anomaly_shape_from_string(const std::string& s) {
  if (s == "square") return AnomalyShape::square;
  if (s == "blob") return AnomalyShape::blob;
  throw ConfigError("unknown anomaly shape: " + s);
}

void SyntheticSpec::validate() const {
  if (image_size < 8) throw ConfigError("synthetic: image_size must be >= 8");
  if (patch_size < 1) throw ConfigError("synthetic: patch_size must be >= 1");
  if (patch_size > image_size)
    throw ConfigError("synthetic: anomaly patch " + std::to_string(patch_size) +
                      " larger than image " + std::to_string(image_size));
  if (train_count < 1) throw ConfigError("synthetic: train_count must be >= 1");
  if (val_count < 0 || test_normal < 0 || test_anomalous < 0)
    throw ConfigError("synthetic: counts must be non-negative");
}

namespace {

// Smoothed uniform noise stretched to a mid-range band, one correlated
// luminance field plus small per-channel perturbations.
Tensor smooth_texture(int size, std::mt19937_64& rng) {
  auto smooth_field = [&](Scalar sigma) {
    Tensor field = randu({size, size}, 0.0, 1.0, rng);
    field = gaussian_blur(field, sigma);
    Scalar lo = field[0], hi = field[0];
    for (int64_t i = 0; i < field.size(); ++i) {
      lo = std::min(lo, field[i]);
      hi = std::max(hi, field[i]);
    }
    Scalar span = hi - lo < 1e-9 ? 1.0 : hi - lo;
    for (int64_t i = 0; i < field.size(); ++i) field[i] = (field[i] - lo) / span;
    return field;
  };
  Tensor lum = smooth_field(size / 16.0);
  Tensor img({3, size, size});
  for (int c = 0; c < 3; ++c) {
    Tensor pert = smooth_field(size / 16.0);
    for (int64_t i = 0; i < lum.size(); ++i) {
      Scalar v = 0.25 + 0.5 * (0.85 * lum[i] + 0.15 * pert[i]);
      img[c * lum.size() + i] = std::clamp<Scalar>(v, 0.0, 1.0);
    }
  }
  return img;
}

// High-frequency saturated checkerboard, pixel values far outside the clean
// texture's band and uncorrelated across channels.
void inject_patch(Tensor& img, Tensor& mask, const SyntheticSpec& spec, std::mt19937_64& rng) {
  int size = spec.image_size;
  int p = spec.patch_size;
  std::uniform_int_distribution<int> pos(0, size - p);
  int top = pos(rng), left = pos(rng);
  std::uniform_real_distribution<Scalar> hi_dist(0.85, 1.0), lo_dist(0.0, 0.15);
  Scalar hi[3], lo[3];
  for (int c = 0; c < 3; ++c) {
    hi[c] = hi_dist(rng);
    lo[c] = lo_dist(rng);
  }
  Scalar ax = 1.0, ay = 1.0;
  if (spec.anomaly == AnomalyShape::blob) {
    std::uniform_real_distribution<Scalar> axis(0.55, 1.0);
    ax = axis(rng);
    ay = axis(rng);
  }
  Scalar cy = top + (p - 1) / 2.0, cx = left + (p - 1) / 2.0;
  Scalar ry = std::max(0.5, ay * p / 2.0), rx = std::max(0.5, ax * p / 2.0);
  for (int i = top; i < top + p; ++i)
    for (int j = left; j < left + p; ++j) {
      if (spec.anomaly == AnomalyShape::blob) {
        Scalar dy = (i - cy) / ry, dx = (j - cx) / rx;
        if (dy * dy + dx * dx > 1.0) continue;
      }
      bool odd = ((i + j) & 1) != 0;
      for (int c = 0; c < 3; ++c)
        img[(static_cast<int64_t>(c) * size + i) * size + j] = odd ? hi[c] : lo[c];
      mask[static_cast<int64_t>(i) * size + j] = 1.0;
    }
  // a blob thinner than a pixel could miss every center; force one pixel
  if (mask.sum() == 0) {
    int ci = static_cast<int>(cy), cj = static_cast<int>(cx);
    for (int c = 0; c < 3; ++c)
      img[(static_cast<int64_t>(c) * size + ci) * size + cj] = hi[c];
    mask[static_cast<int64_t>(ci) * size + cj] = 1.0;
  }
}

}  // namespace

DatasetSplit generate_synthetic_dataset(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  DatasetSplit split;
  auto make_normal = [&](const std::string& tag, int index) {
    ImageSample s;
    s.pixels = smooth_texture(spec.image_size, rng);
    s.label = Label::normal;
    s.category = "synthetic";
    s.path = "synthetic://" + tag + "/" + std::to_string(index);
    return s;
  };
  for (int i = 0; i < spec.train_count; ++i) split.train.push_back(make_normal("train", i));
  for (int i = 0; i < spec.val_count; ++i) split.val.push_back(make_normal("val", i));
  for (int i = 0; i < spec.test_normal; ++i) {
    ImageSample s = make_normal("test_normal", i);
    s.mask = Tensor::zeros({spec.image_size, spec.image_size});
    split.test.push_back(std::move(s));
  }
  for (int i = 0; i < spec.test_anomalous; ++i) {
    ImageSample s = make_normal("test_anomalous", i);
    s.label = Label::anomalous;
    s.mask = Tensor::zeros({spec.image_size, spec.image_size});
    inject_patch(s.pixels, s.mask, spec, rng);
    split.test.push_back(std::move(s));
  }
  return split;
}

}  // namespace gtrans
