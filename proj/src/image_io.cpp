#include "gtrans/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>

#include "gtrans/errors.hpp"

namespace gtrans {

Tensor decode_image(const std::string& path) {
  cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);
  if (img.empty()) throw DataError("cannot decode image: " + path);
  Tensor out({3, img.rows, img.cols});
  int64_t hw = static_cast<int64_t>(img.rows) * img.cols;
  for (int i = 0; i < img.rows; ++i) {
    const cv::Vec3b* row = img.ptr<cv::Vec3b>(i);
    for (int j = 0; j < img.cols; ++j) {
      // BGR -> RGB planes
      out[0 * hw + i * img.cols + j] = row[j][2] / 255.0;
      out[1 * hw + i * img.cols + j] = row[j][1] / 255.0;
      out[2 * hw + i * img.cols + j] = row[j][0] / 255.0;
    }
  }
  return out;
}

Tensor decode_mask(const std::string& path) {
  cv::Mat img = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (img.empty()) throw DataError("cannot decode mask: " + path);
  Tensor out({img.rows, img.cols});
  for (int i = 0; i < img.rows; ++i) {
    const uint8_t* row = img.ptr<uint8_t>(i);
    for (int j = 0; j < img.cols; ++j) out[static_cast<int64_t>(i) * img.cols + j] = row[j] > 127 ? 1.0 : 0.0;
  }
  return out;
}

namespace {

cv::Mat to_bgr8(const Tensor& pixels01) {
  if (pixels01.ndim() != 3 || pixels01.dim(0) != 3)
    throw ShapeError("write png: expected (3,H,W), got " + shape_str(pixels01.shape()));
  int h = pixels01.dim(1), w = pixels01.dim(2);
  int64_t hw = static_cast<int64_t>(h) * w;
  cv::Mat img(h, w, CV_8UC3);
  for (int i = 0; i < h; ++i) {
    cv::Vec3b* row = img.ptr<cv::Vec3b>(i);
    for (int j = 0; j < w; ++j) {
      auto to8 = [](Scalar v) {
        return static_cast<uint8_t>(std::clamp<Scalar>(v, 0.0, 1.0) * 255.0 + 0.5);
      };
      row[j][2] = to8(pixels01[0 * hw + i * w + j]);
      row[j][1] = to8(pixels01[1 * hw + i * w + j]);
      row[j][0] = to8(pixels01[2 * hw + i * w + j]);
    }
  }
  return img;
}

cv::Mat heatmap_bgr8(const Tensor& map) {
  if (map.ndim() != 2) throw ShapeError("heatmap: expected (H,W), got " + shape_str(map.shape()));
  int h = map.dim(0), w = map.dim(1);
  Scalar peak = map.max_value();
  cv::Mat gray(h, w, CV_8UC1);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      Scalar v = peak > 0 ? map[static_cast<int64_t>(i) * w + j] / peak : 0.0;
      gray.at<uint8_t>(i, j) = static_cast<uint8_t>(std::clamp<Scalar>(v, 0.0, 1.0) * 255.0 + 0.5);
    }
  cv::Mat color;
  cv::applyColorMap(gray, color, cv::COLORMAP_JET);
  return color;
}

void write_or_throw(const std::string& path, const cv::Mat& img) {
  if (!cv::imwrite(path, img)) throw DataError("cannot write image: " + path);
}

}  // namespace

void write_image_png(const std::string& path, const Tensor& pixels01) {
  write_or_throw(path, to_bgr8(pixels01));
}

void write_heatmap_png(const std::string& path, const Tensor& map) {
  write_or_throw(path, heatmap_bgr8(map));
}

void write_overlay_png(const std::string& path, const Tensor& pixels01, const Tensor& map) {
  cv::Mat base = to_bgr8(pixels01);
  cv::Mat heat = heatmap_bgr8(map);
  if (base.size() != heat.size())
    throw ShapeError("overlay: image and map sizes differ");
  cv::Mat blend;
  cv::addWeighted(base, 0.5, heat, 0.5, 0.0, blend);
  write_or_throw(path, blend);
}

void write_mask_png(const std::string& path, const Tensor& mask) {
  if (mask.ndim() != 2) throw ShapeError("mask png: expected (H,W)");
  int h = mask.dim(0), w = mask.dim(1);
  cv::Mat img(h, w, CV_8UC1);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      img.at<uint8_t>(i, j) = mask[static_cast<int64_t>(i) * w + j] > 0.5 ? 255 : 0;
  write_or_throw(path, img);
}

}  // namespace gtrans
