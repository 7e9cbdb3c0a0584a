#include "gtrans/image_utils.hpp"

#include <algorithm>
#include <cmath>

#include "gtrans/errors.hpp"

namespace gtrans {

namespace {

struct Planes {
  int channels, h, w;
};

Planes plane_dims(const Tensor& t, const char* who) {
  if (t.ndim() == 2) return {1, t.dim(0), t.dim(1)};
  if (t.ndim() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
  throw ShapeError(std::string(who) + ": expected (H,W) or (C,H,W), got " + shape_str(t.shape()));
}

std::vector<int> with_planes(const Tensor& like, int h, int w) {
  if (like.ndim() == 2) return {h, w};
  return {like.dim(0), h, w};
}

int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

}  // namespace

Tensor resize_bilinear(const Tensor& src, int out_h, int out_w) {
  Planes p = plane_dims(src, "resize_bilinear");
  Tensor out(with_planes(src, out_h, out_w));
  Scalar sy = static_cast<Scalar>(p.h) / out_h;
  Scalar sx = static_cast<Scalar>(p.w) / out_w;
  for (int c = 0; c < p.channels; ++c) {
    const Scalar* in = src.data() + static_cast<int64_t>(c) * p.h * p.w;
    Scalar* dst = out.data() + static_cast<int64_t>(c) * out_h * out_w;
    for (int i = 0; i < out_h; ++i) {
      Scalar fy = (i + 0.5) * sy - 0.5;
      int y0 = static_cast<int>(std::floor(fy));
      Scalar wy = fy - y0;
      int y0c = std::clamp(y0, 0, p.h - 1);
      int y1c = std::clamp(y0 + 1, 0, p.h - 1);
      for (int j = 0; j < out_w; ++j) {
        Scalar fx = (j + 0.5) * sx - 0.5;
        int x0 = static_cast<int>(std::floor(fx));
        Scalar wx = fx - x0;
        int x0c = std::clamp(x0, 0, p.w - 1);
        int x1c = std::clamp(x0 + 1, 0, p.w - 1);
        Scalar top = in[y0c * p.w + x0c] * (1 - wx) + in[y0c * p.w + x1c] * wx;
        Scalar bot = in[y1c * p.w + x0c] * (1 - wx) + in[y1c * p.w + x1c] * wx;
        dst[i * out_w + j] = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

Tensor resize_nearest(const Tensor& src, int out_h, int out_w) {
  Planes p = plane_dims(src, "resize_nearest");
  Tensor out(with_planes(src, out_h, out_w));
  Scalar sy = static_cast<Scalar>(p.h) / out_h;
  Scalar sx = static_cast<Scalar>(p.w) / out_w;
  for (int c = 0; c < p.channels; ++c) {
    const Scalar* in = src.data() + static_cast<int64_t>(c) * p.h * p.w;
    Scalar* dst = out.data() + static_cast<int64_t>(c) * out_h * out_w;
    for (int i = 0; i < out_h; ++i) {
      int y = std::min(p.h - 1, static_cast<int>(std::floor((i + 0.5) * sy)));
      for (int j = 0; j < out_w; ++j) {
        int x = std::min(p.w - 1, static_cast<int>(std::floor((j + 0.5) * sx)));
        dst[i * out_w + j] = in[y * p.w + x];
      }
    }
  }
  return out;
}

Tensor center_crop(const Tensor& src, int crop_h, int crop_w) {
  Planes p = plane_dims(src, "center_crop");
  if (crop_h > p.h || crop_w > p.w)
    throw InvalidInputError("center_crop: crop " + std::to_string(crop_h) + "x" +
                            std::to_string(crop_w) + " larger than input " + std::to_string(p.h) +
                            "x" + std::to_string(p.w));
  int off_y = (p.h - crop_h) / 2;
  int off_x = (p.w - crop_w) / 2;
  Tensor out(with_planes(src, crop_h, crop_w));
  for (int c = 0; c < p.channels; ++c) {
    const Scalar* in = src.data() + static_cast<int64_t>(c) * p.h * p.w;
    Scalar* dst = out.data() + static_cast<int64_t>(c) * crop_h * crop_w;
    for (int i = 0; i < crop_h; ++i)
      for (int j = 0; j < crop_w; ++j) dst[i * crop_w + j] = in[(i + off_y) * p.w + (j + off_x)];
  }
  return out;
}

Tensor gaussian_blur(const Tensor& map, Scalar sigma) {
  if (sigma <= 0) return map;
  Planes p = plane_dims(map, "gaussian_blur");
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<Scalar> kernel(static_cast<size_t>(2 * radius + 1));
  Scalar norm = 0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[static_cast<size_t>(k + radius)] = std::exp(-0.5 * k * k / (sigma * sigma));
    norm += kernel[static_cast<size_t>(k + radius)];
  }
  for (Scalar& v : kernel) v /= norm;

  Tensor tmp(map.shape());
  Tensor out(map.shape());
  for (int c = 0; c < p.channels; ++c) {
    const Scalar* in = map.data() + static_cast<int64_t>(c) * p.h * p.w;
    Scalar* mid = tmp.data() + static_cast<int64_t>(c) * p.h * p.w;
    Scalar* dst = out.data() + static_cast<int64_t>(c) * p.h * p.w;
    for (int i = 0; i < p.h; ++i)
      for (int j = 0; j < p.w; ++j) {
        Scalar s = 0;
        for (int k = -radius; k <= radius; ++k)
          s += kernel[static_cast<size_t>(k + radius)] * in[i * p.w + reflect101(j + k, p.w)];
        mid[i * p.w + j] = s;
      }
    for (int i = 0; i < p.h; ++i)
      for (int j = 0; j < p.w; ++j) {
        Scalar s = 0;
        for (int k = -radius; k <= radius; ++k)
          s += kernel[static_cast<size_t>(k + radius)] * mid[reflect101(i + k, p.h) * p.w + j];
        dst[i * p.w + j] = s;
      }
  }
  return out;
}

}  // namespace gtrans
