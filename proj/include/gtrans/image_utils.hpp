#pragma once

#include "gtrans/tensor.hpp"

namespace gtrans {

// Geometry helpers for (H,W) or (C,H,W) tensors. Bilinear resizing uses the
// half-pixel-center convention (src = (dst + 0.5) * scale - 0.5).
Tensor resize_bilinear(const Tensor& src, int out_h, int out_w);
Tensor resize_nearest(const Tensor& src, int out_h, int out_w);
Tensor center_crop(const Tensor& src, int crop_h, int crop_w);

// Separable Gaussian with mirrored (reflect-101) borders; kernel radius
// ceil(3*sigma), normalized. sigma <= 0 returns the input unchanged.
Tensor gaussian_blur(const Tensor& map, Scalar sigma);

}  // namespace gtrans
