#pragma once

#include <string>

#include "gtrans/tensor.hpp"

namespace gtrans {

// PNG/JPEG decode to (3,H,W) RGB in [0,1].
Tensor decode_image(const std::string& path);
// Decode to (H,W) and binarize at 0.5.
Tensor decode_mask(const std::string& path);

// 8-bit encoders. Heatmaps are normalized per map and colormapped; overlays
// blend the heatmap onto the [0,1] image.
void write_image_png(const std::string& path, const Tensor& pixels01);
void write_heatmap_png(const std::string& path, const Tensor& map);
void write_overlay_png(const std::string& path, const Tensor& pixels01, const Tensor& map);
void write_mask_png(const std::string& path, const Tensor& mask);

}  // namespace gtrans
