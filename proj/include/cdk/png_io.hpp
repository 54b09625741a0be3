#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdk/tensor.hpp"

namespace cdk {

// 8-bit RGB image IO. The writer emits non-interlaced RGB with filter 0
// and a fixed zlib level so identical pixels give identical bytes; the
// reader accepts 8-bit gray/RGB/RGBA non-interlaced files with any of the
// five standard filters.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel
};

void write_png(const std::string& path, const ImageU8& img);
ImageU8 read_png(const std::string& path);

// Frame <-> tensor conversion. Tensors are [3,H,W] in [0,1]; values are
// quantized with round(v*255) clamped to [0,255].
ImageU8 frame_to_image(const Tensor& frame);
Tensor image_to_frame(const ImageU8& img);

}  // namespace cdk
