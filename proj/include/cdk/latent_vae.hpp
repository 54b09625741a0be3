#pragma once

#include <cstdint>

#include "cdk/tensor.hpp"

namespace cdk {

// Fixed (weight-free to train) latent codec standing in for a causal video
// VAE: 4x temporal grouping (first frame kept, then non-overlapping groups
// of four), 8x spatial average pooling, and an orthonormal 3->C channel
// projection of pixels mapped to [-1,1]. decode() is the exact
// pseudo-inverse: encode(decode(z)) == z up to float rounding.
class ToyVae {
 public:
  explicit ToyVae(int64_t latent_channels = 4, uint64_t seed = 0x51c2b4d8a9e3f705ULL);

  int64_t latent_channels() const { return channels_; }
  static constexpr int64_t kSpatial = 8;
  static constexpr int64_t kTemporal = 4;

  // video: [T,3,H,W] with T == 1 (mod 4), H and W divisible by 8.
  Tensor encode(const Tensor& video) const;

  // latent: [T',C,h,w] -> video [1+(T'-1)*4, 3, h*8, w*8], values unclamped.
  Tensor decode(const Tensor& latent) const;

  static int64_t latent_frames(int64_t pixel_frames);

 private:
  int64_t channels_;
  Tensor proj_;  // [C,3], orthonormal columns
};

}  // namespace cdk
