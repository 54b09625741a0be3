#pragma once

#include <string>

#include "cdk/rng.hpp"
#include "cdk/tensor.hpp"

namespace cdk {

enum class FeatureSource { toy, file, external };

// Per-frame dense feature maps [T,D,h,w], aligned with the latent grid of
// the paired video configuration.
struct FeatureGrid {
  Tensor data;  // [T,D,h,w]
  int64_t patch = 16;
  FeatureSource source = FeatureSource::toy;

  int64_t frames() const { return data.dim(0); }
  int64_t feature_dim() const { return data.dim(1); }
  int64_t grid_h() const { return data.dim(2); }
  int64_t grid_w() const { return data.dim(3); }
};

void validate_feature_grid(const FeatureGrid& grid);

struct EncoderSpec {
  int64_t patch = 16;
  int64_t feature_dim = 384;  // 32 is the usual toy setting
  double upscale = 2.0;
};

// Standard bicubic interpolation (a = -0.5), half-pixel centers, clamped
// borders. factor == 1 returns the input bitwise.
Tensor bicubic_upscale(const Tensor& frame, double factor);

// Deterministic patch encoder: frames are bicubic-upscaled, cut into
// patch x patch cells, projected with a fixed orthonormal map and
// L2-normalized per token. A stand-in for an external dense encoder with
// the same grid geometry.
class ToyEncoder {
 public:
  explicit ToyEncoder(const EncoderSpec& spec, uint64_t seed = 0x7f3e9d2c5b81a640ULL);

  // video: [T,3,H,W] in [0,1]
  FeatureGrid encode_frames(const Tensor& video) const;

  const EncoderSpec& spec() const { return spec_; }

 private:
  EncoderSpec spec_;
  Tensor projection_;  // [feature_dim, 3*patch*patch], orthonormal rows
};

FeatureGrid load_features(const std::string& path);
void save_features(const FeatureGrid& grid, const std::string& path);

// Area-average pooling by an integer factor per feature channel; with
// restore_resolution the pooled map is nearest-upsampled back to the
// original grid.
FeatureGrid downscale_features(const FeatureGrid& grid, int64_t factor,
                               bool restore_resolution = false);

}  // namespace cdk
