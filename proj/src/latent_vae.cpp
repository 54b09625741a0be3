#include "cdk/latent_vae.hpp"

#include <Eigen/Dense>

#include "cdk/error.hpp"
#include "cdk/rng.hpp"

namespace cdk {

ToyVae::ToyVae(int64_t latent_channels, uint64_t seed) : channels_(latent_channels) {
  require(latent_channels >= 3, "toy vae needs at least 3 latent channels");
  Rng rng(seed);
  Eigen::MatrixXd gauss(channels_, 3);
  for (int64_t i = 0; i < channels_; ++i)
    for (int64_t j = 0; j < 3; ++j) gauss(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(channels_, 3);
  proj_ = Tensor({channels_, 3});
  for (int64_t i = 0; i < channels_; ++i)
    for (int64_t j = 0; j < 3; ++j) proj_[i * 3 + j] = static_cast<float>(q(i, j));
}

int64_t ToyVae::latent_frames(int64_t pixel_frames) {
  require(pixel_frames % kTemporal == 1,
          "pixel frame count must satisfy T == 1 (mod 4), got " + std::to_string(pixel_frames));
  return (pixel_frames - 1) / kTemporal + 1;
}

Tensor ToyVae::encode(const Tensor& video) const {
  require(video.rank() == 4 && video.dim(1) == 3, "encode: video must be [T,3,H,W]");
  const int64_t T = video.dim(0), H = video.dim(2), W = video.dim(3);
  require(H % kSpatial == 0, "encode: height " + std::to_string(H) + " not divisible by 8");
  require(W % kSpatial == 0, "encode: width " + std::to_string(W) + " not divisible by 8");
  const int64_t Tl = latent_frames(T);
  const int64_t h = H / kSpatial, w = W / kSpatial;

  // temporal group means of the [-1,1]-mapped frames, then spatial pooling
  Tensor latent({Tl, channels_, h, w});
  const float inv_sp = 1.0f / static_cast<float>(kSpatial * kSpatial);
  for (int64_t tl = 0; tl < Tl; ++tl) {
    const int64_t t0 = tl == 0 ? 0 : 1 + (tl - 1) * kTemporal;
    const int64_t tn = tl == 0 ? 1 : kTemporal;
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        float rgb[3] = {0, 0, 0};
        for (int64_t dt = 0; dt < tn; ++dt)
          for (int64_t c = 0; c < 3; ++c) {
            float acc = 0.0f;
            for (int64_t dy = 0; dy < kSpatial; ++dy)
              for (int64_t dx = 0; dx < kSpatial; ++dx)
                acc += video[(((t0 + dt) * 3 + c) * H + i * kSpatial + dy) * W +
                             (j * kSpatial + dx)];
            rgb[c] += acc * inv_sp;
          }
        for (int64_t c = 0; c < 3; ++c)
          rgb[c] = 2.0f * (rgb[c] / static_cast<float>(tn)) - 1.0f;
        for (int64_t cz = 0; cz < channels_; ++cz) {
          float acc = 0.0f;
          for (int64_t c = 0; c < 3; ++c) acc += proj_[cz * 3 + c] * rgb[c];
          latent[((tl * channels_ + cz) * h + i) * w + j] = acc;
        }
      }
  }
  return latent;
}

Tensor ToyVae::decode(const Tensor& latent) const {
  require(latent.rank() == 4 && latent.dim(1) == channels_,
          "decode: latent must be [T'," + std::to_string(channels_) + ",h,w]");
  const int64_t Tl = latent.dim(0), h = latent.dim(2), w = latent.dim(3);
  const int64_t T = 1 + (Tl - 1) * kTemporal;
  const int64_t H = h * kSpatial, W = w * kSpatial;

  Tensor video({T, 3, H, W});
  for (int64_t tl = 0; tl < Tl; ++tl) {
    const int64_t t0 = tl == 0 ? 0 : 1 + (tl - 1) * kTemporal;
    const int64_t tn = tl == 0 ? 1 : kTemporal;
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        float rgb[3];
        for (int64_t c = 0; c < 3; ++c) {
          float acc = 0.0f;
          for (int64_t cz = 0; cz < channels_; ++cz)
            acc += proj_[cz * 3 + c] * latent[((tl * channels_ + cz) * h + i) * w + j];
          rgb[c] = (acc + 1.0f) * 0.5f;
        }
        for (int64_t dt = 0; dt < tn; ++dt)
          for (int64_t c = 0; c < 3; ++c)
            for (int64_t dy = 0; dy < kSpatial; ++dy)
              for (int64_t dx = 0; dx < kSpatial; ++dx)
                video[(((t0 + dt) * 3 + c) * H + i * kSpatial + dy) * W + (j * kSpatial + dx)] =
                    rgb[c];
      }
  }
  return video;
}

}  // namespace cdk
