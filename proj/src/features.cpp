#include "cdk/features.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "cdk/error.hpp"
#include "cdk/tensor_io.hpp"
#include "cdk/util.hpp"

namespace cdk {

void validate_feature_grid(const FeatureGrid& grid) {
  require(grid.data.rank() == 4, "feature grid must be [T,D,h,w], got " +
                                     Tensor::shape_str(grid.data.shape()));
  require(grid.data.all_finite(), "feature grid contains non-finite values");
}

namespace {

// Keys' cubic convolution kernel with a = -0.5.
double cubic_weight(double x) {
  x = std::abs(x);
  if (x <= 1.0) return (1.5 * x - 2.5) * x * x + 1.0;
  if (x < 2.0) return ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0;
  return 0.0;
}

}  // namespace

Tensor bicubic_upscale(const Tensor& frame, double factor) {
  require(frame.rank() == 3, "bicubic_upscale: frame must be [C,H,W]");
  require(factor > 0.0, "bicubic_upscale: factor must be positive");
  if (factor == 1.0) return frame;

  const int64_t C = frame.dim(0), H = frame.dim(1), W = frame.dim(2);
  const int64_t Ho = static_cast<int64_t>(std::ceil(H * factor));
  const int64_t Wo = static_cast<int64_t>(std::ceil(W * factor));

  // separable: precompute per-output-coordinate taps
  struct Taps {
    int64_t base;
    double w[4];
  };
  auto make_taps = [factor](int64_t n_out, int64_t n_in) {
    std::vector<Taps> taps(static_cast<size_t>(n_out));
    for (int64_t o = 0; o < n_out; ++o) {
      double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
      int64_t i0 = static_cast<int64_t>(std::floor(src)) - 1;
      Taps t{};
      t.base = i0;
      for (int k = 0; k < 4; ++k) t.w[k] = cubic_weight(src - static_cast<double>(i0 + k));
      (void)n_in;
      taps[static_cast<size_t>(o)] = t;
    }
    return taps;
  };
  const auto ty = make_taps(Ho, H);
  const auto tx = make_taps(Wo, W);

  Tensor out({C, Ho, Wo});
  std::vector<double> row(static_cast<size_t>(W));
  for (int64_t c = 0; c < C; ++c) {
    // vertical pass into a temporary, then horizontal
    std::vector<double> tmp(static_cast<size_t>(Ho * W));
    for (int64_t y = 0; y < Ho; ++y) {
      const Taps& t = ty[static_cast<size_t>(y)];
      for (int64_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) {
          int64_t sy = std::clamp<int64_t>(t.base + k, 0, H - 1);
          acc += t.w[k] * static_cast<double>(frame[(c * H + sy) * W + x]);
        }
        tmp[static_cast<size_t>(y * W + x)] = acc;
      }
    }
    for (int64_t y = 0; y < Ho; ++y)
      for (int64_t x = 0; x < Wo; ++x) {
        const Taps& t = tx[static_cast<size_t>(x)];
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) {
          int64_t sx = std::clamp<int64_t>(t.base + k, 0, W - 1);
          acc += t.w[k] * tmp[static_cast<size_t>(y * W + sx)];
        }
        out[(c * Ho + y) * Wo + x] = static_cast<float>(acc);
      }
  }
  return out;
}

ToyEncoder::ToyEncoder(const EncoderSpec& spec, uint64_t seed) : spec_(spec) {
  require(spec.patch >= 1, "encoder patch must be >= 1");
  require(spec.upscale > 0.0, "encoder upscale must be positive");
  const int64_t in_dim = 3 * spec.patch * spec.patch;
  require(spec.feature_dim >= 1, "encoder feature dim must be >= 1");

  // fixed orthonormal projection rows via QR of a seeded Gaussian matrix
  Rng rng(seed);
  const int64_t rows = std::min(spec.feature_dim, in_dim);
  Eigen::MatrixXd gauss(in_dim, rows);
  for (int64_t i = 0; i < in_dim; ++i)
    for (int64_t j = 0; j < rows; ++j) gauss(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(in_dim, rows);

  projection_ = Tensor({spec.feature_dim, in_dim});
  for (int64_t r = 0; r < spec.feature_dim; ++r)
    for (int64_t cidx = 0; cidx < in_dim; ++cidx)
      projection_[r * in_dim + cidx] =
          r < rows ? static_cast<float>(q(cidx, r)) : 0.0f;
}

FeatureGrid ToyEncoder::encode_frames(const Tensor& video) const {
  require(video.rank() == 4 && video.dim(1) == 3, "encode_frames: video must be [T,3,H,W]");
  const int64_t T = video.dim(0), H = video.dim(2), W = video.dim(3);
  const double up = spec_.upscale;
  const int64_t Hs = static_cast<int64_t>(std::ceil(H * up));
  const int64_t Ws = static_cast<int64_t>(std::ceil(W * up));
  if (Hs % spec_.patch != 0 || Ws % spec_.patch != 0) {
    const int64_t pad_h = (spec_.patch - Hs % spec_.patch) % spec_.patch;
    const int64_t pad_w = (spec_.patch - Ws % spec_.patch) % spec_.patch;
    throw ContractError("encode_frames: upscaled size " + std::to_string(Hs) + "x" +
                        std::to_string(Ws) + " not divisible by patch " +
                        std::to_string(spec_.patch) + "; input would need " +
                        std::to_string(pad_h) + "x" + std::to_string(pad_w) +
                        " padding after upscale");
  }
  const int64_t gh = Hs / spec_.patch, gw = Ws / spec_.patch;
  const int64_t in_dim = 3 * spec_.patch * spec_.patch;

  FeatureGrid grid;
  grid.patch = spec_.patch;
  grid.source = FeatureSource::toy;
  grid.data = Tensor({T, spec_.feature_dim, gh, gw});

  using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const EMat> proj(projection_.data(), spec_.feature_dim, in_dim);

  parallel_for(T, [&](int64_t t) {
    Tensor frame({3, H, W});
    std::copy_n(video.data() + t * 3 * H * W, 3 * H * W, frame.data());
    Tensor up_frame = bicubic_upscale(frame, up);

    EMat patches(in_dim, gh * gw);
    for (int64_t i = 0; i < gh; ++i)
      for (int64_t j = 0; j < gw; ++j) {
        int64_t col = i * gw + j;
        int64_t k = 0;
        for (int64_t c = 0; c < 3; ++c)
          for (int64_t dy = 0; dy < spec_.patch; ++dy)
            for (int64_t dx = 0; dx < spec_.patch; ++dx)
              patches(k++, col) =
                  up_frame[(c * Hs + i * spec_.patch + dy) * Ws + (j * spec_.patch + dx)];
      }
    EMat feats = proj * patches;  // [D, gh*gw]
    for (int64_t col = 0; col < gh * gw; ++col) {
      float norm = feats.col(col).norm();
      if (norm > 0.0f) feats.col(col) /= norm;
    }
    for (int64_t d = 0; d < spec_.feature_dim; ++d)
      for (int64_t col = 0; col < gh * gw; ++col)
        grid.data[((t * spec_.feature_dim + d) * gh + col / gw) * gw + col % gw] = feats(d, col);
  });
  return grid;
}

FeatureGrid load_features(const std::string& path) {
  FeatureGrid grid;
  grid.data = load_tensor(path);
  grid.source = FeatureSource::file;
  validate_feature_grid(grid);
  return grid;
}

void save_features(const FeatureGrid& grid, const std::string& path) {
  validate_feature_grid(grid);
  save_tensor(grid.data, path);
}

FeatureGrid downscale_features(const FeatureGrid& grid, int64_t factor,
                               bool restore_resolution) {
  require(factor >= 1, "downscale factor must be >= 1");
  validate_feature_grid(grid);
  if (factor == 1) return grid;
  const int64_t T = grid.frames(), D = grid.feature_dim(), h = grid.grid_h(), w = grid.grid_w();
  require(h % factor == 0, "feature grid height " + std::to_string(h) +
                               " not divisible by factor " + std::to_string(factor));
  require(w % factor == 0, "feature grid width " + std::to_string(w) +
                               " not divisible by factor " + std::to_string(factor));
  const int64_t hp = h / factor, wp = w / factor;
  FeatureGrid out = grid;
  out.data = Tensor({T, D, hp, wp});
  const float inv = 1.0f / static_cast<float>(factor * factor);
  for (int64_t t = 0; t < T; ++t)
    for (int64_t d = 0; d < D; ++d)
      for (int64_t i = 0; i < hp; ++i)
        for (int64_t j = 0; j < wp; ++j) {
          float acc = 0.0f;
          for (int64_t dy = 0; dy < factor; ++dy)
            for (int64_t dx = 0; dx < factor; ++dx)
              acc += grid.data[((t * D + d) * h + i * factor + dy) * w + j * factor + dx];
          out.data[((t * D + d) * hp + i) * wp + j] = acc * inv;
        }
  if (!restore_resolution) return out;

  FeatureGrid restored = grid;
  restored.data = Tensor({T, D, h, w});
  for (int64_t t = 0; t < T; ++t)
    for (int64_t d = 0; d < D; ++d)
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j)
          restored.data[((t * D + d) * h + i) * w + j] =
              out.data[((t * D + d) * hp + i / factor) * wp + j / factor];
  return restored;
}

}  // namespace cdk
