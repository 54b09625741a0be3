#pragma once

#include <string>
#include <vector>

#include "cdk/backbone.hpp"
#include "cdk/nn.hpp"

namespace cdk {

struct ControlConfig {
  int64_t blocks = 16;        // L, number of controlled backbone blocks
  int64_t width = 256;        // branch hidden dimension
  double residual_scale = 0.8;  // inference-time scale; training uses 1
  bool spatial_mixing = true;   // false: per-token linear path only
  int64_t heads = 4;
  int64_t mlp_mult = 2;
};

// Binary gate over tokens, shaped [T',1,h_tok,w_tok].
template <typename T>
void validate_mask(const TensorT<T>& mask, const TokenGrid& grid) {
  require(mask.rank() == 4 && mask.dim(0) == grid.t && mask.dim(1) == 1 &&
              mask.dim(2) == grid.h && mask.dim(3) == grid.w,
          "control mask shape " + TensorT<T>::shape_str(mask.shape()) +
              " does not match token grid [" + std::to_string(grid.t) + ",1," +
              std::to_string(grid.h) + "," + std::to_string(grid.w) + "]");
  for (int64_t i = 0; i < mask.size(); ++i)
    require(mask[i] == T(0) || mask[i] == T(1),
            "control mask must be binary, found " + std::to_string(static_cast<double>(mask[i])));
}

// h + s * (M (*) residual); M broadcasts over channels.
template <typename T>
TokenStateT<T> apply_residuals(const TokenStateT<T>& h, const TensorT<T>& residual,
                               const TensorT<T>& mask, double s) {
  require(h.tokens.same_shape(residual), "apply_residuals: residual shape mismatch");
  validate_mask(mask, h.grid);
  require(mask.size() == h.grid.tokens(), "apply_residuals: mask token count mismatch");
  TokenStateT<T> out = h;
  const int64_t C = h.tokens.dim(1);
  for (int64_t n = 0; n < h.grid.tokens(); ++n) {
    const T gate = static_cast<T>(s) * mask[n];
    for (int64_t c = 0; c < C; ++c) out.tokens[n * C + c] += gate * residual[n * C + c];
  }
  return out;
}

// With probability p the conditioning input is replaced by zeros.
template <typename T>
TensorT<T> conditioning_dropout(const TensorT<T>& cond, double p, Rng& rng) {
  require(p >= 0.0 && p <= 1.0, "conditioning dropout probability must lie in [0,1]");
  if (rng.uniform() < p) return TensorT<T>(cond.shape());
  return cond;
}

// Trainable branch: concatenates adapted conditioning tokens with the noisy
// latent tokens, projects to the branch width, runs L lightweight blocks
// that share the backbone's token grid, and taps a zero-initialized
// projection after each block. At initialization every residual is zero.
template <typename T>
class ControlBranchT {
 public:
  using G = GraphT<T>;
  using Var = typename G::Var;

  ControlBranchT() = default;

  // cond_channels: channels of the adapted conditioning map; the branch
  // patchifies it with the backbone's patch size.
  ControlBranchT(const ControlConfig& cfg, const BackboneConfig& bb, const TokenGrid& grid,
                 int64_t cond_channels, Rng& rng)
      : cfg_(cfg), grid_(grid), patch_(bb.patch), cond_channels_(cond_channels),
        backbone_width_(bb.width) {
    require(cfg.blocks >= 1 && cfg.blocks <= bb.num_blocks,
            "control blocks L=" + std::to_string(cfg.blocks) +
                " must lie in [1, num_blocks=" + std::to_string(bb.num_blocks) + "]");
    require(cfg.residual_scale >= 0.0, "residual scale must be non-negative");
    const int64_t in_dim =
        (cond_channels + bb.latent_channels) * patch_ * patch_;
    proj_in_.init("branch.proj_in", in_dim, cfg.width, rng);
    if (cfg.spatial_mixing) {
      blocks_.resize(static_cast<size_t>(cfg.blocks));
      for (int64_t l = 0; l < cfg.blocks; ++l)
        blocks_[static_cast<size_t>(l)].init("branch.block" + std::to_string(l), cfg.width,
                                             cfg.heads, cfg.mlp_mult, bb.width, false, rng);
    } else {
      point_.resize(static_cast<size_t>(cfg.blocks));
      for (int64_t l = 0; l < cfg.blocks; ++l)
        point_[static_cast<size_t>(l)].init("branch.point" + std::to_string(l), cfg.width,
                                            cfg.width, rng);
    }
    taps_.resize(static_cast<size_t>(cfg.blocks));
    for (int64_t l = 0; l < cfg.blocks; ++l)
      taps_[static_cast<size_t>(l)].init("branch.tap" + std::to_string(l), cfg.width, bb.width,
                                         rng, /*bias=*/true, /*zero=*/true);
  }

  const ControlConfig& config() const { return cfg_; }
  int64_t cond_channels() const { return cond_channels_; }

  // cond: adapted conditioning [T',D_a,h_z,w_z] (graph var); z_t tokens are
  // consumed as a constant. Returns one residual per controlled block.
  std::vector<Var> forward_g(G& g, Var cond, const TensorT<T>& z_t_tokens, Var t_feat) {
    const auto& cs = g.val(cond).shape();
    require(cs.size() == 4, "branch conditioning must be [T,D,h,w]");
    require(cs[0] == grid_.t, "branch conditioning temporal length " + std::to_string(cs[0]) +
                                  " does not match latent frames " + std::to_string(grid_.t));
    require(cs[1] == cond_channels_, "branch conditioning channels " + std::to_string(cs[1]) +
                                         " do not match configured " +
                                         std::to_string(cond_channels_));
    require(cs[2] == grid_.h * patch_, "branch conditioning height " + std::to_string(cs[2]) +
                                           " does not match latent grid height " +
                                           std::to_string(grid_.h * patch_));
    require(cs[3] == grid_.w * patch_, "branch conditioning width " + std::to_string(cs[3]) +
                                           " does not match latent grid width " +
                                           std::to_string(grid_.w * patch_));
    require(z_t_tokens.rank() == 2 && z_t_tokens.dim(0) == grid_.tokens(),
            "branch latent tokens do not match token grid");

    auto cond_tokens =
        g.gather(cond, {grid_.tokens(), cond_channels_ * patch_ * patch_},
                 patchify_index(cs[0], cond_channels_, cs[2], cs[3], patch_));
    auto x = proj_in_.fwd(g, g.concat_cols(cond_tokens, g.constant(z_t_tokens)));

    std::vector<Var> residuals;
    residuals.reserve(static_cast<size_t>(cfg_.blocks));
    for (int64_t l = 0; l < cfg_.blocks; ++l) {
      if (cfg_.spatial_mixing) {
        x = blocks_[static_cast<size_t>(l)].fwd(g, x, t_feat, Var{});
      } else {
        x = g.add(x, g.silu(point_[static_cast<size_t>(l)].fwd(g, x)));
      }
      residuals.push_back(taps_[static_cast<size_t>(l)].fwd(g, x));
    }
    return residuals;
  }

  std::vector<TensorT<T>> forward(const TensorT<T>& cond, const TensorT<T>& z_t_tokens,
                                  const TensorT<T>& t_feat) {
    G g;
    auto rs = forward_g(g, g.constant(cond), z_t_tokens, g.constant(t_feat));
    std::vector<TensorT<T>> out;
    out.reserve(rs.size());
    for (auto v : rs) out.push_back(g.val(v));
    return out;
  }

  void collect(ParamList<T>& out) {
    proj_in_.collect(out);
    for (auto& b : blocks_) b.collect(out);
    for (auto& p : point_) p.collect(out);
    for (auto& z : taps_) z.collect(out);
  }

 private:
  ControlConfig cfg_;
  TokenGrid grid_;
  int64_t patch_ = 1;
  int64_t cond_channels_ = 0;
  int64_t backbone_width_ = 0;
  LinearT<T> proj_in_;
  std::vector<TransformerBlockT<T>> blocks_;
  std::vector<LinearT<T>> point_;  // spatial_mixing=false variant
  std::vector<LinearT<T>> taps_;   // zero-initialized per-block projections
};

using ControlBranch = ControlBranchT<float>;

}  // namespace cdk
