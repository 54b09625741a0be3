#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cdk/nn.hpp"

namespace cdk {

struct BackboneConfig {
  int64_t num_blocks = 8;
  int64_t width = 64;
  int64_t patch = 2;
  int64_t heads = 4;
  int64_t text_dim = 16;
  int64_t latent_channels = 4;
  int64_t time_dim = 32;
  int64_t mlp_mult = 2;
  bool use_pos_embed = true;
};

struct TokenGrid {
  int64_t t = 0, h = 0, w = 0;
  int64_t tokens() const { return t * h * w; }
  bool operator==(const TokenGrid&) const = default;
};

template <typename T>
struct TokenStateT {
  TensorT<T> tokens;  // [N, width]
  TokenGrid grid;
};

using TokenState = TokenStateT<float>;

// Token layout: token (t,i,j) at row ((t*gh + i)*gw + j); within a row,
// channel c and in-patch offset (dy,dx) occupy column (c*p + dy)*p + dx.
inline std::shared_ptr<std::vector<int64_t>> patchify_index(int64_t Tn, int64_t C, int64_t h,
                                                            int64_t w, int64_t p) {
  const int64_t gh = h / p, gw = w / p;
  auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(Tn * C * h * w));
  int64_t n = 0;
  for (int64_t t = 0; t < Tn; ++t)
    for (int64_t i = 0; i < gh; ++i)
      for (int64_t j = 0; j < gw; ++j)
        for (int64_t c = 0; c < C; ++c)
          for (int64_t dy = 0; dy < p; ++dy)
            for (int64_t dx = 0; dx < p; ++dx)
              (*idx)[static_cast<size_t>(n++)] =
                  ((t * C + c) * h + (i * p + dy)) * w + (j * p + dx);
  return idx;
}

inline std::shared_ptr<std::vector<int64_t>> unpatchify_index(int64_t Tn, int64_t C, int64_t h,
                                                              int64_t w, int64_t p) {
  const auto fwd = patchify_index(Tn, C, h, w, p);
  auto idx = std::make_shared<std::vector<int64_t>>(fwd->size());
  for (size_t i = 0; i < fwd->size(); ++i) (*idx)[static_cast<size_t>((*fwd)[i])] = static_cast<int64_t>(i);
  return idx;
}

template <typename T>
void check_patch_divisible(const TensorT<T>& z, int64_t patch) {
  require(z.rank() == 4, "latent must be [T,C,h,w]");
  require(z.dim(2) % patch == 0, "latent height " + std::to_string(z.dim(2)) +
                                     " not divisible by patch " + std::to_string(patch));
  require(z.dim(3) % patch == 0, "latent width " + std::to_string(z.dim(3)) +
                                     " not divisible by patch " + std::to_string(patch));
}

template <typename T>
TokenStateT<T> patchify(const TensorT<T>& z, int64_t patch) {
  check_patch_divisible(z, patch);
  const int64_t Tn = z.dim(0), C = z.dim(1), h = z.dim(2), w = z.dim(3);
  const auto idx = patchify_index(Tn, C, h, w, patch);
  TokenStateT<T> out;
  out.grid = {Tn, h / patch, w / patch};
  out.tokens = TensorT<T>({out.grid.tokens(), C * patch * patch});
  for (int64_t i = 0; i < out.tokens.size(); ++i) out.tokens[i] = z[(*idx)[static_cast<size_t>(i)]];
  return out;
}

template <typename T>
TensorT<T> unpatchify(const TokenStateT<T>& tok, int64_t C, int64_t patch) {
  const int64_t Tn = tok.grid.t, h = tok.grid.h * patch, w = tok.grid.w * patch;
  require(tok.tokens.rank() == 2 && tok.tokens.dim(1) == C * patch * patch,
          "unpatchify: token width mismatch");
  const auto idx = patchify_index(Tn, C, h, w, patch);
  TensorT<T> z({Tn, C, h, w});
  for (int64_t i = 0; i < tok.tokens.size(); ++i) z[(*idx)[static_cast<size_t>(i)]] = tok.tokens[i];
  return z;
}

// Small frozen video transformer operating on patchified latents. The
// first latent frame may be supplied as image conditioning: it is
// replicated over time, channel-concatenated together with a one-hot
// frame indicator, and embedded with the noisy latent. Residual inputs
// are added to the hidden state after their block.
template <typename T>
class ToyBackboneT {
 public:
  using G = GraphT<T>;
  using Var = typename G::Var;

  ToyBackboneT() = default;

  ToyBackboneT(const BackboneConfig& cfg, int64_t latent_frames, int64_t latent_h,
               int64_t latent_w, Rng& rng)
      : cfg_(cfg), frames_(latent_frames), h_(latent_h), w_(latent_w) {
    require(cfg.num_blocks >= 1, "backbone needs at least one block");
    require(latent_h % cfg.patch == 0, "latent height " + std::to_string(latent_h) +
                                           " not divisible by patch " + std::to_string(cfg.patch));
    require(latent_w % cfg.patch == 0, "latent width " + std::to_string(latent_w) +
                                           " not divisible by patch " + std::to_string(cfg.patch));
    grid_ = {frames_, h_ / cfg.patch, w_ / cfg.patch};
    const int64_t in_dim = (2 * cfg.latent_channels + 1) * cfg.patch * cfg.patch;
    embed_.init("backbone.embed", in_dim, cfg.width, rng);
    pos_.init("backbone.pos", TensorT<T>::randn({grid_.tokens(), cfg.width}, rng, T(0.02)));
    time1_.init("backbone.time1", cfg.time_dim, cfg.width, rng);
    time2_.init("backbone.time2", cfg.width, cfg.width, rng);
    text_.init("backbone.text", cfg.text_dim, cfg.width, rng, /*bias=*/false);
    blocks_.resize(static_cast<size_t>(cfg.num_blocks));
    for (int64_t l = 0; l < cfg.num_blocks; ++l)
      blocks_[static_cast<size_t>(l)].init("backbone.block" + std::to_string(l), cfg.width,
                                           cfg.heads, cfg.mlp_mult, cfg.width, true, rng);
    head_ln_.init("backbone.head_ln", cfg.width);
    head_.init("backbone.head", cfg.width, cfg.latent_channels * cfg.patch * cfg.patch, rng);
  }

  const BackboneConfig& config() const { return cfg_; }
  const TokenGrid& grid() const { return grid_; }
  int64_t latent_frames() const { return frames_; }
  int64_t latent_h() const { return h_; }
  int64_t latent_w() const { return w_; }

  void collect(ParamList<T>& out) {
    embed_.collect(out);
    out.push_back(&pos_);
    time1_.collect(out);
    time2_.collect(out);
    text_.collect(out);
    for (auto& b : blocks_) b.collect(out);
    head_ln_.collect(out);
    head_.collect(out);
  }

  void freeze() {
    ParamList<T> ps;
    collect(ps);
    for (auto* p : ps) p->trainable = false;
  }

  bool frozen() const {
    ParamList<T> ps;
    const_cast<ToyBackboneT*>(this)->collect(ps);
    for (auto* p : ps)
      if (p->trainable) return false;
    return true;
  }

  Var denoise_g(G& g, const TensorT<T>& z_t, double t, const TensorT<T>& text_emb,
                const TensorT<T>* first_frame, const std::vector<Var>& residuals) {
    validate_latent(z_t);
    require(static_cast<int64_t>(residuals.size()) <= cfg_.num_blocks,
            "residual list has " + std::to_string(residuals.size()) + " entries but backbone has " +
                std::to_string(cfg_.num_blocks) + " blocks");
    // assemble [z_t | replicated first frame | indicator] channels
    TensorT<T> in = assemble_input(z_t, first_frame);
    auto x = g.gather(g.constant(std::move(in)),
                      {grid_.tokens(), (2 * cfg_.latent_channels + 1) * cfg_.patch * cfg_.patch},
                      patchify_index(frames_, 2 * cfg_.latent_channels + 1, h_, w_, cfg_.patch));
    x = embed_.fwd(g, x);
    if (cfg_.use_pos_embed) x = g.add(x, leaf(g, pos_));

    auto t_feat = time_feat_full(g, t);
    auto txt = text_feat(g, text_emb);

    for (int64_t l = 0; l < cfg_.num_blocks; ++l) {
      x = blocks_[static_cast<size_t>(l)].fwd(g, x, t_feat, txt);
      if (l < static_cast<int64_t>(residuals.size()) && residuals[static_cast<size_t>(l)].valid()) {
        const auto& rv = g.val(residuals[static_cast<size_t>(l)]);
        require(rv.rank() == 2 && rv.dim(0) == grid_.tokens() && rv.dim(1) == cfg_.width,
                "residual shape mismatch at block " + std::to_string(l) + ": got " +
                    TensorT<T>::shape_str(rv.shape()));
        x = g.add(x, residuals[static_cast<size_t>(l)]);
      }
    }
    x = head_.fwd(g, head_ln_.fwd(g, x));
    return g.gather(x, {frames_, cfg_.latent_channels, h_, w_},
                    unpatchify_index(frames_, cfg_.latent_channels, h_, w_, cfg_.patch));
  }

  // Shared timestep feature, also consumed by the control branch.
  Var time_feat_full(G& g, double t) {
    auto tf = g.constant(time_features<T>(t, cfg_.time_dim));
    return time2_.fwd(g, g.silu(time1_.fwd(g, tf)));
  }

  Var text_feat(G& g, const TensorT<T>& text_emb) {
    TensorT<T> te = text_emb;
    if (te.empty()) te = TensorT<T>({1, cfg_.text_dim});
    if (te.rank() == 1) te = te.reshaped({1, te.dim(0)});
    require(te.rank() == 2 && te.dim(0) == 1 && te.dim(1) == cfg_.text_dim,
            "text embedding must have dimension " + std::to_string(cfg_.text_dim));
    return text_.fwd(g, g.constant(te));
  }

  TensorT<T> denoise(const TensorT<T>& z_t, double t, const TensorT<T>& text_emb,
                     const TensorT<T>* first_frame = nullptr,
                     const std::vector<TensorT<T>>* residuals = nullptr) {
    G g;
    std::vector<Var> rvars;
    if (residuals) {
      require(static_cast<int64_t>(residuals->size()) <= cfg_.num_blocks,
              "residual list has " + std::to_string(residuals->size()) +
                  " entries but backbone has " + std::to_string(cfg_.num_blocks) + " blocks");
      for (const auto& r : *residuals)
        rvars.push_back(r.empty() ? Var{} : g.constant(r));
    }
    return g.val(denoise_g(g, z_t, t, text_emb, first_frame, rvars));
  }

  void validate_latent(const TensorT<T>& z) const {
    require(z.rank() == 4 && z.dim(0) == frames_ && z.dim(1) == cfg_.latent_channels &&
                z.dim(2) == h_ && z.dim(3) == w_,
            "latent shape " + TensorT<T>::shape_str(z.shape()) + " does not match bound [" +
                std::to_string(frames_) + "," + std::to_string(cfg_.latent_channels) + "," +
                std::to_string(h_) + "," + std::to_string(w_) + "]");
  }

 private:
  TensorT<T> assemble_input(const TensorT<T>& z_t, const TensorT<T>* first_frame) const {
    const int64_t C = cfg_.latent_channels;
    TensorT<T> in({frames_, 2 * C + 1, h_, w_});
    const int64_t hw = h_ * w_;
    for (int64_t t = 0; t < frames_; ++t) {
      for (int64_t c = 0; c < C; ++c)
        std::copy_n(z_t.data() + (t * C + c) * hw, hw, in.data() + (t * (2 * C + 1) + c) * hw);
      if (first_frame) {
        const TensorT<T>& ff = *first_frame;
        require((ff.rank() == 3 && ff.dim(0) == C && ff.dim(1) == h_ && ff.dim(2) == w_) ||
                    (ff.rank() == 4 && ff.dim(0) == 1 && ff.dim(1) == C && ff.dim(2) == h_ &&
                     ff.dim(3) == w_),
                "first-frame latent shape mismatch: " + TensorT<T>::shape_str(ff.shape()));
        for (int64_t c = 0; c < C; ++c)
          std::copy_n(ff.data() + c * hw, hw, in.data() + (t * (2 * C + 1) + C + c) * hw);
        if (t == 0)
          std::fill_n(in.data() + (t * (2 * C + 1) + 2 * C) * hw, hw, T(1));
      }
    }
    return in;
  }

  BackboneConfig cfg_;
  int64_t frames_ = 0, h_ = 0, w_ = 0;
  TokenGrid grid_;
  LinearT<T> embed_;
  ParamT<T> pos_;
  LinearT<T> time1_, time2_;
  LinearT<T> text_;
  std::vector<TransformerBlockT<T>> blocks_;
  LayerNormT<T> head_ln_;
  LinearT<T> head_;
};

using ToyBackbone = ToyBackboneT<float>;

}  // namespace cdk
