#include "cdk/model.hpp"

#include <cmath>

#include "cdk/error.hpp"

namespace cdk {

Tensor text_embedding(const std::string& prompt, int64_t dim) {
  Tensor out({dim});
  if (prompt.empty()) return out;
  Rng rng(fnv1a(prompt));
  double norm2 = 0.0;
  for (int64_t i = 0; i < dim; ++i) {
    out[i] = static_cast<float>(rng.normal());
    norm2 += static_cast<double>(out[i]) * out[i];
  }
  const float inv = static_cast<float>(1.0 / std::sqrt(norm2));
  for (int64_t i = 0; i < dim; ++i) out[i] *= inv;
  return out;
}

std::string build_prompt(const std::string& base, const std::string& style_keyword) {
  if (style_keyword.empty()) return base;
  return base + ", " + style_keyword;
}

Model Model::build(const ModelConfig& cfg) {
  require(cfg.video_frames % 4 == 1, "video frame count must satisfy T == 1 (mod 4), got " +
                                         std::to_string(cfg.video_frames));
  require(cfg.video_height % ToyVae::kSpatial == 0 && cfg.video_width % ToyVae::kSpatial == 0,
          "video height and width must be divisible by 8");

  Model m{cfg,      ToyBackbone{}, TemporalAdapter{}, ControlBranch{},
          ToyVae(cfg.backbone.latent_channels, cfg.vae_seed), ToyEncoder(cfg.encoder, cfg.encoder_seed)};

  // the feature grid must land exactly on the latent grid
  const double up = cfg.encoder.upscale;
  const int64_t gh = static_cast<int64_t>(std::ceil(cfg.video_height * up)) / cfg.encoder.patch;
  const int64_t gw = static_cast<int64_t>(std::ceil(cfg.video_width * up)) / cfg.encoder.patch;
  require(gh == cfg.latent_h() && gw == cfg.latent_w(),
          "encoder grid " + std::to_string(gh) + "x" + std::to_string(gw) +
              " does not match latent grid " + std::to_string(cfg.latent_h()) + "x" +
              std::to_string(cfg.latent_w()));

  Rng rng(cfg.init_seed);
  Rng rng_backbone = rng.fork(1);
  Rng rng_adapter = rng.fork(2);
  Rng rng_branch = rng.fork(3);

  m.backbone = ToyBackbone(cfg.backbone, cfg.latent_frames(), cfg.latent_h(), cfg.latent_w(),
                           rng_backbone);
  m.adapter = TemporalAdapter(cfg.encoder.feature_dim, cfg.adapter_hidden,
                              cfg.control.width, cfg.adapter_norm_groups, rng_adapter,
                              cfg.adapter_replicate_past, cfg.adapter_per_frame_stats);
  m.branch = ControlBranch(cfg.control, cfg.backbone, m.backbone.grid(), cfg.control.width,
                           rng_branch);
  m.backbone.freeze();
  return m;
}

ParamList<float> Model::all_params() {
  ParamList<float> out;
  backbone.collect(out);
  adapter.collect(out);
  branch.collect(out);
  return out;
}

ParamList<float> Model::trainable_params() {
  ParamList<float> out, all = all_params();
  for (auto* p : all)
    if (p->trainable) out.push_back(p);
  return out;
}

void Model::validate_features(const Tensor& features) const {
  require(features.rank() == 4, "conditioning features must be [T,D,h,w]");
  require(features.dim(0) == cfg.video_frames,
          "conditioning temporal length " + std::to_string(features.dim(0)) +
              " does not match configured frames " + std::to_string(cfg.video_frames));
  require(features.dim(1) == cfg.encoder.feature_dim,
          "conditioning feature dim " + std::to_string(features.dim(1)) +
              " does not match configured " + std::to_string(cfg.encoder.feature_dim));
  require(features.dim(2) == cfg.latent_h() && features.dim(3) == cfg.latent_w(),
          "conditioning grid " + std::to_string(features.dim(2)) + "x" +
              std::to_string(features.dim(3)) + " does not match latent grid " +
              std::to_string(cfg.latent_h()) + "x" + std::to_string(cfg.latent_w()));
}

Tensor Model::mask_tokens(const Tensor& mask) const {
  validate_mask(mask, backbone.grid());
  Tensor flat({backbone.grid().tokens()});
  std::copy_n(mask.data(), mask.size(), flat.data());
  return flat;
}

Graph::Var Model::denoise_conditioned_g(Graph& g, const Tensor& z_t, double t,
                                        const Tensor& text_emb, const Tensor* first_frame,
                                        const Tensor* features, const Tensor* mask,
                                        double scale) {
  backbone.validate_latent(z_t);
  std::vector<Graph::Var> residuals;
  if (features) {
    validate_features(*features);
    auto cond = adapter.adapt_g(g, g.constant(*features));
    auto zt_tokens = patchify(z_t, cfg.backbone.patch);
    auto t_feat = backbone.time_feat_full(g, t);
    residuals = branch.forward_g(g, cond, zt_tokens.tokens, t_feat);

    Graph::Var gate{};
    if (mask) gate = g.constant(mask_tokens(*mask));
    for (auto& r : residuals) {
      if (mask) r = g.mul_rows(r, gate);
      if (scale != 1.0) r = g.scale(r, static_cast<float>(scale));
    }
  }
  return backbone.denoise_g(g, z_t, t, text_emb, first_frame, residuals);
}

Tensor Model::denoise_conditioned(const Tensor& z_t, double t, const Tensor& text_emb,
                                  const Tensor* first_frame, const Tensor* features,
                                  const Tensor* mask, double scale) {
  Graph g;
  return g.val(denoise_conditioned_g(g, z_t, t, text_emb, first_frame, features, mask, scale));
}

Graph::Var Model::loss_g(Graph& g, const Tensor& z0, const Tensor& eps, double t,
                         const Tensor& text_emb, const Tensor* first_frame,
                         const Tensor* features, const Tensor* mask,
                         const NoiseSchedule& sched) {
  Tensor z_t = forward_diffuse(z0, eps, t, sched);
  Tensor target = v_target(z0, eps, t, sched);
  auto pred = denoise_conditioned_g(g, z_t, t, text_emb, first_frame, features, mask, 1.0);
  auto diff = g.sub(pred, g.constant(target));
  return g.mean_all(g.mul(diff, diff));
}

uint32_t params_checksum(const ParamList<float>& params) {
  uint32_t crc = 0;
  for (const auto* p : params)
    crc = crc32(p->value.data(), static_cast<size_t>(p->value.size()) * sizeof(float), crc);
  return crc;
}

}  // namespace cdk
