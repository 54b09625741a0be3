#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cdk/backbone.hpp"
#include "cdk/control_branch.hpp"
#include "cdk/diffusion.hpp"
#include "cdk/features.hpp"
#include "cdk/latent_vae.hpp"
#include "cdk/temporal_adapter.hpp"
#include "cdk/util.hpp"

namespace cdk {

struct ModelConfig {
  int64_t video_frames = 49;  // pixel frames per clip, == 1 (mod 4)
  int64_t video_height = 32;
  int64_t video_width = 48;

  BackboneConfig backbone;
  ControlConfig control;

  int64_t adapter_hidden = 16;
  int64_t adapter_norm_groups = 8;
  bool adapter_replicate_past = true;
  bool adapter_per_frame_stats = true;

  EncoderSpec encoder{16, 32, 2.0};

  uint64_t init_seed = 1;
  uint64_t vae_seed = 0x51c2b4d8a9e3f705ULL;
  uint64_t encoder_seed = 0x7f3e9d2c5b81a640ULL;

  int sample_steps = 20;

  int64_t latent_frames() const { return (video_frames - 1) / 4 + 1; }
  int64_t latent_h() const { return video_height / ToyVae::kSpatial; }
  int64_t latent_w() const { return video_width / ToyVae::kSpatial; }
};

// Deterministic embedding of a prompt string: empty prompts map to zeros,
// otherwise a unit-norm vector seeded by the string hash.
Tensor text_embedding(const std::string& prompt, int64_t dim);

// base when keyword is empty, otherwise "base, keyword".
std::string build_prompt(const std::string& base, const std::string& style_keyword);

// Frozen backbone plus the trainable conditioning pathway (temporal
// adapter -> control branch -> per-block residuals).
struct Model {
  ModelConfig cfg;
  ToyBackbone backbone;
  TemporalAdapter adapter;
  ControlBranch branch;
  ToyVae vae;
  ToyEncoder encoder;

  static Model build(const ModelConfig& cfg);

  ParamList<float> all_params();
  ParamList<float> trainable_params();

  // Conditioned v-prediction. features: [T,D,h_z,w_z] pre-adapter
  // conditioning (nullptr = unconditional); mask: token-level gate
  // [T',1,h_tok,w_tok] (nullptr = all ones); scale: residual scale.
  Tensor denoise_conditioned(const Tensor& z_t, double t, const Tensor& text_emb,
                             const Tensor* first_frame, const Tensor* features,
                             const Tensor* mask, double scale);

  // Training/analysis graph of the same computation.
  Graph::Var denoise_conditioned_g(Graph& g, const Tensor& z_t, double t,
                                   const Tensor& text_emb, const Tensor* first_frame,
                                   const Tensor* features, const Tensor* mask, double scale);

  // Mean squared v-prediction error for one sample.
  Graph::Var loss_g(Graph& g, const Tensor& z0, const Tensor& eps, double t,
                    const Tensor& text_emb, const Tensor* first_frame, const Tensor* features,
                    const Tensor* mask, const NoiseSchedule& sched);

  // Flattened token gate from a [T',1,h_tok,w_tok] mask.
  Tensor mask_tokens(const Tensor& mask) const;

  void validate_features(const Tensor& features) const;
};

uint32_t params_checksum(const ParamList<float>& params);

}  // namespace cdk
