#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cdk/features.hpp"
#include "cdk/latent_vae.hpp"
#include "cdk/rng.hpp"
#include "cdk/tensor.hpp"

namespace cdk {

enum class AugKind { real, photometric, neural_style, blur };

const char* aug_kind_name(AugKind k);

// Per-pixel closed-form transforms with identical parameters on every
// frame. Identity is hue=0, saturation=1, brightness=0, contrast=1,
// gamma=1, grayscale=false.
struct PhotometricParams {
  double hue = 0.0;         // shift in [-0.5, 0.5] turns of the HSV circle
  double saturation = 1.0;
  double brightness = 0.0;
  double contrast = 1.0;
  double gamma = 1.0;
  bool grayscale = false;
};

// video: [T,3,H,W] in [0,1]
Tensor apply_photometric(const Tensor& video, const PhotometricParams& params);

// Gaussian blur, one kernel for all frames; sigma = 0 is the identity.
Tensor apply_blur(const Tensor& video, double sigma);

using StyleTransform = std::function<Tensor(const Tensor&)>;

// User-supplied frame-sequence transforms looked up by style keyword.
class StyleRegistry {
 public:
  void register_hook(const std::string& name, StyleTransform transform);
  Tensor apply(const Tensor& video, const std::string& name) const;
  bool has(const std::string& name) const;
  std::vector<std::string> names() const;

 private:
  std::map<std::string, StyleTransform> hooks_;
};

struct AugmentationGroup {
  AugKind kind = AugKind::real;
  std::function<Tensor(const Tensor&)> transform;  // frame count/size preserving
  std::map<std::string, double> params;            // identical across the clip
  std::string style_keyword;                       // nonempty iff kind != real
};

struct MixtureConfig {
  // draw weights over {real, photometric, neural_style, blur}
  double w_real = 1.0, w_photometric = 1.0, w_neural_style = 1.0, w_blur = 1.0;
  // photometric parameter ranges
  double hue_range = 0.1;
  double gamma_lo = 0.7, gamma_hi = 1.4;
  double brightness_range = 0.2;
  double contrast_lo = 0.8, contrast_hi = 1.25;
  double saturation_lo = 0.5, saturation_hi = 1.5;
  double grayscale_prob = 0.15;
  // blur strength
  double blur_lo = 0.5, blur_hi = 2.0;
};

// Uniform draw over the four kinds (weights configurable); parameters are
// sampled once per clip so transforms stay temporally uniform. Style hooks
// are drawn from the registry; with an empty registry the neural_style
// slot falls back to real.
AugmentationGroup sample_group(Rng& rng, const MixtureConfig& cfg = {},
                               const StyleRegistry* styles = nullptr);

struct TrainingPair {
  FeatureGrid features;   // computed on the pre-augmentation frames
  Tensor target_latents;  // encoded from the augmented frames
  AugKind group = AugKind::real;
  std::string style_keyword;
  bool features_pre_augmentation = false;
};

TrainingPair build_pair(const Tensor& video, const AugmentationGroup& group,
                        const ToyEncoder& encoder, const ToyVae& vae);

// Dataset directory convention: <root>/<clip_id>/frames/%06d.png plus an
// optional <root>/<clip_id>/features.cdkt; manifest.json lists clips.
struct ClipRef {
  std::string id;
  int frames = 0;
  std::string dir;
};

std::vector<ClipRef> load_dataset_manifest(const std::string& root);
Tensor load_clip_frames(const ClipRef& clip);
FeatureGrid load_or_encode_features(const ClipRef& clip, const ToyEncoder& encoder);
void write_clip(const std::string& root, const std::string& id, const Tensor& video);
void write_dataset_manifest(const std::string& root, const std::vector<ClipRef>& clips);

}  // namespace cdk
