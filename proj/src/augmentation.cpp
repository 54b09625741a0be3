#include "cdk/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "cdk/error.hpp"
#include "cdk/png_io.hpp"

namespace fs = std::filesystem;

namespace cdk {

const char* aug_kind_name(AugKind k) {
  switch (k) {
    case AugKind::real: return "real";
    case AugKind::photometric: return "photometric";
    case AugKind::neural_style: return "neural_style";
    case AugKind::blur: return "blur";
  }
  return "?";
}

namespace {

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  float mx = std::max({r, g, b}), mn = std::min({r, g, b});
  v = mx;
  float d = mx - mn;
  s = mx > 0.0f ? d / mx : 0.0f;
  if (d == 0.0f) {
    h = 0.0f;
  } else if (mx == r) {
    h = std::fmod((g - b) / d, 6.0f);
  } else if (mx == g) {
    h = (b - r) / d + 2.0f;
  } else {
    h = (r - g) / d + 4.0f;
  }
  h /= 6.0f;
  if (h < 0.0f) h += 1.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  h = h - std::floor(h);
  float c = v * s;
  float hh = h * 6.0f;
  float x = c * (1.0f - std::abs(std::fmod(hh, 2.0f) - 1.0f));
  float m = v - c;
  float rr = 0, gg = 0, bb = 0;
  if (hh < 1) { rr = c; gg = x; }
  else if (hh < 2) { rr = x; gg = c; }
  else if (hh < 3) { gg = c; bb = x; }
  else if (hh < 4) { gg = x; bb = c; }
  else if (hh < 5) { rr = x; bb = c; }
  else { rr = c; bb = x; }
  r = rr + m;
  g = gg + m;
  b = bb + m;
}

inline float luma(float r, float g, float b) {
  return 0.299f * r + 0.587f * g + 0.114f * b;
}

}  // namespace

Tensor apply_photometric(const Tensor& video, const PhotometricParams& p) {
  require(video.rank() == 4 && video.dim(1) == 3, "photometric: video must be [T,3,H,W]");
  for (int64_t i = 0; i < video.size(); ++i)
    require(video[i] >= 0.0f && video[i] <= 1.0f,
            "photometric: pixel values must lie in [0,1]");

  const int64_t T = video.dim(0), H = video.dim(2), W = video.dim(3);
  const int64_t hw = H * W;
  Tensor out = video;
  for (int64_t t = 0; t < T; ++t) {
    float* rp = out.data() + (t * 3 + 0) * hw;
    float* gp = out.data() + (t * 3 + 1) * hw;
    float* bp = out.data() + (t * 3 + 2) * hw;
    for (int64_t i = 0; i < hw; ++i) {
      float r = rp[i], g = gp[i], b = bp[i];
      if (p.hue != 0.0) {
        float h, s, v;
        rgb_to_hsv(r, g, b, h, s, v);
        hsv_to_rgb(h + static_cast<float>(p.hue), s, v, r, g, b);
      }
      if (p.saturation != 1.0) {
        float y = luma(r, g, b);
        r = y + static_cast<float>(p.saturation) * (r - y);
        g = y + static_cast<float>(p.saturation) * (g - y);
        b = y + static_cast<float>(p.saturation) * (b - y);
      }
      if (p.brightness != 0.0) {
        r += static_cast<float>(p.brightness);
        g += static_cast<float>(p.brightness);
        b += static_cast<float>(p.brightness);
      }
      if (p.contrast != 1.0) {
        r = 0.5f + static_cast<float>(p.contrast) * (r - 0.5f);
        g = 0.5f + static_cast<float>(p.contrast) * (g - 0.5f);
        b = 0.5f + static_cast<float>(p.contrast) * (b - 0.5f);
      }
      r = std::clamp(r, 0.0f, 1.0f);
      g = std::clamp(g, 0.0f, 1.0f);
      b = std::clamp(b, 0.0f, 1.0f);
      if (p.gamma != 1.0) {
        r = std::pow(r, static_cast<float>(p.gamma));
        g = std::pow(g, static_cast<float>(p.gamma));
        b = std::pow(b, static_cast<float>(p.gamma));
      }
      if (p.grayscale) r = g = b = luma(r, g, b);
      rp[i] = std::clamp(r, 0.0f, 1.0f);
      gp[i] = std::clamp(g, 0.0f, 1.0f);
      bp[i] = std::clamp(b, 0.0f, 1.0f);
    }
  }
  return out;
}

Tensor apply_blur(const Tensor& video, double sigma) {
  require(video.rank() == 4, "blur: video must be [T,C,H,W]");
  require(sigma >= 0.0, "blur: sigma must be non-negative");
  if (sigma == 0.0) return video;

  const int64_t radius = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(3.0 * sigma)));
  std::vector<float> kernel(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int64_t i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[static_cast<size_t>(i + radius)] = static_cast<float>(v);
    sum += v;
  }
  for (auto& k : kernel) k = static_cast<float>(k / sum);

  const int64_t T = video.dim(0), C = video.dim(1), H = video.dim(2), W = video.dim(3);
  auto reflect = [](int64_t i, int64_t n) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i - 1;
      if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
  };

  Tensor out(video.shape());
  std::vector<float> tmp(static_cast<size_t>(H * W));
  for (int64_t t = 0; t < T; ++t)
    for (int64_t c = 0; c < C; ++c) {
      const float* src = video.data() + (t * C + c) * H * W;
      // horizontal
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          float acc = 0.0f;
          for (int64_t k = -radius; k <= radius; ++k)
            acc += kernel[static_cast<size_t>(k + radius)] * src[y * W + reflect(x + k, W)];
          tmp[static_cast<size_t>(y * W + x)] = acc;
        }
      // vertical
      float* dst = out.data() + (t * C + c) * H * W;
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          float acc = 0.0f;
          for (int64_t k = -radius; k <= radius; ++k)
            acc += kernel[static_cast<size_t>(k + radius)] * tmp[static_cast<size_t>(reflect(y + k, H) * W + x)];
          dst[y * W + x] = acc;
        }
    }
  return out;
}

void StyleRegistry::register_hook(const std::string& name, StyleTransform transform) {
  require(!name.empty(), "style hook name must be nonempty");
  hooks_[name] = std::move(transform);
}

bool StyleRegistry::has(const std::string& name) const { return hooks_.count(name) > 0; }

std::vector<std::string> StyleRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : hooks_) out.push_back(k);
  return out;
}

Tensor StyleRegistry::apply(const Tensor& video, const std::string& name) const {
  auto it = hooks_.find(name);
  if (it == hooks_.end()) {
    std::string known;
    for (const auto& [k, v] : hooks_) known += (known.empty() ? "" : ", ") + k;
    throw ContractError("unknown style '" + name + "'; registered styles: " +
                        (known.empty() ? "(none)" : known));
  }
  Tensor out = it->second(video);
  require(out.same_shape(video), "style hook '" + name + "' changed video shape");
  return out;
}

AugmentationGroup sample_group(Rng& rng, const MixtureConfig& cfg, const StyleRegistry* styles) {
  const double w[4] = {cfg.w_real, cfg.w_photometric, cfg.w_neural_style, cfg.w_blur};
  double total = w[0] + w[1] + w[2] + w[3];
  require(total > 0.0, "mixture weights must not all be zero");
  double u = rng.uniform() * total;
  int kind_idx = 3;
  for (int i = 0; i < 3; ++i) {
    if (u < w[i]) {
      kind_idx = i;
      break;
    }
    u -= w[i];
  }

  AugmentationGroup group;
  switch (kind_idx) {
    case 0: {
      group.kind = AugKind::real;
      group.transform = [](const Tensor& v) { return v; };
      break;
    }
    case 1: {
      group.kind = AugKind::photometric;
      PhotometricParams p;
      p.hue = rng.uniform(-cfg.hue_range, cfg.hue_range);
      p.saturation = rng.uniform(cfg.saturation_lo, cfg.saturation_hi);
      p.brightness = rng.uniform(-cfg.brightness_range, cfg.brightness_range);
      p.contrast = rng.uniform(cfg.contrast_lo, cfg.contrast_hi);
      p.gamma = rng.uniform(cfg.gamma_lo, cfg.gamma_hi);
      p.grayscale = rng.uniform() < cfg.grayscale_prob;
      group.params = {{"hue", p.hue},           {"saturation", p.saturation},
                      {"brightness", p.brightness}, {"contrast", p.contrast},
                      {"gamma", p.gamma},       {"grayscale", p.grayscale ? 1.0 : 0.0}};
      group.transform = [p](const Tensor& v) { return apply_photometric(v, p); };
      group.style_keyword = "recolored";
      break;
    }
    case 2: {
      std::vector<std::string> names = styles ? styles->names() : std::vector<std::string>{};
      if (names.empty()) {
        // no styles registered: fall back to the real group
        group.kind = AugKind::real;
        group.transform = [](const Tensor& v) { return v; };
        break;
      }
      group.kind = AugKind::neural_style;
      const std::string name = names[rng.uniform_int(names.size())];
      const StyleRegistry* reg = styles;
      group.transform = [reg, name](const Tensor& v) { return reg->apply(v, name); };
      group.style_keyword = name;
      break;
    }
    default: {
      group.kind = AugKind::blur;
      double sigma = rng.uniform(cfg.blur_lo, cfg.blur_hi);
      group.params = {{"sigma", sigma}};
      group.transform = [sigma](const Tensor& v) { return apply_blur(v, sigma); };
      group.style_keyword = "soft focus";
      break;
    }
  }
  return group;
}

TrainingPair build_pair(const Tensor& video, const AugmentationGroup& group,
                        const ToyEncoder& encoder, const ToyVae& vae) {
  require(group.transform != nullptr, "augmentation group has no transform");
  TrainingPair pair;
  pair.group = group.kind;
  pair.style_keyword = group.style_keyword;

  // features always come from the unaugmented frames
  pair.features = encoder.encode_frames(video);
  pair.features_pre_augmentation = true;

  Tensor augmented = group.kind == AugKind::real ? video : group.transform(video);
  require(augmented.same_shape(video), "augmentation changed frame count or resolution");
  pair.target_latents = vae.encode(augmented);

  require(pair.style_keyword.empty() == (pair.group == AugKind::real),
          "style keyword must be nonempty exactly when the group is not real");
  return pair;
}

std::vector<ClipRef> load_dataset_manifest(const std::string& root) {
  const fs::path mpath = fs::path(root) / "manifest.json";
  std::ifstream f(mpath);
  if (!f) throw ParseError("dataset manifest not found: " + mpath.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw ParseError("invalid dataset manifest: " + std::string(e.what()));
  }
  require(j.contains("clips") && j["clips"].is_array(), "manifest must contain a clips array");
  std::vector<ClipRef> clips;
  for (const auto& c : j["clips"]) {
    ClipRef ref;
    ref.id = c.value("id", "");
    ref.frames = c.value("frames", 0);
    require(!ref.id.empty() && ref.frames > 0, "manifest clip entries need id and frames");
    ref.dir = (fs::path(root) / ref.id).string();
    clips.push_back(std::move(ref));
  }
  require(!clips.empty(), "dataset manifest lists no clips");
  return clips;
}

Tensor load_clip_frames(const ClipRef& clip) {
  Tensor video;
  for (int t = 0; t < clip.frames; ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06d.png", t);
    const fs::path p = fs::path(clip.dir) / "frames" / name;
    ImageU8 img = read_png(p.string());
    Tensor frame = image_to_frame(img);
    if (t == 0) video = Tensor({clip.frames, 3, frame.dim(1), frame.dim(2)});
    require(frame.dim(1) == video.dim(2) && frame.dim(2) == video.dim(3),
            "clip " + clip.id + " has inconsistent frame sizes");
    std::copy_n(frame.data(), frame.size(), video.data() + static_cast<int64_t>(t) * frame.size());
  }
  return video;
}

FeatureGrid load_or_encode_features(const ClipRef& clip, const ToyEncoder& encoder) {
  const fs::path fpath = fs::path(clip.dir) / "features.cdkt";
  if (fs::exists(fpath)) return load_features(fpath.string());
  return encoder.encode_frames(load_clip_frames(clip));
}

void write_clip(const std::string& root, const std::string& id, const Tensor& video) {
  require(video.rank() == 4 && video.dim(1) == 3, "write_clip: video must be [T,3,H,W]");
  const fs::path dir = fs::path(root) / id / "frames";
  fs::create_directories(dir);
  const int64_t hw = video.dim(2) * video.dim(3);
  for (int64_t t = 0; t < video.dim(0); ++t) {
    Tensor frame({3, video.dim(2), video.dim(3)});
    std::copy_n(video.data() + t * 3 * hw, 3 * hw, frame.data());
    char name[32];
    std::snprintf(name, sizeof(name), "%06d.png", static_cast<int>(t));
    write_png((dir / name).string(), frame_to_image(frame));
  }
}

void write_dataset_manifest(const std::string& root, const std::vector<ClipRef>& clips) {
  nlohmann::json j;
  j["clips"] = nlohmann::json::array();
  for (const auto& c : clips) j["clips"].push_back({{"id", c.id}, {"frames", c.frames}});
  std::ofstream f(fs::path(root) / "manifest.json");
  if (!f) throw ParseError("cannot write dataset manifest under " + root);
  f << j.dump(2) << "\n";
}

}  // namespace cdk
