#include <doctest.h>

#include "cdk/augmentation.hpp"
#include "cdk/util.hpp"
#include "oracles.hpp"

using namespace cdk;

namespace {

Tensor toy_video(Rng& rng, int64_t t = 5, int64_t h = 16, int64_t w = 16) {
  Tensor v = Tensor::randn({t, 3, h, w}, rng);
  for (int64_t i = 0; i < v.size(); ++i) v[i] = std::clamp(v[i] * 0.2f + 0.5f, 0.0f, 1.0f);
  return v;
}

uint32_t tensor_hash(const Tensor& t) {
  return crc32(t.data(), static_cast<size_t>(t.size()) * sizeof(float));
}

}  // namespace

TEST_CASE("photometric transforms") {
  Rng rng(1);
  Tensor video = toy_video(rng);

  SUBCASE("identity parameters leave the input unchanged") {
    PhotometricParams p;  // defaults are the identity
    CHECK(max_abs_diff(apply_photometric(video, p), video) == 0.0);
  }

  SUBCASE("grayscale equalizes the three channels") {
    PhotometricParams p;
    p.grayscale = true;
    Tensor out = apply_photometric(video, p);
    const int64_t hw = 16 * 16;
    for (int64_t t = 0; t < 5; ++t)
      for (int64_t i = 0; i < hw; ++i) {
        CHECK(out[(t * 3 + 0) * hw + i] == out[(t * 3 + 1) * hw + i]);
        CHECK(out[(t * 3 + 1) * hw + i] == out[(t * 3 + 2) * hw + i]);
      }

    // idempotence: grayscale of grayscale is grayscale
    Tensor twice = apply_photometric(out, p);
    CHECK(max_abs_diff(twice, out) < 1e-6);
  }

  SUBCASE("gamma 2 maps a constant 0.5 frame to 0.25") {
    Tensor half = Tensor::full({2, 3, 4, 4}, 0.5f);
    PhotometricParams p;
    p.gamma = 2.0;
    Tensor out = apply_photometric(half, p);
    for (int64_t i = 0; i < out.size(); ++i)
      CHECK(out[i] == doctest::Approx(0.25f).epsilon(1e-6));
  }

  SUBCASE("out-of-range input is rejected") {
    Tensor bad = video;
    bad[0] = 1.5f;
    CHECK_THROWS_AS(apply_photometric(bad, PhotometricParams{}), ContractError);
  }

  SUBCASE("hue rotation by a full turn is the identity") {
    PhotometricParams p;
    p.hue = 1.0;
    Tensor out = apply_photometric(video, p);
    CHECK(max_abs_diff(out, video) < 1e-5);
  }
}

TEST_CASE("blur: identity, constants, kernel mass") {
  Rng rng(2);
  Tensor video = toy_video(rng);

  CHECK(max_abs_diff(apply_blur(video, 0.0), video) == 0.0);

  Tensor flat = Tensor::full({2, 3, 8, 8}, 0.4f);
  Tensor blurred = apply_blur(flat, 1.3);
  for (int64_t i = 0; i < blurred.size(); ++i)
    CHECK(blurred[i] == doctest::Approx(0.4f).epsilon(1e-6));

  // a unit impulse reproduces the kernel; total mass 1 within 1e-6
  Tensor impulse({1, 1, 17, 17});
  impulse[8 * 17 + 8] = 1.0f;
  Tensor k = apply_blur(impulse, 1.0);
  double mass = 0.0;
  for (int64_t i = 0; i < k.size(); ++i) mass += k[i];
  CHECK(std::abs(mass - 1.0) < 1e-6);
  // symmetric and peaked at the center
  CHECK(k[8 * 17 + 8] > k[8 * 17 + 9]);
  CHECK(k[8 * 17 + 9] == doctest::Approx(k[8 * 17 + 7]).epsilon(1e-6));

  CHECK_THROWS_AS(apply_blur(video, -0.5), ContractError);
}

TEST_CASE("style registry hooks") {
  Rng rng(3);
  Tensor video = toy_video(rng);
  StyleRegistry reg;

  SUBCASE("unknown names list the registered hooks") {
    reg.register_hook("testtoon", [](const Tensor& v) { return v; });
    try {
      reg.apply(video, "paprika");
      CHECK(false);
    } catch (const ContractError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("paprika") != std::string::npos);
      CHECK(msg.find("testtoon") != std::string::npos);
    }
  }

  SUBCASE("a registered identity hook leaves frames unchanged") {
    reg.register_hook("identity", [](const Tensor& v) { return v; });
    CHECK(max_abs_diff(reg.apply(video, "identity"), video) == 0.0);
  }
}

TEST_CASE("mixture sampling rates and overrides") {
  StyleRegistry reg;
  reg.register_hook("testtoon", [](const Tensor& v) { return v; });

  SUBCASE("each kind lands near 1/4 over 10,000 seeded draws") {
    Rng rng(42);
    std::map<AugKind, int> counts;
    for (int i = 0; i < 10000; ++i) counts[sample_group(rng, {}, &reg).kind]++;
    for (auto kind : {AugKind::real, AugKind::photometric, AugKind::neural_style, AugKind::blur}) {
      double freq = counts[kind] / 10000.0;
      CHECK(freq >= 0.235);
      CHECK(freq <= 0.265);
    }
  }

  SUBCASE("same seed gives the same sequence") {
    Rng a(7), b(7);
    for (int i = 0; i < 50; ++i)
      CHECK(sample_group(a, {}, &reg).kind == sample_group(b, {}, &reg).kind);
  }

  SUBCASE("a real-only override always draws real") {
    MixtureConfig cfg;
    cfg.w_photometric = cfg.w_neural_style = cfg.w_blur = 0.0;
    Rng rng(9);
    for (int i = 0; i < 100; ++i) CHECK(sample_group(rng, cfg, &reg).kind == AugKind::real);
  }
}

TEST_CASE("training pairs: feature purity and keyword tagging") {
  Rng rng(4);
  Tensor video = toy_video(rng);
  ToyEncoder encoder(EncoderSpec{16, 8, 2.0});
  ToyVae vae(4);

  StyleRegistry reg;
  reg.register_hook("testtoon", [](const Tensor& v) {
    Tensor out = v;  // channel swap, frame-uniform by construction
    const int64_t hw = v.dim(2) * v.dim(3);
    for (int64_t t = 0; t < v.dim(0); ++t)
      for (int64_t i = 0; i < hw; ++i) {
        out[(t * 3 + 0) * hw + i] = v[(t * 3 + 2) * hw + i];
        out[(t * 3 + 2) * hw + i] = v[(t * 3 + 0) * hw + i];
      }
    return out;
  });

  AugmentationGroup real_group;
  real_group.kind = AugKind::real;
  real_group.transform = [](const Tensor& v) { return v; };

  AugmentationGroup gray_group;
  gray_group.kind = AugKind::photometric;
  PhotometricParams gray;
  gray.grayscale = true;
  gray_group.transform = [gray](const Tensor& v) { return apply_photometric(v, gray); };
  gray_group.style_keyword = "recolored";

  AugmentationGroup blur_group;
  blur_group.kind = AugKind::blur;
  blur_group.transform = [](const Tensor& v) { return apply_blur(v, 1.2); };
  blur_group.style_keyword = "soft focus";

  AugmentationGroup style_group;
  style_group.kind = AugKind::neural_style;
  style_group.transform = [&reg](const Tensor& v) { return reg.apply(v, "testtoon"); };
  style_group.style_keyword = "testtoon";

  TrainingPair p_real = build_pair(video, real_group, encoder, vae);
  TrainingPair p_gray = build_pair(video, gray_group, encoder, vae);
  TrainingPair p_blur = build_pair(video, blur_group, encoder, vae);
  TrainingPair p_style = build_pair(video, style_group, encoder, vae);

  SUBCASE("feature tensors are hash-identical across groups") {
    const uint32_t h = tensor_hash(p_real.features.data);
    CHECK(tensor_hash(p_gray.features.data) == h);
    CHECK(tensor_hash(p_blur.features.data) == h);
    CHECK(tensor_hash(p_style.features.data) == h);
    CHECK(p_real.features_pre_augmentation);
  }

  SUBCASE("target latents differ from the real group's") {
    CHECK(max_abs_diff(p_real.target_latents, vae.encode(video)) == 0.0);
    CHECK(max_abs_diff(p_gray.target_latents, p_real.target_latents) > 1e-6);
    CHECK(max_abs_diff(p_blur.target_latents, p_real.target_latents) > 1e-6);
    CHECK(max_abs_diff(p_style.target_latents, p_real.target_latents) > 1e-6);
  }

  SUBCASE("keywords are nonempty exactly for augmented groups") {
    CHECK(p_real.style_keyword.empty());
    CHECK(p_gray.style_keyword == "recolored");
    CHECK(p_blur.style_keyword == "soft focus");
    CHECK(p_style.style_keyword == "testtoon");
  }

  SUBCASE("two groups on the same clip share features but not latents") {
    // pairing oracle: same clip, same encoder -> identical features tensor
    CHECK(max_abs_diff(p_gray.features.data, p_style.features.data) == 0.0);
    CHECK(max_abs_diff(p_gray.target_latents, p_style.target_latents) > 1e-6);
  }
}

TEST_CASE("temporal uniformity: identical frames stay identical after augmentation") {
  Rng rng(5);
  Tensor one = toy_video(rng, 1);
  Tensor video({4, 3, 16, 16});
  for (int64_t t = 0; t < 4; ++t)
    std::copy_n(one.data(), one.size(), video.data() + t * one.size());

  Rng grng(6);
  StyleRegistry reg;
  reg.register_hook("testtoon", [](const Tensor& v) { return v; });
  for (int i = 0; i < 20; ++i) {
    AugmentationGroup group = sample_group(grng, {}, &reg);
    Tensor out = group.transform(video);
    const int64_t fe = 3 * 16 * 16;
    for (int64_t t = 1; t < 4; ++t)
      for (int64_t e = 0; e < fe; ++e) CHECK(out[t * fe + e] == out[e]);
  }
}

TEST_CASE("dataset round trip through the directory convention") {
  Rng rng(7);
  Tensor video = toy_video(rng);
  // quantize so the PNG round trip is exact
  for (int64_t i = 0; i < video.size(); ++i)
    video[i] = std::round(video[i] * 255.0f) / 255.0f;

  const std::string root = oracles::temp_dir("dataset");
  write_clip(root, "clip0", video);
  write_dataset_manifest(root, {{"clip0", 5, ""}});

  auto clips = load_dataset_manifest(root);
  REQUIRE(clips.size() == 1);
  CHECK(clips[0].id == "clip0");
  CHECK(clips[0].frames == 5);

  Tensor back = load_clip_frames(clips[0]);
  CHECK(max_abs_diff(back, video) < 1e-6);

  // features.cdkt sidecar takes precedence over re-encoding
  ToyEncoder encoder(EncoderSpec{16, 8, 2.0});
  FeatureGrid computed = encoder.encode_frames(back);
  save_features(computed, root + "/clip0/features.cdkt");
  FeatureGrid loaded = load_or_encode_features(clips[0], encoder);
  CHECK(loaded.source == FeatureSource::file);
  CHECK(max_abs_diff(loaded.data, computed.data) == 0.0);
}
