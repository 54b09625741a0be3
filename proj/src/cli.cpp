#include "cdk/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cdk/error.hpp"
#include "cdk/pca.hpp"
#include "cdk/png_io.hpp"
#include "cdk/tensor_io.hpp"
#include "cdk/voxel.hpp"

namespace fs = std::filesystem;

namespace cdk {

namespace {

Tensor quantize_video(const Tensor& video) {
  Tensor out(video.shape());
  for (int64_t i = 0; i < video.size(); ++i) {
    float v = std::round(std::clamp(video[i], 0.0f, 1.0f) * 255.0f);
    out[i] = v / 255.0f;
  }
  return out;
}

void write_video_frames(const Tensor& video, const std::string& dir, int64_t start_index,
                        int64_t first_frame) {
  fs::create_directories(dir);
  const int64_t hw = video.dim(2) * video.dim(3);
  for (int64_t t = first_frame; t < video.dim(0); ++t) {
    Tensor frame({3, video.dim(2), video.dim(3)});
    std::copy_n(video.data() + t * 3 * hw, 3 * hw, frame.data());
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%06d.png",
                  static_cast<int>(start_index + t - first_frame));
    write_png((fs::path(dir) / name).string(), frame_to_image(frame));
  }
}

Tensor load_first_frame(const std::string& path, int64_t height, int64_t width) {
  ImageU8 img = read_png(path);
  require(img.height == height && img.width == width,
          "first frame is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
              " but the model expects " + std::to_string(width) + "x" + std::to_string(height));
  return image_to_frame(img);
}

FeatureMatrix feature_matrix_from_file(const std::string& path) {
  Tensor t = load_tensor(path);
  if (t.rank() == 2) {
    FeatureGrid g;
    g.data = t.reshaped({1, t.dim(1), t.dim(0), 1});
    // rows are tokens already: transpose into [1,D,M,1] layout
    Tensor re({1, t.dim(1), t.dim(0), 1});
    for (int64_t m = 0; m < t.dim(0); ++m)
      for (int64_t d = 0; d < t.dim(1); ++d) re[d * t.dim(0) + m] = t[m * t.dim(1) + d];
    g.data = re;
    g.source = FeatureSource::file;
    return feature_matrix_from_grid(g);
  }
  require(t.rank() == 4, "feature file must be [M,D] or [T,D,h,w]: " + path);
  FeatureGrid g;
  g.data = t;
  g.source = FeatureSource::file;
  return feature_matrix_from_grid(g);
}

int cmd_train(const std::string& config_path, const std::string& data_root,
              const std::string& out_dir, uint64_t seed_override, bool has_seed) {
  RunConfig rc = parse_run_config(config_path);
  if (has_seed) rc.seed = seed_override;

  auto clips = load_dataset_manifest(data_root);
  TrainerState state = TrainerState::create(rc.model, rc.train, rc.seed);

  // feature purity lets us compute features once per clip
  std::vector<Tensor> clip_frames;
  std::vector<FeatureGrid> clip_features;
  for (const auto& clip : clips) {
    Tensor video = load_clip_frames(clip);
    require(video.dim(0) == rc.model.video_frames,
            "clip " + clip.id + " has " + std::to_string(video.dim(0)) +
                " frames, config expects " + std::to_string(rc.model.video_frames));
    require(video.dim(2) == rc.model.video_height && video.dim(3) == rc.model.video_width,
            "clip " + clip.id + " resolution does not match config");
    clip_features.push_back(load_or_encode_features(clip, state.model.encoder));
    clip_frames.push_back(std::move(video));
  }

  StyleRegistry styles;  // neural styles are external; none registered by default
  fs::create_directories(out_dir);
  std::ofstream metrics_file(fs::path(out_dir) / "metrics.jsonl");
  require(static_cast<bool>(metrics_file), "cannot write metrics under " + out_dir);

  for (int step = state.step; step < rc.train.total_steps; ++step) {
    Rng srng = step_rng(state.base_seed, step);
    std::vector<TrainingPair> batch;
    for (int b = 0; b < rc.train.batch_size; ++b) {
      Rng brng = srng.fork(500 + static_cast<uint64_t>(b));
      const size_t ci = clips.size() == 1 ? 0 : brng.uniform_int(clips.size());
      AugmentationGroup group = sample_group(brng, {}, &styles);
      TrainingPair pair = build_pair(clip_frames[ci], group, state.model.encoder,
                                     state.model.vae);
      // reuse the cached feature grid; pairing keeps it augmentation-free
      pair.features = clip_features[ci];
      pair.features_pre_augmentation = true;
      batch.push_back(std::move(pair));
    }
    Rng trng = srng.fork(1);
    TrainMetrics m = train_step(state, batch, trng);
    nlohmann::json line = {
        {"step", m.step}, {"loss", m.loss}, {"grad_norm", m.grad_norm}, {"lr", m.lr}};
    metrics_file << line.dump() << "\n";
    if (m.step % 50 == 0 || m.step == rc.train.total_steps)
      std::cout << "step " << m.step << " loss " << m.loss << " lr " << m.lr << std::endl;
  }
  save_checkpoint(state, (fs::path(out_dir) / "checkpoint.cdka").string());
  std::cout << "checkpoint written to " << (fs::path(out_dir) / "checkpoint.cdka").string()
            << std::endl;
  return 0;
}

struct InferArgs {
  std::string checkpoint, features, first_frame, out_dir, prompt, style, mask;
  double scale = 0.8;
  double cfg = 1.0;
  int steps = 0;
  uint64_t seed = 0;
  bool drop_first_frame = false;
};

int cmd_infer(const InferArgs& a) {
  require(!(a.prompt.empty() && !a.style.empty()),
          "a style keyword needs a non-empty base prompt");
  TrainerState state = load_checkpoint(a.checkpoint);
  Model& model = state.model;

  Tensor features = load_features(a.features).data;
  require(features.dim(0) == model.cfg.video_frames,
          "feature tensor temporal length " + std::to_string(features.dim(0)) +
              " does not equal the block frame count " + std::to_string(model.cfg.video_frames));

  Tensor mask;
  if (!a.mask.empty()) {
    Tensor mask_hi = load_tensor(a.mask);  // [T,1,h,w] at conditioning resolution
    require(mask_hi.rank() == 4 && mask_hi.dim(0) == model.cfg.video_frames &&
                mask_hi.dim(1) == 1,
            "mask must be [T,1,h,w] with T == block frames");
    mask = mask_to_token_grid(mask_hi, model);
  }

  Tensor first_frame_rgb;
  if (!a.drop_first_frame) {
    require(!a.first_frame.empty(), "provide --first-frame or pass --drop-first-frame");
    first_frame_rgb = load_first_frame(a.first_frame, model.cfg.video_height,
                                       model.cfg.video_width);
  }

  GenerateOptions opt;
  opt.prompt = build_prompt(a.prompt, a.style);
  opt.scale = a.scale;
  opt.cfg = a.cfg;
  opt.steps = a.steps;
  opt.drop_first_frame = a.drop_first_frame;

  Rng rng(a.seed);
  Tensor video = generate_block(model, features, mask.empty() ? nullptr : &mask,
                                first_frame_rgb.empty() ? nullptr : &first_frame_rgb, opt, rng);
  write_video_frames(video, a.out_dir, 0, 0);
  std::cout << "wrote " << video.dim(0) << " frames to " << a.out_dir << std::endl;
  return 0;
}

struct RolloutArgs {
  std::string checkpoint, blocks_dir, first_frame, out_dir, prompt, style;
  int num_blocks = 1;
  double scale = 0.8;
  double cfg = 1.0;
  int steps = 0;
  uint64_t seed = 0;
};

int cmd_rollout(const RolloutArgs& a) {
  require(a.num_blocks >= 1, "rollout needs at least one block");
  require(!(a.prompt.empty() && !a.style.empty()),
          "a style keyword needs a non-empty base prompt");
  TrainerState state = load_checkpoint(a.checkpoint);
  Model& model = state.model;
  const int64_t block_frames = model.cfg.video_frames;

  // all block feature files must be present up front
  std::vector<std::string> feature_files;
  for (int k = 0; k < a.num_blocks; ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "block_%03d.cdkt", k);
    const fs::path p = fs::path(a.blocks_dir) / name;
    if (!fs::exists(p))
      throw ContractError("missing feature file for block " + std::to_string(k) + ": " +
                          p.string());
    feature_files.push_back(p.string());
  }

  GenerateOptions opt;
  opt.prompt = build_prompt(a.prompt, a.style);
  opt.scale = a.scale;
  opt.cfg = a.cfg;
  opt.steps = a.steps;

  Tensor boundary_frame = load_first_frame(a.first_frame, model.cfg.video_height,
                                           model.cfg.video_width);
  Rng rng(a.seed);
  const int64_t hw = model.cfg.video_height * model.cfg.video_width;
  int64_t written = 0;
  for (int k = 0; k < a.num_blocks; ++k) {
    Tensor features = load_features(feature_files[static_cast<size_t>(k)]).data;
    require(features.dim(0) == block_frames,
            "block " + std::to_string(k) + " feature length does not match " +
                std::to_string(block_frames));
    char mask_name[40];
    std::snprintf(mask_name, sizeof(mask_name), "block_%03d.mask.cdkt", k);
    Tensor mask;
    if (fs::exists(fs::path(a.blocks_dir) / mask_name))
      mask = mask_to_token_grid(load_tensor((fs::path(a.blocks_dir) / mask_name).string()),
                                model);

    Rng block_rng = rng.fork(static_cast<uint64_t>(k));
    Tensor video = generate_block(model, features, mask.empty() ? nullptr : &mask,
                                  &boundary_frame, opt, block_rng);
    // later blocks drop their first frame; it is the shared boundary
    const int64_t skip = k == 0 ? 0 : 1;
    write_video_frames(video, a.out_dir, written, skip);
    written += video.dim(0) - skip;

    boundary_frame = Tensor({3, model.cfg.video_height, model.cfg.video_width});
    std::copy_n(video.data() + (block_frames - 1) * 3 * hw, 3 * hw, boundary_frame.data());
  }
  std::cout << "wrote " << written << " frames to " << a.out_dir << std::endl;
  return 0;
}

int cmd_render_features(const std::string& cloud_path, const std::string& cloud_features,
                        const std::string& cameras_path, const std::string& out_dir,
                        double voxel_size, const std::string& mode, double radius_px,
                        int64_t out_h, int64_t out_w) {
  FeaturePointCloud cloud = load_point_cloud(cloud_path, cloud_features);
  std::vector<Camera> cameras = load_cameras_json(cameras_path);
  require(!cameras.empty(), "no cameras given");

  const int64_t h = out_h > 0 ? out_h : cameras.front().height;
  const int64_t w = out_w > 0 ? out_w : cameras.front().width;
  const int64_t T = static_cast<int64_t>(cameras.size());
  const int64_t D = cloud.feature_dim();

  FeatureVoxelGrid grid;
  if (mode == "voxel") grid = voxelize(cloud, voxel_size);

  Tensor features({T, D, h, w});
  Tensor mask({T, 1, h, w});
  for (int64_t t = 0; t < T; ++t) {
    RenderedConditioning rc = mode == "voxel"
                                  ? render_voxels(grid, cameras[static_cast<size_t>(t)], h, w)
                                  : render_points(cloud, cameras[static_cast<size_t>(t)], h, w,
                                                  radius_px);
    std::copy_n(rc.features.data.data(), D * h * w, features.data() + t * D * h * w);
    std::copy_n(rc.mask.data(), h * w, mask.data() + t * h * w);
  }

  fs::create_directories(out_dir);
  save_tensor(features, (fs::path(out_dir) / "features.cdkt").string());
  save_tensor(mask, (fs::path(out_dir) / "mask.cdkt").string());
  std::cout << "rendered " << T << " frames (" << (mode == "voxel" ? grid.cells.size() : 0)
            << " voxels) to " << out_dir << std::endl;
  return 0;
}

int cmd_pca_analyze(const std::string& real_path, const std::string& styled_path,
                    const std::string& basis_name, int64_t k, int64_t k_style,
                    const std::string& out_path, uint64_t seed) {
  FeatureMatrix f_real = feature_matrix_from_file(real_path);
  FeatureMatrix f_style = feature_matrix_from_file(styled_path);

  const BasisKind kind = basis_kind_from_name(basis_name);
  ProjectionBasis basis;
  switch (kind) {
    case BasisKind::standard_pca: basis = standard_pca(f_real, k); break;
    case BasisKind::style_invariant:
      basis = style_invariant_basis(f_real, f_style, k_style, k);
      break;
    case BasisKind::bottom_eigen: basis = bottom_eigen_basis(f_real, k); break;
    case BasisKind::random_orthogonal: {
      Rng rng(seed);
      basis = random_orthogonal_basis(f_real.rows.cols(), k, rng);
      break;
    }
  }
  DisentanglementReport rep = disentanglement_report(f_real, f_style, basis);

  nlohmann::json j = {{"basis_kind", basis_kind_name(kind)},
                      {"K", k},
                      {"cosine_similarity", rep.cosine_similarity},
                      {"explained_variance_pct", rep.explained_variance_pct},
                      {"excluded_rows", rep.excluded_rows}};
  if (out_path.empty()) {
    std::cout << j.dump(2) << std::endl;
  } else {
    std::ofstream f(out_path);
    require(static_cast<bool>(f), "cannot write report: " + out_path);
    f << j.dump(2) << "\n";
  }
  return 0;
}

int cmd_encode_features(const std::string& frames_dir, const std::string& out_path,
                        int64_t patch, int64_t dim, double upscale) {
  std::vector<fs::path> frames;
  for (int t = 0;; ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06d.png", t);
    fs::path p = fs::path(frames_dir) / name;
    if (!fs::exists(p)) break;
    frames.push_back(p);
  }
  require(!frames.empty(), "no %06d.png frames found under " + frames_dir);

  Tensor video;
  for (size_t t = 0; t < frames.size(); ++t) {
    Tensor frame = image_to_frame(read_png(frames[t].string()));
    if (t == 0) video = Tensor({static_cast<int64_t>(frames.size()), 3, frame.dim(1), frame.dim(2)});
    require(frame.dim(1) == video.dim(2) && frame.dim(2) == video.dim(3),
            "frame sizes are inconsistent under " + frames_dir);
    std::copy_n(frame.data(), frame.size(), video.data() + static_cast<int64_t>(t) * frame.size());
  }

  ToyEncoder encoder(EncoderSpec{patch, dim, upscale});
  FeatureGrid grid = encoder.encode_frames(video);
  save_features(grid, out_path);
  std::cout << "encoded " << grid.frames() << " frames to " << Tensor::shape_str(grid.data.shape())
            << " at " << out_path << std::endl;
  return 0;
}

}  // namespace

Tensor mask_to_token_grid(const Tensor& mask_hi, const Model& model) {
  const TokenGrid grid = model.backbone.grid();
  require(mask_hi.rank() == 4 && mask_hi.dim(1) == 1, "mask must be [T,1,h,w]");
  const int64_t T = mask_hi.dim(0), H = mask_hi.dim(2), W = mask_hi.dim(3);
  require(T == model.cfg.video_frames, "mask temporal length mismatch");

  Tensor out({grid.t, 1, grid.h, grid.w});
  for (int64_t tl = 0; tl < grid.t; ++tl) {
    const int64_t t0 = tl == 0 ? 0 : 1 + (tl - 1) * ToyVae::kTemporal;
    const int64_t tn = tl == 0 ? 1 : ToyVae::kTemporal;
    // mean over the temporal group at full resolution, then pool+threshold
    Tensor group_mean({H, W});
    for (int64_t dt = 0; dt < tn; ++dt)
      for (int64_t i = 0; i < H * W; ++i)
        group_mean[i] += mask_hi[(t0 + dt) * H * W + i] / static_cast<float>(tn);
    Tensor tok = mask_to_latent(group_mean, grid.h, grid.w);
    std::copy_n(tok.data(), grid.h * grid.w, out.data() + tl * grid.h * grid.w);
  }
  return out;
}

Tensor generate_block(Model& model, const Tensor& features, const Tensor* mask,
                      const Tensor* first_frame_rgb, const GenerateOptions& opt, Rng& rng) {
  const ModelConfig& cfg = model.cfg;
  const NoiseSchedule sched = NoiseSchedule::cosine();
  const int steps = opt.steps > 0 ? opt.steps : cfg.sample_steps;

  Tensor text = text_embedding(opt.prompt, cfg.backbone.text_dim);

  Tensor ff_latent;
  if (first_frame_rgb && !opt.drop_first_frame) {
    Tensor one_frame({1, 3, cfg.video_height, cfg.video_width});
    std::copy_n(first_frame_rgb->data(), first_frame_rgb->size(), one_frame.data());
    ff_latent = model.vae.encode(one_frame);  // [1,C,h,w]
  }

  if (!features.empty()) model.validate_features(features);
  Tensor zero_features(features.empty() ? std::vector<int64_t>{0} : features.shape());

  Denoiser denoiser = [&](const Tensor& z, double t, const Tensor&) {
    const Tensor* ff = ff_latent.empty() ? nullptr : &ff_latent;
    Tensor v_cond = model.denoise_conditioned(z, t, text, ff,
                                              features.empty() ? nullptr : &features, mask,
                                              opt.scale);
    if (opt.cfg == 1.0 || features.empty()) return v_cond;
    Tensor v_uncond =
        model.denoise_conditioned(z, t, text, ff, &zero_features, mask, opt.scale);
    for (int64_t i = 0; i < v_cond.size(); ++i)
      v_cond[i] = v_uncond[i] + static_cast<float>(opt.cfg) * (v_cond[i] - v_uncond[i]);
    return v_cond;
  };

  Tensor z_T = Tensor::randn({cfg.latent_frames(), cfg.backbone.latent_channels,
                              cfg.latent_h(), cfg.latent_w()}, rng);
  Tensor z0 = sample(denoiser, z_T, Tensor{}, steps, sched);
  return quantize_video(model.vae.decode(z0));
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("cdk");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"feature-conditioned video diffusion toolkit"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "train the conditioning pathway");
  std::string config_path, data_root, out_dir = "runs/out";
  uint64_t seed = 0;
  bool has_seed = false;
  train->add_option("--config", config_path, "key=value config file")->required();
  train->add_option("--data-root", data_root, "dataset root with manifest.json")->required();
  train->add_option("--out-dir", out_dir, "output directory");
  train->add_option("--seed", seed, "run seed")->each([&](const std::string&) { has_seed = true; });

  // infer
  auto* infer = app.add_subcommand("infer", "generate one block of frames");
  InferArgs ia;
  infer->add_option("--checkpoint", ia.checkpoint)->required();
  infer->add_option("--features", ia.features, "conditioning tensor file")->required();
  infer->add_option("--first-frame", ia.first_frame, "PNG conditioning frame");
  infer->add_option("--out-dir", ia.out_dir)->required();
  infer->add_option("--prompt", ia.prompt);
  infer->add_option("--style", ia.style, "style keyword appended to the prompt");
  infer->add_option("--mask", ia.mask, "conditioning-resolution mask tensor");
  infer->add_option("--scale", ia.scale, "residual scale");
  infer->add_option("--cfg", ia.cfg, "guidance weight");
  infer->add_option("--steps", ia.steps, "sampler steps (0 = config)");
  infer->add_option("--seed", ia.seed);
  infer->add_flag("--drop-first-frame", ia.drop_first_frame,
                  "condition on text and features only");

  // rollout
  auto* rollout = app.add_subcommand("rollout", "autoregressive multi-block generation");
  RolloutArgs ra;
  rollout->add_option("--checkpoint", ra.checkpoint)->required();
  rollout->add_option("--feature-blocks-dir", ra.blocks_dir, "directory of block_%03d.cdkt")
      ->required();
  rollout->add_option("--first-frame", ra.first_frame)->required();
  rollout->add_option("--out-dir", ra.out_dir)->required();
  rollout->add_option("--num-blocks", ra.num_blocks)->required();
  rollout->add_option("--prompt", ra.prompt);
  rollout->add_option("--style", ra.style);
  rollout->add_option("--scale", ra.scale);
  rollout->add_option("--cfg", ra.cfg);
  rollout->add_option("--steps", ra.steps);
  rollout->add_option("--seed", ra.seed);

  // render-features
  auto* render = app.add_subcommand("render-features", "render 3D features to view-space maps");
  std::string cloud_path, cloud_features, cameras_path, render_out, mode = "voxel";
  double voxel_size = 0.02, radius_px = 1.0;
  int64_t out_h = 0, out_w = 0;
  render->add_option("--cloud", cloud_path, "binary little-endian PLY")->required();
  render->add_option("--cloud-features", cloud_features, "row-paired [N,D] tensor")->required();
  render->add_option("--cameras", cameras_path, "JSON camera array")->required();
  render->add_option("--out-dir", render_out)->required();
  render->add_option("--voxel-size", voxel_size, "voxel edge length in meters");
  render->add_option("--mode", mode)->check(CLI::IsMember({"voxel", "points"}));
  render->add_option("--radius-px", radius_px, "point splat radius (points mode)");
  render->add_option("--out-h", out_h, "output rows (default camera height)");
  render->add_option("--out-w", out_w, "output cols (default camera width)");

  // pca-analyze
  auto* pca = app.add_subcommand("pca-analyze", "projection-basis disentanglement report");
  std::string real_path, styled_path, basis_name = "standard", report_out;
  int64_t k = 16, k_style = 16;
  uint64_t pca_seed = 0;
  pca->add_option("--real", real_path, "real feature tensor")->required();
  pca->add_option("--styled", styled_path, "styled feature tensor (row-paired)")->required();
  pca->add_option("--basis", basis_name)
      ->check(CLI::IsMember({"standard", "style-invariant", "bottom", "random"}));
  pca->add_option("--k", k, "basis components");
  pca->add_option("--k-style", k_style, "style directions to remove");
  pca->add_option("--out", report_out, "report path (default stdout)");
  pca->add_option("--seed", pca_seed, "seed for the random basis");

  // encode-features
  auto* enc = app.add_subcommand("encode-features", "run the built-in patch encoder");
  std::string frames_dir, enc_out;
  int64_t enc_patch = 16, enc_dim = 32;
  double enc_upscale = 2.0;
  enc->add_option("--frames-dir", frames_dir, "directory of %06d.png frames")->required();
  enc->add_option("--out", enc_out, "output tensor path")->required();
  enc->add_option("--patch", enc_patch);
  enc->add_option("--dim", enc_dim);
  enc->add_option("--upscale", enc_upscale);

  try {
    app.parse(argc, const_cast<char**>(argv));
    if (*train) return cmd_train(config_path, data_root, out_dir, seed, has_seed);
    if (*infer) return cmd_infer(ia);
    if (*rollout) return cmd_rollout(ra);
    if (*render)
      return cmd_render_features(cloud_path, cloud_features, cameras_path, render_out,
                                 voxel_size, mode, radius_px, out_h, out_w);
    if (*pca) return cmd_pca_analyze(real_path, styled_path, basis_name, k, k_style, report_out,
                                     pca_seed);
    if (*enc) return cmd_encode_features(frames_dir, enc_out, enc_patch, enc_dim, enc_upscale);
    std::cerr << "no subcommand given" << std::endl;
    return 2;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return 0;  // --help
    std::cerr << e.what() << std::endl;
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << std::endl;
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
}

}  // namespace cdk
