#include "cdk/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "cdk/error.hpp"
#include "cdk/tensor_io.hpp"
#include "cdk/util.hpp"

namespace cdk {

void TrainConfig::validate() const {
  require(lr_peak > 0.0, "lr_peak must be positive");
  require(cond_dropout >= 0.0 && cond_dropout <= 1.0, "cond_dropout must lie in [0,1]");
  require(warmup_steps >= 0 && warmup_steps < total_steps,
          "warmup_steps must be smaller than total_steps");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(grad_clip > 0.0, "grad_clip must be positive");
}

double lr_at(int step, const TrainConfig& cfg) {
  require(step >= 0 && step <= cfg.total_steps,
          "lr_at: step " + std::to_string(step) + " outside [0," +
              std::to_string(cfg.total_steps) + "]");
  if (step <= cfg.warmup_steps) {
    if (cfg.warmup_steps == 0) return cfg.lr_peak;
    return cfg.lr_peak * static_cast<double>(step) / cfg.warmup_steps;
  }
  const double tau = static_cast<double>(step - cfg.warmup_steps) /
                     static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  return cfg.lr_peak * 0.5 * (1.0 + std::cos(3.14159265358979323846 * tau));
}

void AdamState::init(const ParamList<float>& params) {
  m.clear();
  v.clear();
  step = 0;
  for (const auto* p : params) {
    m.emplace_back(p->value.shape());
    v.emplace_back(p->value.shape());
  }
}

TrainerState TrainerState::create(const ModelConfig& mcfg, const TrainConfig& tcfg,
                                  uint64_t seed) {
  tcfg.validate();
  TrainerState st{Model::build(mcfg), tcfg, AdamState{}, 0, seed};
  st.opt.init(st.model.trainable_params());
  return st;
}

Rng step_rng(uint64_t base_seed, int step) {
  return Rng(base_seed).fork(0x1000 + static_cast<uint64_t>(step));
}

TrainMetrics train_step(TrainerState& state, const std::vector<TrainingPair>& batch, Rng& rng) {
  require(!batch.empty(), "train_step: empty batch");
  require(state.model.backbone.frozen(), "train_step: backbone must be frozen");
  state.tcfg.validate();

  auto trainable = state.model.trainable_params();
  require(state.opt.m.size() == trainable.size(), "optimizer state does not match parameters");
  for (auto* p : trainable) p->zero_grad();

  const NoiseSchedule sched = NoiseSchedule::cosine();
  const float inv_batch = 1.0f / static_cast<float>(batch.size());
  double loss_sum = 0.0;

  for (size_t i = 0; i < batch.size(); ++i) {
    const TrainingPair& pair = batch[i];
    require(pair.features_pre_augmentation,
            "train_step: pair features were not computed before augmentation");
    Rng srng = rng.fork(i);

    Tensor cond = conditioning_dropout(pair.features.data, state.tcfg.cond_dropout, srng);
    const double t = srng.uniform();
    Tensor eps = Tensor::randn(pair.target_latents.shape(), srng);

    const Tensor& z0 = pair.target_latents;
    Tensor first_frame({z0.dim(1), z0.dim(2), z0.dim(3)});
    std::copy_n(z0.data(), first_frame.size(), first_frame.data());

    Tensor text = text_embedding(build_prompt(state.tcfg.prompt, pair.style_keyword),
                                 state.model.cfg.backbone.text_dim);

    Graph g;
    auto loss = state.model.loss_g(g, z0, eps, t, text, &first_frame, &cond, nullptr, sched);
    const double loss_val = static_cast<double>(g.val(loss)[0]);
    if (!std::isfinite(loss_val))
      throw NumericError("train_step: non-finite loss at step " + std::to_string(state.step + 1) +
                         ", batch index " + std::to_string(i) + " (group " +
                         aug_kind_name(pair.group) + ")");
    loss_sum += loss_val;
    g.backward(loss, inv_batch);
  }

  // global-norm clipping over the trainable set
  double norm2 = 0.0;
  for (auto* p : trainable)
    for (int64_t k = 0; k < p->grad.size(); ++k)
      norm2 += static_cast<double>(p->grad[k]) * p->grad[k];
  double norm = std::sqrt(norm2);
  if (norm > state.tcfg.grad_clip && norm > 0.0) {
    const float scale = static_cast<float>(state.tcfg.grad_clip / norm);
    for (auto* p : trainable)
      for (int64_t k = 0; k < p->grad.size(); ++k) p->grad[k] *= scale;
    norm = state.tcfg.grad_clip;
  }

  state.step += 1;
  state.opt.step += 1;
  const double lr = lr_at(std::min(state.step, state.tcfg.total_steps), state.tcfg);
  const double bc1 = 1.0 - std::pow(state.tcfg.beta1, static_cast<double>(state.opt.step));
  const double bc2 = 1.0 - std::pow(state.tcfg.beta2, static_cast<double>(state.opt.step));
  for (size_t pi = 0; pi < trainable.size(); ++pi) {
    ParamT<float>& p = *trainable[pi];
    Tensor& m = state.opt.m[pi];
    Tensor& v = state.opt.v[pi];
    require(m.same_shape(p.value), "optimizer moment shape mismatch for " + p.name);
    for (int64_t k = 0; k < p.value.size(); ++k) {
      const double gk = static_cast<double>(p.grad[k]);
      const double mk = state.tcfg.beta1 * m[k] + (1.0 - state.tcfg.beta1) * gk;
      const double vk = state.tcfg.beta2 * v[k] + (1.0 - state.tcfg.beta2) * gk * gk;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double update = (mk / bc1) / (std::sqrt(vk / bc2) + 1e-8);
      double value = static_cast<double>(p.value[k]);
      value -= lr * (update + state.tcfg.weight_decay * value);
      p.value[k] = static_cast<float>(value);
    }
  }

  TrainMetrics metrics;
  metrics.step = state.step;
  metrics.loss = loss_sum / static_cast<double>(batch.size());
  metrics.grad_norm = norm;
  metrics.lr = lr;
  return metrics;
}

namespace {

nlohmann::json model_config_json(const ModelConfig& c) {
  nlohmann::json j;
  j["video"] = {{"frames", c.video_frames}, {"height", c.video_height}, {"width", c.video_width}};
  j["backbone"] = {{"num_blocks", c.backbone.num_blocks}, {"width", c.backbone.width},
                   {"patch", c.backbone.patch},           {"heads", c.backbone.heads},
                   {"text_dim", c.backbone.text_dim},     {"latent_channels", c.backbone.latent_channels},
                   {"time_dim", c.backbone.time_dim},     {"mlp_mult", c.backbone.mlp_mult},
                   {"use_pos_embed", c.backbone.use_pos_embed}};
  j["control"] = {{"blocks", c.control.blocks},
                  {"width", c.control.width},
                  {"scale", c.control.residual_scale},
                  {"spatial_mixing", c.control.spatial_mixing},
                  {"heads", c.control.heads},
                  {"mlp_mult", c.control.mlp_mult}};
  j["adapter"] = {{"hidden", c.adapter_hidden},
                  {"norm_groups", c.adapter_norm_groups},
                  {"replicate_past", c.adapter_replicate_past},
                  {"per_frame_stats", c.adapter_per_frame_stats}};
  j["encoder"] = {{"patch", c.encoder.patch},
                  {"feature_dim", c.encoder.feature_dim},
                  {"upscale", c.encoder.upscale}};
  j["seeds"] = {{"init", c.init_seed}, {"vae", c.vae_seed}, {"encoder", c.encoder_seed}};
  j["sample_steps"] = c.sample_steps;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.video_frames = j.at("video").at("frames").get<int64_t>();
  c.video_height = j.at("video").at("height").get<int64_t>();
  c.video_width = j.at("video").at("width").get<int64_t>();
  const auto& b = j.at("backbone");
  c.backbone.num_blocks = b.at("num_blocks").get<int64_t>();
  c.backbone.width = b.at("width").get<int64_t>();
  c.backbone.patch = b.at("patch").get<int64_t>();
  c.backbone.heads = b.at("heads").get<int64_t>();
  c.backbone.text_dim = b.at("text_dim").get<int64_t>();
  c.backbone.latent_channels = b.at("latent_channels").get<int64_t>();
  c.backbone.time_dim = b.at("time_dim").get<int64_t>();
  c.backbone.mlp_mult = b.at("mlp_mult").get<int64_t>();
  c.backbone.use_pos_embed = b.at("use_pos_embed").get<bool>();
  const auto& ct = j.at("control");
  c.control.blocks = ct.at("blocks").get<int64_t>();
  c.control.width = ct.at("width").get<int64_t>();
  c.control.residual_scale = ct.at("scale").get<double>();
  c.control.spatial_mixing = ct.at("spatial_mixing").get<bool>();
  c.control.heads = ct.at("heads").get<int64_t>();
  c.control.mlp_mult = ct.at("mlp_mult").get<int64_t>();
  const auto& a = j.at("adapter");
  c.adapter_hidden = a.at("hidden").get<int64_t>();
  c.adapter_norm_groups = a.at("norm_groups").get<int64_t>();
  c.adapter_replicate_past = a.at("replicate_past").get<bool>();
  c.adapter_per_frame_stats = a.at("per_frame_stats").get<bool>();
  const auto& e = j.at("encoder");
  c.encoder.patch = e.at("patch").get<int64_t>();
  c.encoder.feature_dim = e.at("feature_dim").get<int64_t>();
  c.encoder.upscale = e.at("upscale").get<double>();
  c.init_seed = j.at("seeds").at("init").get<uint64_t>();
  c.vae_seed = j.at("seeds").at("vae").get<uint64_t>();
  c.encoder_seed = j.at("seeds").at("encoder").get<uint64_t>();
  c.sample_steps = j.at("sample_steps").get<int>();
  return c;
}

nlohmann::json train_config_json(const TrainConfig& c) {
  return {{"lr_peak", c.lr_peak},       {"beta1", c.beta1},
          {"beta2", c.beta2},           {"warmup_steps", c.warmup_steps},
          {"batch_size", c.batch_size}, {"grad_clip", c.grad_clip},
          {"cond_dropout", c.cond_dropout}, {"total_steps", c.total_steps},
          {"weight_decay", c.weight_decay}, {"prompt", c.prompt}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr_peak = j.at("lr_peak").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.warmup_steps = j.at("warmup_steps").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.grad_clip = j.at("grad_clip").get<double>();
  c.cond_dropout = j.at("cond_dropout").get<double>();
  c.total_steps = j.at("total_steps").get<int>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.prompt = j.at("prompt").get<std::string>();
  return c;
}

constexpr char kArchiveMagic[8] = {'C', 'D', 'K', 'A', '0', '0', '0', '1'};

}  // namespace

void save_checkpoint(TrainerState& state, const std::string& path) {
  auto params = state.model.all_params();
  auto trainable = state.model.trainable_params();
  require(state.opt.m.size() == trainable.size(), "optimizer state does not match parameters");

  // payload: concatenated tensor blobs; manifest records offsets + CRCs
  std::vector<uint8_t> payload;
  nlohmann::json tensors = nlohmann::json::array();
  auto append = [&payload, &tensors](const std::string& name, const Tensor& t) {
    std::vector<uint8_t> blob = tensor_bytes(t);
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["offset"] = payload.size();
    e["size"] = blob.size();
    e["crc32"] = crc32(blob.data(), blob.size());
    tensors.push_back(e);
    payload.insert(payload.end(), blob.begin(), blob.end());
  };
  for (auto* p : params) append(p->name, p->value);
  for (size_t i = 0; i < trainable.size(); ++i) {
    append("opt.m." + trainable[i]->name, state.opt.m[i]);
    append("opt.v." + trainable[i]->name, state.opt.v[i]);
  }

  nlohmann::json manifest;
  manifest["model"] = model_config_json(state.model.cfg);
  manifest["train"] = train_config_json(state.tcfg);
  manifest["step"] = state.step;
  manifest["opt_step"] = state.opt.step;
  manifest["base_seed"] = state.base_seed;
  manifest["tensors"] = tensors;
  const std::string ms = manifest.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open checkpoint for writing: " + path);
  f.write(kArchiveMagic, 8);
  uint32_t mlen = static_cast<uint32_t>(ms.size());
  unsigned char lenb[4] = {static_cast<unsigned char>(mlen & 0xff),
                           static_cast<unsigned char>((mlen >> 8) & 0xff),
                           static_cast<unsigned char>((mlen >> 16) & 0xff),
                           static_cast<unsigned char>((mlen >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(lenb), 4);
  f.write(ms.data(), static_cast<std::streamsize>(ms.size()));
  f.write(reinterpret_cast<const char*>(payload.data()),
          static_cast<std::streamsize>(payload.size()));
  if (!f) throw ParseError("checkpoint write failed: " + path);
}

TrainerState load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kArchiveMagic, 8) != 0)
    throw ParseError("checkpoint has bad magic (expected CDKA0001): " + path);
  unsigned char lenb[4];
  f.read(reinterpret_cast<char*>(lenb), 4);
  if (!f) throw ParseError("checkpoint truncated in manifest length: " + path);
  const uint32_t mlen = static_cast<uint32_t>(lenb[0]) | (static_cast<uint32_t>(lenb[1]) << 8) |
                        (static_cast<uint32_t>(lenb[2]) << 16) |
                        (static_cast<uint32_t>(lenb[3]) << 24);
  std::string ms(mlen, '\0');
  f.read(ms.data(), mlen);
  if (!f) throw ParseError("checkpoint truncated in manifest: " + path);
  std::vector<uint8_t> payload((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(ms);
  } catch (const std::exception& e) {
    throw ParseError("checkpoint manifest is not valid JSON: " + std::string(e.what()));
  }

  // stage and verify every tensor before touching the model
  std::map<std::string, Tensor> staged;
  for (const auto& e : manifest.at("tensors")) {
    const std::string name = e.at("name").get<std::string>();
    const size_t offset = e.at("offset").get<size_t>();
    const size_t size = e.at("size").get<size_t>();
    if (offset + size > payload.size())
      throw ParseError("checkpoint data section truncated at tensor " + name);
    const uint32_t want_crc = e.at("crc32").get<uint32_t>();
    if (crc32(payload.data() + offset, size) != want_crc)
      throw ParseError("checkpoint tensor failed checksum: " + name);
    Tensor t = tensor_from_bytes(payload.data() + offset, size);
    const auto want_shape = e.at("shape").get<std::vector<int64_t>>();
    if (t.shape() != want_shape)
      throw ParseError("checkpoint tensor shape mismatch: " + name);
    staged.emplace(name, std::move(t));
  }

  TrainerState state{Model::build(model_config_from_json(manifest.at("model"))),
                     train_config_from_json(manifest.at("train")), AdamState{},
                     manifest.at("step").get<int>(), manifest.at("base_seed").get<uint64_t>()};

  auto install = [&staged](const std::string& name, Tensor& dst) {
    auto it = staged.find(name);
    if (it == staged.end()) throw ParseError("checkpoint is missing tensor " + name);
    if (!it->second.same_shape(dst))
      throw ParseError("checkpoint tensor " + name + " has shape " +
                       Tensor::shape_str(it->second.shape()) + ", model expects " +
                       Tensor::shape_str(dst.shape()));
    dst = it->second;
  };
  for (auto* p : state.model.all_params()) install(p->name, p->value);
  auto trainable = state.model.trainable_params();
  state.opt.init(trainable);
  state.opt.step = manifest.at("opt_step").get<int64_t>();
  for (size_t i = 0; i < trainable.size(); ++i) {
    install("opt.m." + trainable[i]->name, state.opt.m[i]);
    install("opt.v." + trainable[i]->name, state.opt.v[i]);
  }
  return state;
}

RunConfig parse_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r\n");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r\n");
      return s.substr(b, e - b + 1);
    };
    line = strip(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("config line " + std::to_string(lineno) + " is not key=value: " + line);
    kv[strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
  }

  RunConfig rc;
  auto geti = [&kv](const std::string& key, int64_t& out) {
    if (auto it = kv.find(key); it != kv.end()) {
      out = std::stoll(it->second);
      kv.erase(it);
    }
  };
  auto getd = [&kv](const std::string& key, double& out) {
    if (auto it = kv.find(key); it != kv.end()) {
      out = std::stod(it->second);
      kv.erase(it);
    }
  };
  auto getb = [&kv](const std::string& key, bool& out) {
    if (auto it = kv.find(key); it != kv.end()) {
      out = it->second == "true" || it->second == "1";
      kv.erase(it);
    }
  };
  auto gets = [&kv](const std::string& key, std::string& out) {
    if (auto it = kv.find(key); it != kv.end()) {
      out = it->second;
      kv.erase(it);
    }
  };

  geti("video.frames", rc.model.video_frames);
  geti("video.height", rc.model.video_height);
  geti("video.width", rc.model.video_width);
  geti("backbone.blocks", rc.model.backbone.num_blocks);
  geti("backbone.width", rc.model.backbone.width);
  geti("backbone.patch", rc.model.backbone.patch);
  geti("backbone.heads", rc.model.backbone.heads);
  geti("backbone.text_dim", rc.model.backbone.text_dim);
  geti("backbone.latent_channels", rc.model.backbone.latent_channels);
  geti("backbone.time_dim", rc.model.backbone.time_dim);
  geti("backbone.mlp_mult", rc.model.backbone.mlp_mult);
  getb("backbone.pos_embed", rc.model.backbone.use_pos_embed);
  geti("control.blocks", rc.model.control.blocks);
  geti("control.width", rc.model.control.width);
  getd("control.scale", rc.model.control.residual_scale);
  getb("control.spatial_mixing", rc.model.control.spatial_mixing);
  geti("control.heads", rc.model.control.heads);
  geti("control.mlp_mult", rc.model.control.mlp_mult);
  geti("adapter.hidden", rc.model.adapter_hidden);
  geti("adapter.norm_groups", rc.model.adapter_norm_groups);
  getb("adapter.replicate_past", rc.model.adapter_replicate_past);
  getb("adapter.per_frame_stats", rc.model.adapter_per_frame_stats);
  geti("encoder.patch", rc.model.encoder.patch);
  geti("encoder.feature_dim", rc.model.encoder.feature_dim);
  getd("encoder.upscale", rc.model.encoder.upscale);
  int64_t steps = rc.model.sample_steps;
  geti("sample_steps", steps);
  rc.model.sample_steps = static_cast<int>(steps);
  int64_t seed_i = 0;
  geti("seed", seed_i);
  rc.seed = static_cast<uint64_t>(seed_i);
  int64_t init_seed = static_cast<int64_t>(rc.model.init_seed);
  geti("init_seed", init_seed);
  rc.model.init_seed = static_cast<uint64_t>(init_seed);

  getd("lr_peak", rc.train.lr_peak);
  getd("beta1", rc.train.beta1);
  getd("beta2", rc.train.beta2);
  int64_t warmup = rc.train.warmup_steps, batch = rc.train.batch_size,
          total = rc.train.total_steps;
  geti("warmup_steps", warmup);
  geti("batch_size", batch);
  geti("total_steps", total);
  rc.train.warmup_steps = static_cast<int>(warmup);
  rc.train.batch_size = static_cast<int>(batch);
  rc.train.total_steps = static_cast<int>(total);
  getd("grad_clip", rc.train.grad_clip);
  getd("cond_dropout", rc.train.cond_dropout);
  getd("weight_decay", rc.train.weight_decay);
  gets("prompt", rc.train.prompt);

  if (!kv.empty()) throw ParseError("config contains unknown key: " + kv.begin()->first);
  rc.train.validate();
  return rc;
}

}  // namespace cdk
