#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cdk/augmentation.hpp"
#include "cdk/model.hpp"

namespace cdk {

struct TrainConfig {
  double lr_peak = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  int warmup_steps = 500;
  int batch_size = 8;
  double grad_clip = 1.0;
  double cond_dropout = 0.1;
  int total_steps = 2000;
  double weight_decay = 0.0;
  std::string prompt = "a scene";

  void validate() const;
};

// Linear warmup 0 -> lr_peak over warmup_steps, then cosine decay to 0 at
// total_steps.
double lr_at(int step, const TrainConfig& cfg);

struct TrainMetrics {
  int step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;  // post-clip global norm
  double lr = 0.0;
};

// Decoupled-weight-decay Adam over the trainable parameters.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  int64_t step = 0;

  void init(const ParamList<float>& params);
};

struct TrainerState {
  Model model;
  TrainConfig tcfg;
  AdamState opt;
  int step = 0;
  uint64_t base_seed = 0;

  static TrainerState create(const ModelConfig& mcfg, const TrainConfig& tcfg, uint64_t seed);
};

// One optimizer step over a batch of pairs. Applies conditioning dropout,
// draws (t, eps) per sample, clips the global gradient norm, and updates
// only trainable parameters. The backbone must be frozen.
TrainMetrics train_step(TrainerState& state, const std::vector<TrainingPair>& batch, Rng& rng);

// Per-step generator derived from the run seed; resuming at step k
// reproduces the uninterrupted sequence.
Rng step_rng(uint64_t base_seed, int step);

void save_checkpoint(TrainerState& state, const std::string& path);
TrainerState load_checkpoint(const std::string& path);

// Config file: flat key=value lines, '#' comments.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  uint64_t seed = 0;
};

RunConfig parse_run_config(const std::string& path);

}  // namespace cdk
