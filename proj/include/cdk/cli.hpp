#pragma once

#include <string>
#include <vector>

#include "cdk/model.hpp"
#include "cdk/trainer.hpp"

namespace cdk {

// Exit codes: 0 success, 2 usage/contract error, 3 numeric failure.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);

struct GenerateOptions {
  std::string prompt;
  double scale = 0.8;   // residual scale applied at inference
  double cfg = 1.0;     // classifier-free guidance weight (1 = off)
  int steps = 0;        // 0: use the checkpoint's configured step count
  bool drop_first_frame = false;
};

// One 49-frame-style block: denoises seeded noise under feature
// conditioning and decodes to a u8-quantized [T,3,H,W] video tensor.
// features may be empty (unconditional); mask is optional token gating.
Tensor generate_block(Model& model, const Tensor& features, const Tensor* mask,
                      const Tensor* first_frame_rgb, const GenerateOptions& opt, Rng& rng);

// Pools a [T,1,h,w] conditioning-resolution mask to the model's token grid:
// temporal groups follow the latent codec, spatial cells threshold at 0.5.
Tensor mask_to_token_grid(const Tensor& mask_hi, const Model& model);

}  // namespace cdk
