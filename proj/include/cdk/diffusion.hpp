#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "cdk/error.hpp"
#include "cdk/rng.hpp"
#include "cdk/tensor.hpp"

namespace cdk {

// Variance-preserving schedule: alpha(t)^2 + sigma(t)^2 = 1 with
// alpha(0)=1, sigma(0)=0, alpha(1)=0, sigma(1)=1. The default is the
// cosine schedule alpha = cos(pi t / 2), sigma = sin(pi t / 2).
struct NoiseSchedule {
  int num_steps = 1000;
  std::function<double(double)> alpha;
  std::function<double(double)> sigma;

  static NoiseSchedule cosine(int steps = 1000) {
    NoiseSchedule s;
    s.num_steps = steps;
    s.alpha = [](double t) { return std::cos(1.5707963267948966 * t); };
    s.sigma = [](double t) { return std::sin(1.5707963267948966 * t); };
    return s;
  }
};

inline void check_time(double t) {
  require(t >= 0.0 && t <= 1.0, "diffusion time t must lie in [0,1], got " + std::to_string(t));
}

// z_t = alpha_t * z0 + sigma_t * eps
template <typename T>
TensorT<T> forward_diffuse(const TensorT<T>& z0, const TensorT<T>& eps, double t,
                           const NoiseSchedule& sched) {
  require(z0.same_shape(eps), "forward_diffuse: noise shape " +
                                  TensorT<T>::shape_str(eps.shape()) + " does not match latent " +
                                  TensorT<T>::shape_str(z0.shape()));
  check_time(t);
  const T a = static_cast<T>(sched.alpha(t)), s = static_cast<T>(sched.sigma(t));
  TensorT<T> out(z0.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = a * z0[i] + s * eps[i];
  return out;
}

// v_t = alpha_t * eps - sigma_t * z0
template <typename T>
TensorT<T> v_target(const TensorT<T>& z0, const TensorT<T>& eps, double t,
                    const NoiseSchedule& sched) {
  require(z0.same_shape(eps), "v_target: shape mismatch");
  check_time(t);
  const T a = static_cast<T>(sched.alpha(t)), s = static_cast<T>(sched.sigma(t));
  TensorT<T> out(z0.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = a * eps[i] - s * z0[i];
  return out;
}

// Denoiser callable: (z_t, t, cond) -> v prediction. cond may be empty.
template <typename T>
using DenoiserT = std::function<TensorT<T>(const TensorT<T>&, double, const TensorT<T>&)>;

using Denoiser = DenoiserT<float>;

// Mean squared v-prediction error over a batch; t ~ U(0,1) and eps ~ N(0,1)
// are drawn per sample from the supplied generator.
template <typename T>
double diffusion_loss(const DenoiserT<T>& denoiser, const std::vector<TensorT<T>>& z0_batch,
                      const std::vector<TensorT<T>>& cond_batch, const NoiseSchedule& sched,
                      Rng& rng) {
  require(!z0_batch.empty(), "diffusion_loss: empty batch");
  require(cond_batch.empty() || cond_batch.size() == z0_batch.size(),
          "diffusion_loss: cond batch size mismatch");
  double total = 0.0;
  for (size_t i = 0; i < z0_batch.size(); ++i) {
    const TensorT<T>& z0 = z0_batch[i];
    double t = rng.uniform();
    TensorT<T> eps = TensorT<T>::randn(z0.shape(), rng);
    TensorT<T> zt = forward_diffuse(z0, eps, t, sched);
    TensorT<T> target = v_target(z0, eps, t, sched);
    static const TensorT<T> kNoCond;
    TensorT<T> pred = denoiser(zt, t, cond_batch.empty() ? kNoCond : cond_batch[i]);
    require(pred.same_shape(z0), "diffusion_loss: denoiser output shape mismatch");
    if (!pred.all_finite())
      throw NumericError("diffusion_loss: non-finite denoiser output at batch index " +
                         std::to_string(i));
    double se = 0.0;
    for (int64_t k = 0; k < pred.size(); ++k) {
      double d = static_cast<double>(pred[k]) - static_cast<double>(target[k]);
      se += d * d;
    }
    total += se / static_cast<double>(pred.size());
  }
  return total / static_cast<double>(z0_batch.size());
}

// Deterministic Euler sampler on the v-prediction ODE. Given the current
// state and prediction, the clean/noise estimates are
//   z0_hat = alpha z - sigma v,  eps_hat = sigma z + alpha v,
// and the state is re-noised to the next grid time.
template <typename T>
TensorT<T> sample(const DenoiserT<T>& denoiser, TensorT<T> z, const TensorT<T>& cond, int steps,
                  const NoiseSchedule& sched) {
  require(steps >= 1, "sample: steps must be >= 1");
  for (int i = 0; i < steps; ++i) {
    const double t = 1.0 - static_cast<double>(i) / steps;
    const double t_next = 1.0 - static_cast<double>(i + 1) / steps;
    const T a = static_cast<T>(sched.alpha(t)), s = static_cast<T>(sched.sigma(t));
    const T an = static_cast<T>(sched.alpha(t_next)), sn = static_cast<T>(sched.sigma(t_next));
    TensorT<T> v = denoiser(z, t, cond);
    require(v.same_shape(z), "sample: denoiser output shape mismatch");
    for (int64_t k = 0; k < z.size(); ++k) {
      T z0_hat = a * z[k] - s * v[k];
      T eps_hat = s * z[k] + a * v[k];
      z[k] = an * z0_hat + sn * eps_hat;
    }
    if (!z.all_finite())
      throw NumericError("sample: non-finite latent after step " + std::to_string(i));
  }
  return z;
}

}  // namespace cdk
