#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cdk/autodiff.hpp"
#include "cdk/rng.hpp"
#include "cdk/tensor.hpp"

namespace cdk {

// Named trainable (or frozen) tensor. Modules own their parameters and
// expose them through collect() for the optimizer and checkpointing.
template <typename T>
struct ParamT {
  std::string name;
  TensorT<T> value;
  TensorT<T> grad;
  bool trainable = true;

  void init(std::string n, TensorT<T> v, bool train = true) {
    name = std::move(n);
    grad = TensorT<T>(v.shape());
    value = std::move(v);
    trainable = train;
  }

  void zero_grad() { std::fill(grad.vec().begin(), grad.vec().end(), T(0)); }
};

template <typename T>
using ParamList = std::vector<ParamT<T>*>;

// Leaf var bound to a parameter: backward accumulates into param.grad.
template <typename T>
typename GraphT<T>::Var leaf(GraphT<T>& g, ParamT<T>& p) {
  return g.param(p.value, &p.grad, p.trainable);
}

template <typename T>
struct LinearT {
  ParamT<T> w;  // [out,in]
  ParamT<T> b;  // [out]
  bool has_bias = true;

  void init(const std::string& name, int64_t in, int64_t out, Rng& rng, bool bias = true,
            bool zero = false) {
    has_bias = bias;
    T std_dev = zero ? T(0) : static_cast<T>(1.0 / std::sqrt(static_cast<double>(in)));
    w.init(name + ".w", TensorT<T>::randn({out, in}, rng, std_dev));
    if (bias) b.init(name + ".b", TensorT<T>({out}));
  }

  typename GraphT<T>::Var fwd(GraphT<T>& g, typename GraphT<T>::Var x) {
    auto y = g.matmul_nt(x, leaf(g, w));
    if (has_bias) y = g.add_bias(y, leaf(g, b));
    return y;
  }

  void collect(ParamList<T>& out) {
    out.push_back(&w);
    if (has_bias) out.push_back(&b);
  }
};

template <typename T>
struct LayerNormT {
  ParamT<T> gamma, beta;

  void init(const std::string& name, int64_t c) {
    gamma.init(name + ".gamma", TensorT<T>::ones({c}));
    beta.init(name + ".beta", TensorT<T>({c}));
  }

  typename GraphT<T>::Var fwd(GraphT<T>& g, typename GraphT<T>::Var x) {
    return g.layer_norm(x, leaf(g, gamma), leaf(g, beta));
  }

  void collect(ParamList<T>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

// Full multi-head self-attention over all tokens.
template <typename T>
struct AttentionT {
  LinearT<T> q, k, v, o;
  int64_t heads = 1;
  int64_t width = 0;

  void init(const std::string& name, int64_t w, int64_t h, Rng& rng) {
    require(w % h == 0, "attention width not divisible by heads");
    heads = h;
    width = w;
    q.init(name + ".q", w, w, rng);
    k.init(name + ".k", w, w, rng);
    v.init(name + ".v", w, w, rng);
    o.init(name + ".o", w, w, rng);
  }

  typename GraphT<T>::Var fwd(GraphT<T>& g, typename GraphT<T>::Var x) {
    const int64_t dh = width / heads;
    auto qv = q.fwd(g, x);
    auto kv = k.fwd(g, x);
    auto vv = v.fwd(g, x);
    typename GraphT<T>::Var merged{};
    for (int64_t h = 0; h < heads; ++h) {
      auto qh = g.slice_cols(qv, h * dh, (h + 1) * dh);
      auto kh = g.slice_cols(kv, h * dh, (h + 1) * dh);
      auto vh = g.slice_cols(vv, h * dh, (h + 1) * dh);
      auto att = g.softmax_rows(
          g.scale(g.matmul_nt(qh, kh), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)))));
      auto oh = g.matmul(att, vh);
      merged = h == 0 ? oh : g.concat_cols(merged, oh);
    }
    return o.fwd(g, merged);
  }

  void collect(ParamList<T>& out) {
    q.collect(out);
    k.collect(out);
    v.collect(out);
    o.collect(out);
  }
};

// Pre-norm transformer block with adaptive shift/scale conditioning.
// Shift takes both the timestep feature and an optional extra embedding;
// scale is driven by the timestep feature alone and starts at zero.
template <typename T>
struct TransformerBlockT {
  LayerNormT<T> ln1, ln2;
  AttentionT<T> attn;
  LinearT<T> fc1, fc2;
  LinearT<T> shift1_t, shift2_t;    // t-feature -> shift
  LinearT<T> scale1_t, scale2_t;    // t-feature -> scale (zero-init)
  LinearT<T> shift1_e, shift2_e;    // extra embedding -> shift (no bias)
  bool has_extra = false;
  int64_t width = 0;

  void init(const std::string& name, int64_t w, int64_t heads, int64_t mlp_mult, int64_t cond_dim,
            bool extra_cond, Rng& rng) {
    width = w;
    has_extra = extra_cond;
    ln1.init(name + ".ln1", w);
    ln2.init(name + ".ln2", w);
    attn.init(name + ".attn", w, heads, rng);
    fc1.init(name + ".fc1", w, w * mlp_mult, rng);
    fc2.init(name + ".fc2", w * mlp_mult, w, rng);
    shift1_t.init(name + ".shift1_t", cond_dim, w, rng);
    shift2_t.init(name + ".shift2_t", cond_dim, w, rng);
    scale1_t.init(name + ".scale1_t", cond_dim, w, rng, true, /*zero=*/true);
    scale2_t.init(name + ".scale2_t", cond_dim, w, rng, true, /*zero=*/true);
    if (extra_cond) {
      shift1_e.init(name + ".shift1_e", w, w, rng, /*bias=*/false);
      shift2_e.init(name + ".shift2_e", w, w, rng, /*bias=*/false);
    }
  }

  // t_feat: [1,cond_dim]; extra: [1,width] or invalid
  typename GraphT<T>::Var fwd(GraphT<T>& g, typename GraphT<T>::Var x,
                              typename GraphT<T>::Var t_feat, typename GraphT<T>::Var extra) {
    auto modulate = [&](typename GraphT<T>::Var u, LinearT<T>& sh_t, LinearT<T>& sc_t,
                        LinearT<T>& sh_e) {
      auto shift = sh_t.fwd(g, t_feat);
      if (has_extra && extra.valid()) shift = g.add(shift, sh_e.fwd(g, extra));
      auto scl = g.add_scalar(sc_t.fwd(g, t_feat), T(1));
      u = g.mul_cols(u, g.reshape(scl, {width}));
      return g.add_bias(u, g.reshape(shift, {width}));
    };
    auto u = modulate(ln1.fwd(g, x), shift1_t, scale1_t, shift1_e);
    x = g.add(x, attn.fwd(g, u));
    auto m = modulate(ln2.fwd(g, x), shift2_t, scale2_t, shift2_e);
    x = g.add(x, fc2.fwd(g, g.silu(fc1.fwd(g, m))));
    return x;
  }

  void collect(ParamList<T>& out) {
    ln1.collect(out);
    ln2.collect(out);
    attn.collect(out);
    fc1.collect(out);
    fc2.collect(out);
    shift1_t.collect(out);
    shift2_t.collect(out);
    scale1_t.collect(out);
    scale2_t.collect(out);
    if (has_extra) {
      shift1_e.collect(out);
      shift2_e.collect(out);
    }
  }
};

// Sinusoidal features of a scalar diffusion time in [0,1].
template <typename T>
TensorT<T> time_features(double t, int64_t dim) {
  require(dim % 2 == 0, "time feature dim must be even");
  TensorT<T> out({1, dim});
  const int64_t half = dim / 2;
  for (int64_t i = 0; i < half; ++i) {
    double freq = std::pow(1000.0, static_cast<double>(i) / static_cast<double>(half));
    out[i] = static_cast<T>(std::sin(t * freq));
    out[half + i] = static_cast<T>(std::cos(t * freq));
  }
  return out;
}

}  // namespace cdk
