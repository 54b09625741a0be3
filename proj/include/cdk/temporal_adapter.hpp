#pragma once

#include <string>
#include <vector>

#include "cdk/nn.hpp"

namespace cdk {

// One causal conv stage: CausalConv3D -> GroupNorm -> SiLU. Temporal
// padding of kernel_t-1 frames lies entirely in the past, so output
// frame j never reads input frames beyond stride_t * j.
struct CausalConvSpec {
  int64_t in_channels = 0;
  int64_t out_channels = 0;
  int64_t kernel_t = 3;
  int64_t stride_t = 2;
  int64_t spatial_kernel = 3;
  int64_t norm_groups = 8;
  bool replicate_past = true;   // pad with the first frame instead of zeros
  bool per_frame_stats = true;  // group-norm statistics per frame (causal)
};

template <typename T>
struct CausalStageT {
  CausalConvSpec spec;
  ParamT<T> w, b;
  ParamT<T> gn_gamma, gn_beta;

  void init(const std::string& name, const CausalConvSpec& s, Rng& rng) {
    require(s.stride_t == 1 || s.stride_t == 2, "causal stage stride_t must be 1 or 2");
    require(s.out_channels % s.norm_groups == 0,
            "causal stage channels not divisible by norm groups");
    spec = s;
    const int64_t fan_in = s.in_channels * s.kernel_t * s.spatial_kernel * s.spatial_kernel;
    T std_dev = static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in)));
    w.init(name + ".w",
           TensorT<T>::randn(
               {s.out_channels, s.in_channels, s.kernel_t, s.spatial_kernel, s.spatial_kernel},
               rng, std_dev));
    b.init(name + ".b", TensorT<T>({s.out_channels}));
    gn_gamma.init(name + ".gn.gamma", TensorT<T>::ones({s.out_channels}));
    gn_beta.init(name + ".gn.beta", TensorT<T>({s.out_channels}));
  }

  typename GraphT<T>::Var fwd(GraphT<T>& g, typename GraphT<T>::Var x) {
    auto y = g.causal_conv3d(x, leaf(g, w), leaf(g, b), spec.stride_t, spec.replicate_past);
    y = g.group_norm(y, leaf(g, gn_gamma), leaf(g, gn_beta), spec.norm_groups,
                     spec.per_frame_stats);
    return g.silu(y);
  }

  void collect(ParamList<T>& out) {
    out.push_back(&w);
    out.push_back(&b);
    out.push_back(&gn_gamma);
    out.push_back(&gn_beta);
  }
};

template <typename T>
TensorT<T> causal_stage(const TensorT<T>& x, CausalStageT<T>& stage) {
  require(x.rank() == 4 && x.dim(0) >= 1, "causal_stage: input must be [T,D,h,w] with T >= 1");
  GraphT<T> g;
  return g.val(stage.fwd(g, g.constant(x)));
}

// Two stride-2 causal stages compressing T conditioning frames to the
// latent temporal length (T-1)/4 + 1; spatial dimensions pass through.
template <typename T>
class TemporalAdapterT {
 public:
  using G = GraphT<T>;
  using Var = typename G::Var;

  TemporalAdapterT() = default;

  TemporalAdapterT(int64_t feature_dim, int64_t hidden, int64_t out_channels, int64_t norm_groups,
                   Rng& rng, bool replicate_past = true, bool per_frame_stats = true) {
    CausalConvSpec s1;
    s1.in_channels = feature_dim;
    s1.out_channels = hidden;
    s1.norm_groups = norm_groups;
    s1.replicate_past = replicate_past;
    s1.per_frame_stats = per_frame_stats;
    CausalConvSpec s2 = s1;
    s2.in_channels = hidden;
    s2.out_channels = out_channels;
    stage1_.init("adapter.stage1", s1, rng);
    stage2_.init("adapter.stage2", s2, rng);
  }

  Var adapt_g(G& g, Var features) {
    const auto& shape = g.val(features).shape();
    require(shape.size() == 4, "adapt: features must be [T,D,h,w]");
    require(shape[0] % 4 == 1, "adapt: need T == 1 (mod 4), got T=" + std::to_string(shape[0]));
    require(shape[1] == stage1_.spec.in_channels,
            "adapt: feature dim " + std::to_string(shape[1]) + " does not match adapter input " +
                std::to_string(stage1_.spec.in_channels));
    return stage2_.fwd(g, stage1_.fwd(g, features));
  }

  TensorT<T> adapt(const TensorT<T>& features) {
    G g;
    return g.val(adapt_g(g, g.constant(features)));
  }

  int64_t out_channels() const { return stage2_.spec.out_channels; }
  int64_t in_channels() const { return stage1_.spec.in_channels; }

  CausalStageT<T>& stage1() { return stage1_; }
  CausalStageT<T>& stage2() { return stage2_; }

  void collect(ParamList<T>& out) {
    stage1_.collect(out);
    stage2_.collect(out);
  }

 private:
  CausalStageT<T> stage1_, stage2_;
};

using TemporalAdapter = TemporalAdapterT<float>;

// Latent frame count produced by the two stride-2 stages.
inline int64_t adapted_frames(int64_t t) {
  require(t % 4 == 1, "temporal length must satisfy T == 1 (mod 4), got " + std::to_string(t));
  return (t - 1) / 4 + 1;
}

}  // namespace cdk
