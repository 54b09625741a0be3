#pragma once

#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "cdk/error.hpp"
#include "cdk/tensor.hpp"

namespace cdk {

// Reverse-mode tape over TensorT. Nodes are appended in evaluation order,
// which is already topological, so backward() is a single reverse sweep.
// Gradients only materialize on paths that lead to a grad-requiring leaf.
template <typename T>
class GraphT {
 public:
  using Tensor = TensorT<T>;
  using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using EMap = Eigen::Map<EMat>;
  using ECMap = Eigen::Map<const EMat>;

  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  struct Node {
    Tensor val;
    Tensor grad;  // allocated lazily
    bool needs_grad = false;
    std::function<void(GraphT&, Node&)> back;
  };

  const Tensor& val(Var v) const { return nodes_[check(v)].val; }
  const Tensor& grad(Var v) const {
    const Node& n = nodes_[check(v)];
    require(n.needs_grad, "grad requested for a node that does not track gradients");
    return n.grad;
  }

  Var constant(Tensor t) { return push(std::move(t), false, {}); }

  Var input(Tensor t, bool needs_grad) { return push(std::move(t), needs_grad, {}); }

  // Leaf whose gradient is accumulated into an external buffer.
  Var param(const Tensor& value, Tensor* grad_sink, bool trainable) {
    Var v = push(value, trainable, {});
    if (trainable && grad_sink) {
      nodes_[static_cast<size_t>(v.id)].back = [grad_sink](GraphT&, Node& n) {
        require(grad_sink->same_shape(n.grad), "parameter gradient shape mismatch");
        for (int64_t i = 0; i < n.grad.size(); ++i) (*grad_sink)[i] += n.grad[i];
      };
    }
    return v;
  }

  // --- elementwise ---

  Var add(Var a, Var b) {
    require(val(a).same_shape(val(b)), "add: shape mismatch " +
                                           Tensor::shape_str(val(a).shape()) + " vs " +
                                           Tensor::shape_str(val(b).shape()));
    Tensor out = val(a);
    const Tensor& bv = val(b);
    for (int64_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](GraphT& g, Node& n) {
      g.accum(a, n.grad);
      g.accum(b, n.grad);
    });
  }

  Var sub(Var a, Var b) {
    require(val(a).same_shape(val(b)), "sub: shape mismatch");
    Tensor out = val(a);
    const Tensor& bv = val(b);
    for (int64_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](GraphT& g, Node& n) {
      g.accum(a, n.grad);
      if (g.needs(b)) {
        Tensor neg = n.grad;
        for (int64_t i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
        g.accum(b, neg);
      }
    });
  }

  Var mul(Var a, Var b) {
    require(val(a).same_shape(val(b)), "mul: shape mismatch");
    Tensor out = val(a);
    const Tensor& bv = val(b);
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](GraphT& g, Node& n) {
      if (g.needs(a)) {
        Tensor da = n.grad;
        const Tensor& bv2 = g.val(b);
        for (int64_t i = 0; i < da.size(); ++i) da[i] *= bv2[i];
        g.accum(a, da);
      }
      if (g.needs(b)) {
        Tensor db = n.grad;
        const Tensor& av2 = g.val(a);
        for (int64_t i = 0; i < db.size(); ++i) db[i] *= av2[i];
        g.accum(b, db);
      }
    });
  }

  Var scale(Var a, T c) {
    Tensor out = val(a);
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= c;
    return push(std::move(out), needs(a), [a, c](GraphT& g, Node& n) {
      Tensor da = n.grad;
      for (int64_t i = 0; i < da.size(); ++i) da[i] *= c;
      g.accum(a, da);
    });
  }

  Var add_scalar(Var a, T c) {
    Tensor out = val(a);
    for (int64_t i = 0; i < out.size(); ++i) out[i] += c;
    return push(std::move(out), needs(a), [a](GraphT& g, Node& n) { g.accum(a, n.grad); });
  }

  Var silu(Var a) {
    Tensor out = val(a);
    for (int64_t i = 0; i < out.size(); ++i) {
      T x = out[i];
      out[i] = x / (T(1) + std::exp(-x));
    }
    return push(std::move(out), needs(a), [a](GraphT& g, Node& n) {
      const Tensor& x = g.val(a);
      Tensor da = n.grad;
      for (int64_t i = 0; i < da.size(); ++i) {
        T s = T(1) / (T(1) + std::exp(-x[i]));
        da[i] *= s * (T(1) + x[i] * (T(1) - s));
      }
      g.accum(a, da);
    });
  }

  // --- broadcasting over a [N,C] matrix ---

  // y[n,c] = x[n,c] + v[c]
  Var add_bias(Var x, Var v) {
    const Tensor& xv = val(x);
    const Tensor& vv = val(v);
    require(xv.rank() == 2 && vv.size() == xv.dim(1), "add_bias: need [N,C] and [C]");
    Tensor out = xv;
    const int64_t N = xv.dim(0), C = xv.dim(1);
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) out[n * C + c] += vv[c];
    return push(std::move(out), needs(x) || needs(v), [x, v, N, C](GraphT& g, Node& n) {
      g.accum(x, n.grad);
      if (g.needs(v)) {
        Tensor dv({C});
        for (int64_t i = 0; i < N; ++i)
          for (int64_t c = 0; c < C; ++c) dv[c] += n.grad[i * C + c];
        g.accum(v, dv);
      }
    });
  }

  // y[n,c] = x[n,c] * v[c]
  Var mul_cols(Var x, Var v) {
    const Tensor& xv = val(x);
    const Tensor& vv = val(v);
    require(xv.rank() == 2 && vv.size() == xv.dim(1), "mul_cols: need [N,C] and [C]");
    Tensor out = xv;
    const int64_t N = xv.dim(0), C = xv.dim(1);
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) out[n * C + c] *= vv[c];
    return push(std::move(out), needs(x) || needs(v), [x, v, N, C](GraphT& g, Node& n) {
      if (g.needs(x)) {
        Tensor dx = n.grad;
        const Tensor& vv2 = g.val(v);
        for (int64_t i = 0; i < N; ++i)
          for (int64_t c = 0; c < C; ++c) dx[i * C + c] *= vv2[c];
        g.accum(x, dx);
      }
      if (g.needs(v)) {
        Tensor dv({C});
        const Tensor& xv2 = g.val(x);
        for (int64_t i = 0; i < N; ++i)
          for (int64_t c = 0; c < C; ++c) dv[c] += n.grad[i * C + c] * xv2[i * C + c];
        g.accum(v, dv);
      }
    });
  }

  // y[n,c] = x[n,c] * m[n]  (token mask / per-row gate)
  Var mul_rows(Var x, Var m) {
    const Tensor& xv = val(x);
    const Tensor& mv = val(m);
    require(xv.rank() == 2 && mv.size() == xv.dim(0), "mul_rows: need [N,C] and [N]");
    Tensor out = xv;
    const int64_t N = xv.dim(0), C = xv.dim(1);
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) out[n * C + c] *= mv[n];
    return push(std::move(out), needs(x) || needs(m), [x, m, N, C](GraphT& g, Node& n) {
      if (g.needs(x)) {
        Tensor dx = n.grad;
        const Tensor& mv2 = g.val(m);
        for (int64_t i = 0; i < N; ++i)
          for (int64_t c = 0; c < C; ++c) dx[i * C + c] *= mv2[i];
        g.accum(x, dx);
      }
      if (g.needs(m)) {
        Tensor dm({N});
        const Tensor& xv2 = g.val(x);
        for (int64_t i = 0; i < N; ++i) {
          T s = 0;
          for (int64_t c = 0; c < C; ++c) s += n.grad[i * C + c] * xv2[i * C + c];
          dm[i] = s;
        }
        g.accum(m, dm);
      }
    });
  }

  // --- matrix products ([M,K]x[K,N]; _nt uses b transposed, _tn uses a transposed) ---

  Var matmul(Var a, Var b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
            "matmul: incompatible shapes");
    const int64_t M = av.dim(0), K = av.dim(1), N = bv.dim(1);
    Tensor out({M, N});
    EMap(out.data(), M, N) = ECMap(av.data(), M, K) * ECMap(bv.data(), K, N);
    return push(std::move(out), needs(a) || needs(b), [a, b, M, K, N](GraphT& g, Node& n) {
      ECMap dy(n.grad.data(), M, N);
      if (g.needs(a)) {
        Tensor da({M, K});
        EMap(da.data(), M, K) = dy * ECMap(g.val(b).data(), K, N).transpose();
        g.accum(a, da);
      }
      if (g.needs(b)) {
        Tensor db({K, N});
        EMap(db.data(), K, N) = ECMap(g.val(a).data(), M, K).transpose() * dy;
        g.accum(b, db);
      }
    });
  }

  Var matmul_nt(Var a, Var b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(1),
            "matmul_nt: incompatible shapes");
    const int64_t M = av.dim(0), K = av.dim(1), N = bv.dim(0);
    Tensor out({M, N});
    EMap(out.data(), M, N) = ECMap(av.data(), M, K) * ECMap(bv.data(), N, K).transpose();
    return push(std::move(out), needs(a) || needs(b), [a, b, M, K, N](GraphT& g, Node& n) {
      ECMap dy(n.grad.data(), M, N);
      if (g.needs(a)) {
        Tensor da({M, K});
        EMap(da.data(), M, K) = dy * ECMap(g.val(b).data(), N, K);
        g.accum(a, da);
      }
      if (g.needs(b)) {
        Tensor db({N, K});
        EMap(db.data(), N, K) = dy.transpose() * ECMap(g.val(a).data(), M, K);
        g.accum(b, db);
      }
    });
  }

  // --- concatenation / slicing along columns of [N,C] ---

  Var concat_cols(Var a, Var b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    require(av.rank() == 2 && bv.rank() == 2 && av.dim(0) == bv.dim(0),
            "concat_cols: row counts differ");
    const int64_t N = av.dim(0), Ca = av.dim(1), Cb = bv.dim(1);
    Tensor out({N, Ca + Cb});
    for (int64_t n = 0; n < N; ++n) {
      std::copy_n(av.data() + n * Ca, Ca, out.data() + n * (Ca + Cb));
      std::copy_n(bv.data() + n * Cb, Cb, out.data() + n * (Ca + Cb) + Ca);
    }
    return push(std::move(out), needs(a) || needs(b), [a, b, N, Ca, Cb](GraphT& g, Node& n) {
      if (g.needs(a)) {
        Tensor da({N, Ca});
        for (int64_t i = 0; i < N; ++i)
          std::copy_n(n.grad.data() + i * (Ca + Cb), Ca, da.data() + i * Ca);
        g.accum(a, da);
      }
      if (g.needs(b)) {
        Tensor db({N, Cb});
        for (int64_t i = 0; i < N; ++i)
          std::copy_n(n.grad.data() + i * (Ca + Cb) + Ca, Cb, db.data() + i * Cb);
        g.accum(b, db);
      }
    });
  }

  Var slice_cols(Var x, int64_t c0, int64_t c1) {
    const Tensor& xv = val(x);
    require(xv.rank() == 2 && 0 <= c0 && c0 < c1 && c1 <= xv.dim(1), "slice_cols: bad range");
    const int64_t N = xv.dim(0), C = xv.dim(1), W = c1 - c0;
    Tensor out({N, W});
    for (int64_t n = 0; n < N; ++n) std::copy_n(xv.data() + n * C + c0, W, out.data() + n * W);
    return push(std::move(out), needs(x), [x, c0, N, C, W](GraphT& g, Node& n) {
      Tensor dx({N, C});
      for (int64_t i = 0; i < N; ++i)
        std::copy_n(n.grad.data() + i * W, W, dx.data() + i * C + c0);
      g.accum(x, dx);
    });
  }

  // --- shape ops ---

  Var reshape(Var x, std::vector<int64_t> shape) {
    Tensor out = val(x).reshaped(shape);
    std::vector<int64_t> old_shape = val(x).shape();
    return push(std::move(out), needs(x), [x, old_shape](GraphT& g, Node& n) {
      g.accum(x, n.grad.reshaped(old_shape));
    });
  }

  // Bijective index map: out[i] = x[idx[i]].
  Var gather(Var x, std::vector<int64_t> out_shape, std::shared_ptr<const std::vector<int64_t>> idx) {
    const Tensor& xv = val(x);
    require(static_cast<int64_t>(idx->size()) == Tensor::numel(out_shape),
            "gather: index map size mismatch");
    Tensor out(out_shape);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = xv[(*idx)[static_cast<size_t>(i)]];
    std::vector<int64_t> in_shape = xv.shape();
    return push(std::move(out), needs(x), [x, idx, in_shape](GraphT& g, Node& n) {
      Tensor dx(in_shape);
      for (int64_t i = 0; i < n.grad.size(); ++i)
        dx[(*idx)[static_cast<size_t>(i)]] += n.grad[i];
      g.accum(x, dx);
    });
  }

  // --- reductions / normalizations ---

  Var mean_all(Var x) {
    const Tensor& xv = val(x);
    T s = 0;
    for (int64_t i = 0; i < xv.size(); ++i) s += xv[i];
    const int64_t n_el = xv.size();
    Tensor out({1});
    out[0] = s / static_cast<T>(n_el);
    return push(std::move(out), needs(x), [x, n_el](GraphT& g, Node& n) {
      Tensor dx(g.val(x).shape());
      const T gg = n.grad[0] / static_cast<T>(n_el);
      for (int64_t i = 0; i < dx.size(); ++i) dx[i] = gg;
      g.accum(x, dx);
    });
  }

  Var softmax_rows(Var x) {
    const Tensor& xv = val(x);
    require(xv.rank() == 2, "softmax_rows: need [N,M]");
    const int64_t N = xv.dim(0), M = xv.dim(1);
    Tensor out({N, M});
    for (int64_t n = 0; n < N; ++n) {
      T mx = xv[n * M];
      for (int64_t j = 1; j < M; ++j) mx = std::max(mx, xv[n * M + j]);
      T s = 0;
      for (int64_t j = 0; j < M; ++j) {
        T e = std::exp(xv[n * M + j] - mx);
        out[n * M + j] = e;
        s += e;
      }
      for (int64_t j = 0; j < M; ++j) out[n * M + j] /= s;
    }
    Var self = push(std::move(out), needs(x), {});
    if (needs(x)) {
      nodes_[self.id].back = [x, self, N, M](GraphT& g, Node& n) {
        const Tensor& y = g.val(self);
        Tensor dx({N, M});
        for (int64_t i = 0; i < N; ++i) {
          T dot = 0;
          for (int64_t j = 0; j < M; ++j) dot += n.grad[i * M + j] * y[i * M + j];
          for (int64_t j = 0; j < M; ++j)
            dx[i * M + j] = y[i * M + j] * (n.grad[i * M + j] - dot);
        }
        g.accum(x, dx);
      };
    }
    return self;
  }

  // Per-row normalization with affine: y = (x - mu)/sqrt(var + eps) * gamma + beta.
  Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-5)) {
    const Tensor& xv = val(x);
    require(xv.rank() == 2, "layer_norm: need [N,C]");
    const int64_t N = xv.dim(0), C = xv.dim(1);
    require(val(gamma).size() == C && val(beta).size() == C, "layer_norm: affine size mismatch");

    auto xhat = std::make_shared<Tensor>(std::vector<int64_t>{N, C});
    auto inv_sd = std::make_shared<Tensor>(std::vector<int64_t>{N});
    Tensor out({N, C});
    const Tensor& gv = val(gamma);
    const Tensor& bv = val(beta);
    for (int64_t n = 0; n < N; ++n) {
      T mu = 0;
      for (int64_t c = 0; c < C; ++c) mu += xv[n * C + c];
      mu /= static_cast<T>(C);
      T var = 0;
      for (int64_t c = 0; c < C; ++c) {
        T d = xv[n * C + c] - mu;
        var += d * d;
      }
      var /= static_cast<T>(C);
      T isd = T(1) / std::sqrt(var + eps);
      (*inv_sd)[n] = isd;
      for (int64_t c = 0; c < C; ++c) {
        T xh = (xv[n * C + c] - mu) * isd;
        (*xhat)[n * C + c] = xh;
        out[n * C + c] = xh * gv[c] + bv[c];
      }
    }
    return push(std::move(out), needs(x) || needs(gamma) || needs(beta),
                [x, gamma, beta, xhat, inv_sd, N, C](GraphT& g, Node& n) {
                  const Tensor& gv2 = g.val(gamma);
                  if (g.needs(gamma)) {
                    Tensor dg({C});
                    for (int64_t i = 0; i < N; ++i)
                      for (int64_t c = 0; c < C; ++c)
                        dg[c] += n.grad[i * C + c] * (*xhat)[i * C + c];
                    g.accum(gamma, dg);
                  }
                  if (g.needs(beta)) {
                    Tensor db({C});
                    for (int64_t i = 0; i < N; ++i)
                      for (int64_t c = 0; c < C; ++c) db[c] += n.grad[i * C + c];
                    g.accum(beta, db);
                  }
                  if (g.needs(x)) {
                    Tensor dx({N, C});
                    for (int64_t i = 0; i < N; ++i) {
                      T sum_dy = 0, sum_dy_xh = 0;
                      for (int64_t c = 0; c < C; ++c) {
                        T dy = n.grad[i * C + c] * gv2[c];
                        sum_dy += dy;
                        sum_dy_xh += dy * (*xhat)[i * C + c];
                      }
                      const T invC = T(1) / static_cast<T>(C);
                      for (int64_t c = 0; c < C; ++c) {
                        T dy = n.grad[i * C + c] * gv2[c];
                        dx[i * C + c] = (*inv_sd)[i] *
                                        (dy - sum_dy * invC - (*xhat)[i * C + c] * sum_dy_xh * invC);
                      }
                    }
                    g.accum(x, dx);
                  }
                });
  }

  // Group normalization over a [T,C,H,W] map. Statistics cover one channel
  // group either per frame (per_frame=true) or across all frames; affine is
  // per channel. Per-frame statistics keep temporal stages causal.
  Var group_norm(Var x, Var gamma, Var beta, int64_t groups, bool per_frame, T eps = T(1e-5)) {
    const Tensor& xv = val(x);
    require(xv.rank() == 4, "group_norm: need [T,C,H,W]");
    const int64_t Tn = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    require(C % groups == 0, "group_norm: channels not divisible by group count");
    require(val(gamma).size() == C && val(beta).size() == C, "group_norm: affine size mismatch");
    const int64_t cg = C / groups;

    const int64_t n_stats = (per_frame ? Tn : 1) * groups;
    auto mean = std::make_shared<Tensor>(std::vector<int64_t>{n_stats});
    auto inv_sd = std::make_shared<Tensor>(std::vector<int64_t>{n_stats});

    auto stat_index = [per_frame, groups](int64_t t, int64_t g) {
      return (per_frame ? t : 0) * groups + g;
    };
    auto for_each_group = [&](auto&& fn) {
      // fn(stat_idx, t_begin, t_end, group)
      for (int64_t gi = 0; gi < groups; ++gi) {
        if (per_frame) {
          for (int64_t t = 0; t < Tn; ++t) fn(stat_index(t, gi), t, t + 1, gi);
        } else {
          fn(stat_index(0, gi), 0, Tn, gi);
        }
      }
    };

    Tensor out(xv.shape());
    const Tensor& gv = val(gamma);
    const Tensor& bv = val(beta);
    for_each_group([&](int64_t si, int64_t t0, int64_t t1, int64_t gi) {
      T mu = 0;
      int64_t count = (t1 - t0) * cg * H * W;
      for (int64_t t = t0; t < t1; ++t)
        for (int64_t c = gi * cg; c < (gi + 1) * cg; ++c)
          for (int64_t i = 0; i < H * W; ++i) mu += xv[(t * C + c) * H * W + i];
      mu /= static_cast<T>(count);
      T var = 0;
      for (int64_t t = t0; t < t1; ++t)
        for (int64_t c = gi * cg; c < (gi + 1) * cg; ++c)
          for (int64_t i = 0; i < H * W; ++i) {
            T d = xv[(t * C + c) * H * W + i] - mu;
            var += d * d;
          }
      var /= static_cast<T>(count);
      T isd = T(1) / std::sqrt(var + eps);
      (*mean)[si] = mu;
      (*inv_sd)[si] = isd;
      for (int64_t t = t0; t < t1; ++t)
        for (int64_t c = gi * cg; c < (gi + 1) * cg; ++c)
          for (int64_t i = 0; i < H * W; ++i) {
            int64_t k = (t * C + c) * H * W + i;
            out[k] = (xv[k] - mu) * isd * gv[c] + bv[c];
          }
    });

    return push(std::move(out), needs(x) || needs(gamma) || needs(beta),
                [x, gamma, beta, mean, inv_sd, Tn, C, H, W, groups, cg, per_frame](GraphT& g,
                                                                                   Node& n) {
                  const Tensor& xv2 = g.val(x);
                  const Tensor& gv2 = g.val(gamma);
                  auto stat_index = [per_frame, groups](int64_t t, int64_t gi) {
                    return (per_frame ? t : 0) * groups + gi;
                  };
                  if (g.needs(gamma) || g.needs(beta)) {
                    Tensor dg({C}), db({C});
                    for (int64_t t = 0; t < Tn; ++t)
                      for (int64_t c = 0; c < C; ++c) {
                        int64_t si = stat_index(t, c / cg);
                        for (int64_t i = 0; i < H * W; ++i) {
                          int64_t k = (t * C + c) * H * W + i;
                          T xh = (xv2[k] - (*mean)[si]) * (*inv_sd)[si];
                          dg[c] += n.grad[k] * xh;
                          db[c] += n.grad[k];
                        }
                      }
                    if (g.needs(gamma)) g.accum(gamma, dg);
                    if (g.needs(beta)) g.accum(beta, db);
                  }
                  if (g.needs(x)) {
                    Tensor dx(xv2.shape());
                    auto process = [&](int64_t si, int64_t t0, int64_t t1, int64_t gi) {
                      const int64_t count = (t1 - t0) * cg * H * W;
                      T sum_dy = 0, sum_dy_xh = 0;
                      for (int64_t t = t0; t < t1; ++t)
                        for (int64_t c = gi * cg; c < (gi + 1) * cg; ++c)
                          for (int64_t i = 0; i < H * W; ++i) {
                            int64_t k = (t * C + c) * H * W + i;
                            T dy = n.grad[k] * gv2[c];
                            T xh = (xv2[k] - (*mean)[si]) * (*inv_sd)[si];
                            sum_dy += dy;
                            sum_dy_xh += dy * xh;
                          }
                      const T invN = T(1) / static_cast<T>(count);
                      for (int64_t t = t0; t < t1; ++t)
                        for (int64_t c = gi * cg; c < (gi + 1) * cg; ++c)
                          for (int64_t i = 0; i < H * W; ++i) {
                            int64_t k = (t * C + c) * H * W + i;
                            T dy = n.grad[k] * gv2[c];
                            T xh = (xv2[k] - (*mean)[si]) * (*inv_sd)[si];
                            dx[k] = (*inv_sd)[si] * (dy - sum_dy * invN - xh * sum_dy_xh * invN);
                          }
                    };
                    for (int64_t gi = 0; gi < groups; ++gi) {
                      if (per_frame) {
                        for (int64_t t = 0; t < Tn; ++t) process(stat_index(t, gi), t, t + 1, gi);
                      } else {
                        process(stat_index(0, gi), 0, Tn, gi);
                      }
                    }
                    g.accum(x, dx);
                  }
                });
  }

  // Temporally causal 3D convolution on [T,Cin,H,W]. Temporal padding of
  // kernel_t-1 frames sits entirely in the past (replicated first frame or
  // zeros); spatial padding is symmetric zeros so H,W are preserved.
  // T_out = (T-1)/stride_t + 1, requiring T == 1 (mod stride_t).
  Var causal_conv3d(Var x, Var w, Var b, int64_t stride_t, bool replicate_past) {
    const Tensor& xv = val(x);
    const Tensor& wv = val(w);
    require(xv.rank() == 4, "causal_conv3d: input must be [T,Cin,H,W]");
    require(wv.rank() == 5, "causal_conv3d: weight must be [Cout,Cin,kt,kh,kw]");
    require(stride_t == 1 || stride_t == 2, "causal_conv3d: stride_t must be 1 or 2");
    const int64_t Tn = xv.dim(0), Cin = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int64_t Cout = wv.dim(0), kt = wv.dim(2), kh = wv.dim(3), kw = wv.dim(4);
    require(wv.dim(1) == Cin, "causal_conv3d: weight Cin mismatch");
    require(val(b).size() == Cout, "causal_conv3d: bias size mismatch");
    if (stride_t > 1)
      require(Tn % stride_t == 1,
              "causal_conv3d: need T == 1 (mod " + std::to_string(stride_t) +
                  "), got T=" + std::to_string(Tn));
    const int64_t T_out = (Tn - 1) / stride_t + 1;
    const int64_t pad_t = kt - 1;
    const int64_t ph = (kh - 1) / 2, pw = (kw - 1) / 2;

    // padded temporal index -> source frame (-1 means zero pad)
    auto src_frame = [Tn, pad_t, replicate_past](int64_t ti) -> int64_t {
      int64_t s = ti - pad_t;
      if (s >= 0) return s < Tn ? s : -1;
      return replicate_past ? 0 : -1;
    };

    Tensor out({T_out, Cout, H, W});
    const Tensor& bv = val(b);
    for (int64_t to = 0; to < T_out; ++to) {
      for (int64_t co = 0; co < Cout; ++co) {
        for (int64_t y = 0; y < H; ++y)
          for (int64_t xpix = 0; xpix < W; ++xpix) {
            T acc = bv[co];
            for (int64_t dt = 0; dt < kt; ++dt) {
              int64_t ts = src_frame(to * stride_t + dt);
              if (ts < 0) continue;
              for (int64_t ci = 0; ci < Cin; ++ci)
                for (int64_t dy = 0; dy < kh; ++dy) {
                  int64_t sy = y + dy - ph;
                  if (sy < 0 || sy >= H) continue;
                  for (int64_t dx = 0; dx < kw; ++dx) {
                    int64_t sx = xpix + dx - pw;
                    if (sx < 0 || sx >= W) continue;
                    acc += xv[((ts * Cin + ci) * H + sy) * W + sx] *
                           wv[(((co * Cin + ci) * kt + dt) * kh + dy) * kw + dx];
                  }
                }
            }
            out[((to * Cout + co) * H + y) * W + xpix] = acc;
          }
      }
    }
    return push(std::move(out), needs(x) || needs(w) || needs(b),
                [x, w, b, stride_t, replicate_past, Tn, Cin, H, W, Cout, kt, kh, kw, T_out, pad_t,
                 ph, pw](GraphT& g, Node& n) {
                  const Tensor& xv2 = g.val(x);
                  const Tensor& wv2 = g.val(w);
                  auto src_frame = [Tn, pad_t, replicate_past](int64_t ti) -> int64_t {
                    int64_t s = ti - pad_t;
                    if (s >= 0) return s < Tn ? s : -1;
                    return replicate_past ? 0 : -1;
                  };
                  Tensor dx(xv2.shape()), dw(wv2.shape()), db({Cout});
                  const bool nx = g.needs(x), nw = g.needs(w), nb = g.needs(b);
                  for (int64_t to = 0; to < T_out; ++to)
                    for (int64_t co = 0; co < Cout; ++co)
                      for (int64_t y = 0; y < H; ++y)
                        for (int64_t xpix = 0; xpix < W; ++xpix) {
                          T dy_val = n.grad[((to * Cout + co) * H + y) * W + xpix];
                          if (dy_val == T(0)) continue;
                          if (nb) db[co] += dy_val;
                          for (int64_t dt = 0; dt < kt; ++dt) {
                            int64_t ts = src_frame(to * stride_t + dt);
                            if (ts < 0) continue;
                            for (int64_t ci = 0; ci < Cin; ++ci)
                              for (int64_t dyk = 0; dyk < kh; ++dyk) {
                                int64_t sy = y + dyk - ph;
                                if (sy < 0 || sy >= H) continue;
                                for (int64_t dxk = 0; dxk < kw; ++dxk) {
                                  int64_t sx = xpix + dxk - pw;
                                  if (sx < 0 || sx >= W) continue;
                                  int64_t xi = ((ts * Cin + ci) * H + sy) * W + sx;
                                  int64_t wi = (((co * Cin + ci) * kt + dt) * kh + dyk) * kw + dxk;
                                  if (nx) dx[xi] += dy_val * wv2[wi];
                                  if (nw) dw[wi] += dy_val * xv2[xi];
                                }
                              }
                          }
                        }
                  if (nx) g.accum(x, dx);
                  if (nw) g.accum(w, dw);
                  if (nb) g.accum(b, db);
                });
  }

  // --- backward ---

  void backward(Var loss, T seed = T(1)) {
    Node& ln = nodes_[check(loss)];
    require(ln.val.size() == 1, "backward: loss must be scalar");
    require(ln.needs_grad, "backward: loss does not depend on any grad-requiring input");
    ensure_grad(loss.id);
    ln.grad[0] += seed;
    for (int64_t i = static_cast<int64_t>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.needs_grad && n.back && !n.grad.empty()) n.back(*this, n);
    }
  }

  bool needs(Var v) const { return nodes_[check(v)].needs_grad; }

  void accum(Var v, const Tensor& g) {
    Node& n = nodes_[check(v)];
    if (!n.needs_grad) return;
    ensure_grad(v.id);
    require(n.grad.same_shape(g), "gradient shape mismatch");
    for (int64_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }

  size_t num_nodes() const { return nodes_.size(); }

 private:
  int check(Var v) const {
    require(v.id >= 0 && v.id < static_cast<int>(nodes_.size()), "invalid graph var");
    return v.id;
  }

  void ensure_grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty() && n.val.size() > 0) n.grad = Tensor(n.val.shape());
  }

  Var push(Tensor val, bool needs_grad, std::function<void(GraphT&, Node&)> back) {
    Node n;
    n.val = std::move(val);
    n.needs_grad = needs_grad;
    if (needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

using Graph = GraphT<float>;
using GraphD = GraphT<double>;

}  // namespace cdk
