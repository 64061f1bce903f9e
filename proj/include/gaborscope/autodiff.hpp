#ifndef GABORSCOPE_AUTODIFF_HPP
#define GABORSCOPE_AUTODIFF_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gaborscope/rng.hpp"
#include "gaborscope/tensor.hpp"

namespace gaborscope {

// Trainable tensor living outside any graph. Graphs reference it; backward
// passes accumulate into grad until zero_grad().
template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor<T>(value.shape);
  }

  void zero_grad() { grad.fill(T(0)); }
};

// ---------------------------------------------------------------------------
// raw kernels shared by forward and backward closures
// ---------------------------------------------------------------------------

// y[co][t] = bias[co] + sum_ci sum_k w[(co*Ci+ci)*K+k] * x[ci*Lx + t + k - pad_left]
// with x treated as zero outside [0, Lx). Lout chosen by the caller. The
// K==1 and same-padded K==3 shapes carry nearly all the training flops, so
// they get single-pass fused loops; everything else shares the generic path.
template <class T>
void xcorr1d_forward(const T* x, int Ci, int Lx, const T* w, int Co, int K, const T* bias,
                     int pad_left, int Lout, T* y) {
  const bool fused1 = K == 1 && pad_left == 0 && Lout == Lx;
  const bool fused3 = K == 3 && pad_left == 1 && Lout == Lx && Lx >= 2;
  int co = 0;
  if (fused1 || fused3) {
    // four output rows per block so each input row is streamed once per four
    const std::size_t ws = static_cast<std::size_t>(Ci) * K;
    for (; co + 4 <= Co; co += 4) {
      T* __restrict y0 = y + static_cast<std::size_t>(co + 0) * Lout;
      T* __restrict y1 = y + static_cast<std::size_t>(co + 1) * Lout;
      T* __restrict y2 = y + static_cast<std::size_t>(co + 2) * Lout;
      T* __restrict y3 = y + static_cast<std::size_t>(co + 3) * Lout;
      const T b0 = bias ? bias[co + 0] : T(0);
      const T b1 = bias ? bias[co + 1] : T(0);
      const T b2 = bias ? bias[co + 2] : T(0);
      const T b3 = bias ? bias[co + 3] : T(0);
      for (int t = 0; t < Lout; ++t) y0[t] = b0;
      for (int t = 0; t < Lout; ++t) y1[t] = b1;
      for (int t = 0; t < Lout; ++t) y2[t] = b2;
      for (int t = 0; t < Lout; ++t) y3[t] = b3;
      for (int ci = 0; ci < Ci; ++ci) {
        const T* __restrict xr = x + static_cast<std::size_t>(ci) * Lx;
        const T* wr = w + static_cast<std::size_t>(co) * ws + static_cast<std::size_t>(ci) * K;
        if (fused1) {
          const T w0 = wr[0], w1 = wr[ws], w2 = wr[2 * ws], w3 = wr[3 * ws];
          for (int t = 0; t < Lout; ++t) {
            const T xv = xr[t];
            y0[t] += w0 * xv;
            y1[t] += w1 * xv;
            y2[t] += w2 * xv;
            y3[t] += w3 * xv;
          }
        } else {
          const T w00 = wr[0], w01 = wr[1], w02 = wr[2];
          const T w10 = wr[ws + 0], w11 = wr[ws + 1], w12 = wr[ws + 2];
          const T w20 = wr[2 * ws + 0], w21 = wr[2 * ws + 1], w22 = wr[2 * ws + 2];
          const T w30 = wr[3 * ws + 0], w31 = wr[3 * ws + 1], w32 = wr[3 * ws + 2];
          y0[0] += w01 * xr[0] + w02 * xr[1];
          y1[0] += w11 * xr[0] + w12 * xr[1];
          y2[0] += w21 * xr[0] + w22 * xr[1];
          y3[0] += w31 * xr[0] + w32 * xr[1];
          for (int t = 1; t < Lout - 1; ++t) {
            const T xa = xr[t - 1], xb = xr[t], xc = xr[t + 1];
            y0[t] += w00 * xa + w01 * xb + w02 * xc;
            y1[t] += w10 * xa + w11 * xb + w12 * xc;
            y2[t] += w20 * xa + w21 * xb + w22 * xc;
            y3[t] += w30 * xa + w31 * xb + w32 * xc;
          }
          const int e = Lout - 1;
          y0[e] += w00 * xr[e - 1] + w01 * xr[e];
          y1[e] += w10 * xr[e - 1] + w11 * xr[e];
          y2[e] += w20 * xr[e - 1] + w21 * xr[e];
          y3[e] += w30 * xr[e - 1] + w31 * xr[e];
        }
      }
    }
  }
  for (; co < Co; ++co) {
    T* __restrict yr = y + static_cast<std::size_t>(co) * Lout;
    const T b = bias ? bias[co] : T(0);
    for (int t = 0; t < Lout; ++t) yr[t] = b;
    for (int ci = 0; ci < Ci; ++ci) {
      const T* __restrict xr = x + static_cast<std::size_t>(ci) * Lx;
      const T* __restrict wr = w + (static_cast<std::size_t>(co) * Ci + ci) * K;
      if (fused1) {
        const T wv = wr[0];
        for (int t = 0; t < Lout; ++t) yr[t] += wv * xr[t];
      } else if (fused3) {
        const T w0 = wr[0], w1 = wr[1], w2 = wr[2];
        yr[0] += w1 * xr[0] + w2 * xr[1];
        for (int t = 1; t < Lout - 1; ++t)
          yr[t] += w0 * xr[t - 1] + w1 * xr[t] + w2 * xr[t + 1];
        yr[Lout - 1] += w0 * xr[Lout - 2] + w1 * xr[Lout - 1];
      } else {
        for (int k = 0; k < K; ++k) {
          const T wv = wr[k];
          const int off = k - pad_left;
          const int t0 = std::max(0, -off);
          const int t1 = std::min(Lout, Lx - off);
          for (int t = t0; t < t1; ++t) yr[t] += wv * xr[t + off];
        }
      }
    }
  }
}

template <class T>
void xcorr1d_backward_x(const T* dy, int Co, int Lout, const T* w, int Ci, int K, int Lx,
                        int pad_left, T* dx) {
  const bool fused1 = K == 1 && pad_left == 0 && Lout == Lx;
  const bool fused3 = K == 3 && pad_left == 1 && Lout == Lx && Lx >= 2;
  if (fused1 || fused3) {
    // x[s] feeds y[s+1] through w0, y[s] through w1, y[s-1] through w2;
    // four input rows per block so each dy row is streamed once per four
    int ci = 0;
    for (; ci + 4 <= Ci; ci += 4) {
      T* __restrict d0 = dx + static_cast<std::size_t>(ci + 0) * Lx;
      T* __restrict d1 = dx + static_cast<std::size_t>(ci + 1) * Lx;
      T* __restrict d2 = dx + static_cast<std::size_t>(ci + 2) * Lx;
      T* __restrict d3 = dx + static_cast<std::size_t>(ci + 3) * Lx;
      for (int co = 0; co < Co; ++co) {
        const T* __restrict dyr = dy + static_cast<std::size_t>(co) * Lout;
        const T* wr = w + (static_cast<std::size_t>(co) * Ci + ci) * K;
        if (fused1) {
          const T w0 = wr[0], w1 = wr[1], w2 = wr[2], w3 = wr[3];
          for (int t = 0; t < Lout; ++t) {
            const T g = dyr[t];
            d0[t] += w0 * g;
            d1[t] += w1 * g;
            d2[t] += w2 * g;
            d3[t] += w3 * g;
          }
        } else {
          const T w00 = wr[0], w01 = wr[1], w02 = wr[2];
          const T w10 = wr[3], w11 = wr[4], w12 = wr[5];
          const T w20 = wr[6], w21 = wr[7], w22 = wr[8];
          const T w30 = wr[9], w31 = wr[10], w32 = wr[11];
          d0[0] += w01 * dyr[0] + w00 * dyr[1];
          d1[0] += w11 * dyr[0] + w10 * dyr[1];
          d2[0] += w21 * dyr[0] + w20 * dyr[1];
          d3[0] += w31 * dyr[0] + w30 * dyr[1];
          for (int s = 1; s < Lx - 1; ++s) {
            const T ga = dyr[s + 1], gb = dyr[s], gc = dyr[s - 1];
            d0[s] += w00 * ga + w01 * gb + w02 * gc;
            d1[s] += w10 * ga + w11 * gb + w12 * gc;
            d2[s] += w20 * ga + w21 * gb + w22 * gc;
            d3[s] += w30 * ga + w31 * gb + w32 * gc;
          }
          const int e = Lx - 1;
          d0[e] += w01 * dyr[e] + w02 * dyr[e - 1];
          d1[e] += w11 * dyr[e] + w12 * dyr[e - 1];
          d2[e] += w21 * dyr[e] + w22 * dyr[e - 1];
          d3[e] += w31 * dyr[e] + w32 * dyr[e - 1];
        }
      }
    }
    for (; ci < Ci; ++ci) {
      T* __restrict dxr = dx + static_cast<std::size_t>(ci) * Lx;
      for (int co = 0; co < Co; ++co) {
        const T* __restrict dyr = dy + static_cast<std::size_t>(co) * Lout;
        const T* __restrict wr = w + (static_cast<std::size_t>(co) * Ci + ci) * K;
        if (fused1) {
          const T wv = wr[0];
          for (int t = 0; t < Lout; ++t) dxr[t] += wv * dyr[t];
        } else {
          const T w0 = wr[0], w1 = wr[1], w2 = wr[2];
          dxr[0] += w1 * dyr[0] + w0 * dyr[1];
          for (int s = 1; s < Lx - 1; ++s)
            dxr[s] += w0 * dyr[s + 1] + w1 * dyr[s] + w2 * dyr[s - 1];
          dxr[Lx - 1] += w1 * dyr[Lx - 1] + w2 * dyr[Lx - 2];
        }
      }
    }
    return;
  }
  for (int co = 0; co < Co; ++co) {
    const T* __restrict dyr = dy + static_cast<std::size_t>(co) * Lout;
    for (int ci = 0; ci < Ci; ++ci) {
      T* __restrict dxr = dx + static_cast<std::size_t>(ci) * Lx;
      const T* __restrict wr = w + (static_cast<std::size_t>(co) * Ci + ci) * K;
      for (int k = 0; k < K; ++k) {
        const T wv = wr[k];
        const int off = k - pad_left;
        const int t0 = std::max(0, -off);
        const int t1 = std::min(Lout, Lx - off);
        for (int t = t0; t < t1; ++t) dxr[t + off] += wv * dyr[t];
      }
    }
  }
}

// Reductions accumulate into a short lane array; a single scalar accumulator
// carries a loop dependency that blocks autovectorization under strict FP.
template <class T>
T blocked_dot(const T* __restrict a, const T* __restrict b, int n) {
  constexpr int W = 16;
  T lane[W] = {};
  int t = 0;
  for (; t + W <= n; t += W)
    for (int j = 0; j < W; ++j) lane[j] += a[t + j] * b[t + j];
  T acc = T(0);
  for (; t < n; ++t) acc += a[t] * b[t];
  for (int j = 0; j < W; ++j) acc += lane[j];
  return acc;
}

template <class T>
T blocked_sum(const T* __restrict a, int n) {
  constexpr int W = 16;
  T lane[W] = {};
  int t = 0;
  for (; t + W <= n; t += W)
    for (int j = 0; j < W; ++j) lane[j] += a[t + j];
  T acc = T(0);
  for (; t < n; ++t) acc += a[t];
  for (int j = 0; j < W; ++j) acc += lane[j];
  return acc;
}

template <class T>
void xcorr1d_backward_w(const T* dy, int Co, int Lout, const T* x, int Ci, int Lx, int K,
                        int pad_left, T* dw, T* db) {
  for (int co = 0; co < Co; ++co) {
    const T* __restrict dyr = dy + static_cast<std::size_t>(co) * Lout;
    if (db) db[co] += blocked_sum(dyr, Lout);
    for (int ci = 0; ci < Ci; ++ci) {
      const T* __restrict xr = x + static_cast<std::size_t>(ci) * Lx;
      T* __restrict dwr = dw + (static_cast<std::size_t>(co) * Ci + ci) * K;
      for (int k = 0; k < K; ++k) {
        const int off = k - pad_left;
        const int t0 = std::max(0, -off);
        const int t1 = std::min(Lout, Lx - off);
        if (t1 > t0) dwr[k] += blocked_dot(dyr + t0, xr + t0 + off, t1 - t0);
      }
    }
  }
}

enum class PadMode { Valid, Same };

// ---------------------------------------------------------------------------
// reverse-mode graph
// ---------------------------------------------------------------------------

// Non-owning view of running batchnorm statistics; the layer object owns the
// tensors, the graph node updates them as a forward side effect in train mode.
template <class T>
struct BatchNormBuffers {
  Tensor<T>* running_mean = nullptr;
  Tensor<T>* running_var = nullptr;
};

// Per-layer LSTM parameter handle: node ids of w_ih [4H, D], w_hh [4H, H],
// b_ih [4H], b_hh [4H], gate order (input, forget, cell, output).
struct LstmLayerIds {
  int w_ih = -1;
  int w_hh = -1;
  int b_ih = -1;
  int b_hh = -1;
};

// One computation graph, built per forward pass. Creation order is a
// topological order, so the backward pass just walks node ids in reverse.
// Adjoints live on the nodes and start zeroed each backward().
template <class T>
class Graph {
 public:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated on first contribution
    bool needs_grad = false;
    Param<T>* bound = nullptr;
    std::function<void(Graph&, int)> back;  // may be empty for leaves
  };

  std::vector<Node> nodes;

  const Tensor<T>& value(int id) const { return nodes[id].value; }
  Tensor<T>& value(int id) { return nodes[id].value; }

  // Adjoint of a node after backward(); zero tensor if nothing reached it.
  Tensor<T> adjoint(int id) const {
    if (nodes[id].grad.size() > 0) return nodes[id].grad;
    return Tensor<T>(nodes[id].value.shape);
  }

  int constant(Tensor<T> v) {
    return add_node(std::move(v), false, nullptr, {});
  }

  // Grad-tracked leaf that is not a Param (used for inputs under test).
  int leaf(Tensor<T> v) {
    return add_node(std::move(v), true, nullptr, {});
  }

  int param(Param<T>& p) {
    return add_node(p.value, true, &p, {});
  }

  int relu(int x) {
    const Tensor<T>& xv = nodes[x].value;
    Tensor<T> y(xv.shape);
    for (std::int64_t i = 0; i < xv.size(); ++i) y.data[i] = xv.data[i] > T(0) ? xv.data[i] : T(0);
    int id = add_node(std::move(y), nodes[x].needs_grad, nullptr,
                      [x](Graph& g, int self) {
                        const Tensor<T>& xv = g.nodes[x].value;
                        const Tensor<T>& dy = g.nodes[self].grad;
                        Tensor<T>& dx = g.grad_of(x);
                        for (std::int64_t i = 0; i < xv.size(); ++i)
                          if (xv.data[i] > T(0)) dx.data[i] += dy.data[i];
                      });
    return id;
  }

  // x: [Ci, L] (or [L] treated as one channel), w: [Co, Ci, K], b: [Co] or -1.
  // Correlation form: output t taps input t + k, which is what the network
  // layers compute.
  int cross_correlate1d(int x, int w, int b, PadMode pad) {
    return corr_impl(x, w, b, pad, false);
  }

  // True convolution: kernel reversed relative to cross_correlate1d.
  int conv1d(int x, int w, int b, PadMode pad) {
    return corr_impl(x, w, b, pad, true);
  }

  // x flattened to [n]; w: [out, n]; b: [out] or -1.
  int dense(int x, int w, int b) {
    const Tensor<T>& xv = nodes[x].value;
    const Tensor<T>& wv = nodes[w].value;
    const int out = wv.dim(0);
    const int n = wv.dim(1);
    if (xv.size() != n) throw std::invalid_argument("dense: weight/input size mismatch");
    Tensor<T> y({out});
    for (int o = 0; o < out; ++o) {
      const T* wr = wv.row(o);
      T acc = b >= 0 ? nodes[b].value.data[o] : T(0);
      for (int i = 0; i < n; ++i) acc += wr[i] * xv.data[i];
      y.data[o] = acc;
    }
    bool ng = nodes[x].needs_grad || nodes[w].needs_grad || (b >= 0 && nodes[b].needs_grad);
    return add_node(std::move(y), ng, nullptr, [x, w, b, out, n](Graph& g, int self) {
      const Tensor<T>& dy = g.nodes[self].grad;
      const Tensor<T>& xv = g.nodes[x].value;
      const Tensor<T>& wv = g.nodes[w].value;
      if (g.nodes[x].needs_grad) {
        Tensor<T>& dx = g.grad_of(x);
        for (int o = 0; o < out; ++o) {
          const T d = dy.data[o];
          const T* wr = wv.row(o);
          for (int i = 0; i < n; ++i) dx.data[i] += d * wr[i];
        }
      }
      if (g.nodes[w].needs_grad) {
        Tensor<T>& dw = g.grad_of(w);
        for (int o = 0; o < out; ++o) {
          const T d = dy.data[o];
          T* dwr = dw.row(o);
          for (int i = 0; i < n; ++i) dwr[i] += d * xv.data[i];
        }
      }
      if (b >= 0 && g.nodes[b].needs_grad) {
        Tensor<T>& db = g.grad_of(b);
        for (int o = 0; o < out; ++o) db.data[o] += dy.data[o];
      }
    });
  }

  // x: [C, L]. Pools each channel independently; trailing samples that do not
  // fill a window are dropped. Ties resolve to the earliest index.
  int maxpool1d(int x, int width, int stride) {
    const Tensor<T>& xv = nodes[x].value;
    const int C = xv.dim(0);
    const int L = xv.dim(1);
    const int Lout = L >= width ? (L - width) / stride + 1 : 0;
    Tensor<T> y({C, Lout});
    auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(C) * Lout);
    for (int c = 0; c < C; ++c) {
      const T* xr = xv.row(c);
      for (int j = 0; j < Lout; ++j) {
        int best = j * stride;
        for (int o = 1; o < width; ++o)
          if (xr[j * stride + o] > xr[best]) best = j * stride + o;
        y.at(c, j) = xr[best];
        (*argmax)[static_cast<std::size_t>(c) * Lout + j] = best;
      }
    }
    return add_node(std::move(y), nodes[x].needs_grad, nullptr,
                    [x, C, Lout, argmax](Graph& g, int self) {
                      if (!g.nodes[x].needs_grad) return;
                      const Tensor<T>& dy = g.nodes[self].grad;
                      Tensor<T>& dx = g.grad_of(x);
                      for (int c = 0; c < C; ++c)
                        for (int j = 0; j < Lout; ++j)
                          dx.row(c)[(*argmax)[static_cast<std::size_t>(c) * Lout + j]] +=
                              dy.at(c, j);
                    });
  }

  // x: [C, L], gamma/beta: [C]. In batch-stats mode the normalization uses
  // this sample's per-channel statistics over L and (optionally) folds them
  // into the running buffers; otherwise it is a fixed affine map using the
  // running statistics.
  int batchnorm1d(int x, int gamma, int beta, BatchNormBuffers<T> bufs, bool use_batch_stats,
                  bool update_running, T momentum, T eps) {
    const Tensor<T>& xv = nodes[x].value;
    const int C = xv.dim(0);
    const int L = xv.dim(1);
    const Tensor<T>& gv = nodes[gamma].value;
    const Tensor<T>& bv = nodes[beta].value;
    Tensor<T> y({C, L});
    auto mean = std::make_shared<std::vector<T>>(C);
    auto inv_std = std::make_shared<std::vector<T>>(C);
    auto xhat = std::make_shared<Tensor<T>>(std::vector<int>{C, L});
    for (int c = 0; c < C; ++c) {
      T mu, var;
      if (use_batch_stats) {
        T s = T(0);
        const T* xr = xv.row(c);
        for (int t = 0; t < L; ++t) s += xr[t];
        mu = s / T(L);
        T v = T(0);
        for (int t = 0; t < L; ++t) {
          const T d = xr[t] - mu;
          v += d * d;
        }
        var = v / T(L);
        if (update_running) {
          bufs.running_mean->data[c] =
              (T(1) - momentum) * bufs.running_mean->data[c] + momentum * mu;
          bufs.running_var->data[c] =
              (T(1) - momentum) * bufs.running_var->data[c] + momentum * var;
        }
      } else {
        mu = bufs.running_mean->data[c];
        var = bufs.running_var->data[c];
      }
      const T is = T(1) / std::sqrt(var + eps);
      (*mean)[c] = mu;
      (*inv_std)[c] = is;
      const T* xr = xv.row(c);
      T* hr = xhat->row(c);
      T* yr = y.row(c);
      for (int t = 0; t < L; ++t) {
        hr[t] = (xr[t] - mu) * is;
        yr[t] = gv.data[c] * hr[t] + bv.data[c];
      }
    }
    bool ng = nodes[x].needs_grad || nodes[gamma].needs_grad || nodes[beta].needs_grad;
    return add_node(
        std::move(y), ng, nullptr,
        [x, gamma, beta, C, L, use_batch_stats, inv_std, xhat](Graph& g, int self) {
          const Tensor<T>& dy = g.nodes[self].grad;
          const Tensor<T>& gv = g.nodes[gamma].value;
          for (int c = 0; c < C; ++c) {
            const T* dyr = dy.row(c);
            const T* hr = xhat->row(c);
            if (g.nodes[gamma].needs_grad) {
              T acc = T(0);
              for (int t = 0; t < L; ++t) acc += dyr[t] * hr[t];
              g.grad_of(gamma).data[c] += acc;
            }
            if (g.nodes[beta].needs_grad) {
              T acc = T(0);
              for (int t = 0; t < L; ++t) acc += dyr[t];
              g.grad_of(beta).data[c] += acc;
            }
            if (g.nodes[x].needs_grad) {
              T* dxr = g.grad_of(x).row(c);
              const T gis = gv.data[c] * (*inv_std)[c];
              if (use_batch_stats) {
                // statistics depend on x, so backprop through mean/var
                T sum_dy = T(0), sum_dy_h = T(0);
                for (int t = 0; t < L; ++t) {
                  sum_dy += dyr[t];
                  sum_dy_h += dyr[t] * hr[t];
                }
                const T m_dy = sum_dy / T(L);
                const T m_dy_h = sum_dy_h / T(L);
                for (int t = 0; t < L; ++t)
                  dxr[t] += gis * (dyr[t] - m_dy - hr[t] * m_dy_h);
              } else {
                for (int t = 0; t < L; ++t) dxr[t] += gis * dyr[t];
              }
            }
          }
        });
  }

  // Inverted dropout. Active mode zeroes each element with probability p and
  // scales survivors by 1/(1-p); inactive mode is the identity.
  int dropout(int x, T p, bool active, CounterRng& rng) {
    if (!active || p <= T(0)) {
      // identity pass-through node so call sites do not branch
      Tensor<T> y = nodes[x].value;
      return add_node(std::move(y), nodes[x].needs_grad, nullptr, [x](Graph& g, int self) {
        if (!g.nodes[x].needs_grad) return;
        const Tensor<T>& dy = g.nodes[self].grad;
        Tensor<T>& dx = g.grad_of(x);
        for (std::int64_t i = 0; i < dy.size(); ++i) dx.data[i] += dy.data[i];
      });
    }
    const Tensor<T>& xv = nodes[x].value;
    auto mask = std::make_shared<std::vector<T>>(xv.size());
    const T keep_scale = T(1) / (T(1) - p);
    Tensor<T> y(xv.shape);
    for (std::int64_t i = 0; i < xv.size(); ++i) {
      const T m = rng.uniform() < static_cast<double>(p) ? T(0) : keep_scale;
      (*mask)[i] = m;
      y.data[i] = xv.data[i] * m;
    }
    return add_node(std::move(y), nodes[x].needs_grad, nullptr, [x, mask](Graph& g, int self) {
      if (!g.nodes[x].needs_grad) return;
      const Tensor<T>& dy = g.nodes[self].grad;
      Tensor<T>& dx = g.grad_of(x);
      for (std::int64_t i = 0; i < dy.size(); ++i) dx.data[i] += dy.data[i] * (*mask)[i];
    });
  }

  // Stacked unidirectional LSTM. x: [T_steps, D]. Returns the top layer's
  // hidden state sequence [T_steps, H]. Initial hidden and cell states are
  // zero. Gate order in the packed weights: input, forget, cell, output.
  int lstm(int x, const std::vector<LstmLayerIds>& layers, int hidden) {
    const Tensor<T>& xv = nodes[x].value;
    const int Tn = xv.dim(0);
    const int H = hidden;
    const int num_layers = static_cast<int>(layers.size());

    struct Cache {
      // per layer: inputs to that layer [Tn, D_l], gates [Tn, 4H], c [Tn, H],
      // tanh(c) [Tn, H], h [Tn, H]
      std::vector<Tensor<T>> input, gates, c, tanh_c, h;
    };
    auto cache = std::make_shared<Cache>();

    Tensor<T> layer_in = xv;
    for (int l = 0; l < num_layers; ++l) {
      const Tensor<T>& w_ih = nodes[layers[l].w_ih].value;
      const Tensor<T>& w_hh = nodes[layers[l].w_hh].value;
      const Tensor<T>& b_ih = nodes[layers[l].b_ih].value;
      const Tensor<T>& b_hh = nodes[layers[l].b_hh].value;
      const int D = layer_in.dim(1);
      Tensor<T> gates({Tn, 4 * H});
      Tensor<T> cs({Tn, H});
      Tensor<T> tanh_cs({Tn, H});
      Tensor<T> hs({Tn, H});
      std::vector<T> h_prev(H, T(0)), c_prev(H, T(0));
      for (int t = 0; t < Tn; ++t) {
        T* g = gates.row(t);
        const T* xt = layer_in.row(t);
        for (int j = 0; j < 4 * H; ++j) {
          T acc = b_ih.data[j] + b_hh.data[j];
          const T* wi = w_ih.row(j);
          for (int d = 0; d < D; ++d) acc += wi[d] * xt[d];
          const T* wh = w_hh.row(j);
          for (int d = 0; d < H; ++d) acc += wh[d] * h_prev[d];
          g[j] = acc;
        }
        T* cr = cs.row(t);
        T* tr = tanh_cs.row(t);
        T* hr = hs.row(t);
        for (int j = 0; j < H; ++j) {
          const T ig = sigmoid(g[j]);
          const T fg = sigmoid(g[H + j]);
          const T gg = std::tanh(g[2 * H + j]);
          const T og = sigmoid(g[3 * H + j]);
          // store activated gates in place; backward needs them, not the
          // pre-activations
          g[j] = ig;
          g[H + j] = fg;
          g[2 * H + j] = gg;
          g[3 * H + j] = og;
          cr[j] = fg * c_prev[j] + ig * gg;
          tr[j] = std::tanh(cr[j]);
          hr[j] = og * tr[j];
        }
        for (int j = 0; j < H; ++j) {
          h_prev[j] = hr[j];
          c_prev[j] = cr[j];
        }
      }
      cache->input.push_back(layer_in);
      cache->gates.push_back(std::move(gates));
      cache->c.push_back(std::move(cs));
      cache->tanh_c.push_back(std::move(tanh_cs));
      cache->h.push_back(hs);
      layer_in = std::move(hs);
    }

    bool ng = nodes[x].needs_grad;
    for (const auto& l : layers)
      ng = ng || nodes[l.w_ih].needs_grad || nodes[l.w_hh].needs_grad ||
           nodes[l.b_ih].needs_grad || nodes[l.b_hh].needs_grad;

    Tensor<T> out = cache->h.back();
    return add_node(std::move(out), ng, nullptr,
                    [x, layers, Tn, H, num_layers, cache](Graph& g, int self) {
                      g.lstm_backward(x, layers, Tn, H, num_layers, *cache,
                                      g.nodes[self].grad);
                    });
  }

  // Row r of a 2-D value as a 1-D node.
  int row_select(int x, int r) {
    const Tensor<T>& xv = nodes[x].value;
    const int cols = xv.dim(1);
    Tensor<T> y({cols});
    for (int i = 0; i < cols; ++i) y.data[i] = xv.at(r, i);
    return add_node(std::move(y), nodes[x].needs_grad, nullptr, [x, r, cols](Graph& g, int self) {
      if (!g.nodes[x].needs_grad) return;
      const Tensor<T>& dy = g.nodes[self].grad;
      Tensor<T>& dx = g.grad_of(x);
      for (int i = 0; i < cols; ++i) dx.at(r, i) += dy.data[i];
    });
  }

  // Concatenates along dim 0. 1-D: vectors join end to end; 2-D: rows stack
  // (column counts must match).
  int concat0(int a, int b) {
    const Tensor<T>& av = nodes[a].value;
    const Tensor<T>& bv = nodes[b].value;
    Tensor<T> y;
    if (av.ndim() == 1) {
      y = Tensor<T>({static_cast<int>(av.size() + bv.size())});
    } else {
      if (av.dim(1) != bv.dim(1))
        throw std::invalid_argument("concat0: column mismatch");
      y = Tensor<T>({av.dim(0) + bv.dim(0), av.dim(1)});
    }
    std::copy(av.data.begin(), av.data.end(), y.data.begin());
    std::copy(bv.data.begin(), bv.data.end(), y.data.begin() + av.size());
    const std::int64_t na = av.size();
    return add_node(std::move(y), nodes[a].needs_grad || nodes[b].needs_grad, nullptr,
                    [a, b, na](Graph& g, int self) {
                      const Tensor<T>& dy = g.nodes[self].grad;
                      if (g.nodes[a].needs_grad) {
                        Tensor<T>& da = g.grad_of(a);
                        for (std::int64_t i = 0; i < na; ++i) da.data[i] += dy.data[i];
                      }
                      if (g.nodes[b].needs_grad) {
                        Tensor<T>& db = g.grad_of(b);
                        for (std::int64_t i = na; i < dy.size(); ++i)
                          db.data[i - na] += dy.data[i];
                      }
                    });
  }

  // Numerically stable softmax over a 1-D vector.
  int softmax(int x) {
    const Tensor<T>& xv = nodes[x].value;
    Tensor<T> y(xv.shape);
    T mx = xv.data[0];
    for (std::int64_t i = 1; i < xv.size(); ++i) mx = std::max(mx, xv.data[i]);
    T sum = T(0);
    for (std::int64_t i = 0; i < xv.size(); ++i) {
      y.data[i] = std::exp(xv.data[i] - mx);
      sum += y.data[i];
    }
    for (std::int64_t i = 0; i < xv.size(); ++i) y.data[i] /= sum;
    return add_node(std::move(y), nodes[x].needs_grad, nullptr, [x](Graph& g, int self) {
      if (!g.nodes[x].needs_grad) return;
      const Tensor<T>& y = g.nodes[self].value;
      const Tensor<T>& dy = g.nodes[self].grad;
      Tensor<T>& dx = g.grad_of(x);
      T dot = T(0);
      for (std::int64_t i = 0; i < y.size(); ++i) dot += dy.data[i] * y.data[i];
      for (std::int64_t i = 0; i < y.size(); ++i)
        dx.data[i] += y.data[i] * (dy.data[i] - dot);
    });
  }

  // -log softmax(logits)[target] in log-sum-exp form; scalar [1] output.
  int softmax_cross_entropy(int logits, int target) {
    const Tensor<T>& xv = nodes[logits].value;
    const int n = static_cast<int>(xv.size());
    if (target < 0 || target >= n)
      throw std::invalid_argument("softmax_cross_entropy: target out of range");
    T mx = xv.data[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, xv.data[i]);
    T sum = T(0);
    for (int i = 0; i < n; ++i) sum += std::exp(xv.data[i] - mx);
    Tensor<T> y({1});
    y.data[0] = mx + std::log(sum) - xv.data[target];
    return add_node(std::move(y), nodes[logits].needs_grad, nullptr,
                    [logits, target, n](Graph& g, int self) {
                      if (!g.nodes[logits].needs_grad) return;
                      const T d = g.nodes[self].grad.data[0];
                      const Tensor<T>& xv = g.nodes[logits].value;
                      Tensor<T>& dx = g.grad_of(logits);
                      T mx = xv.data[0];
                      for (int i = 1; i < n; ++i) mx = std::max(mx, xv.data[i]);
                      T sum = T(0);
                      for (int i = 0; i < n; ++i) sum += std::exp(xv.data[i] - mx);
                      for (int i = 0; i < n; ++i) {
                        T p = std::exp(xv.data[i] - mx) / sum;
                        if (i == target) p -= T(1);
                        dx.data[i] += d * p;
                      }
                    });
  }

  // Seeds the root with ones (scalar roots in practice) and walks nodes in
  // reverse creation order. Adjoints from any previous backward on this graph
  // are cleared first.
  void backward(int root) {
    Tensor<T> seed(nodes[root].value.shape);
    seed.fill(T(1));
    backward(root, seed);
  }

  // Seeded variant: used to pull gradients of one selected logit.
  void backward(int root, const Tensor<T>& seed) {
    for (auto& n : nodes)
      if (n.grad.size() > 0) n.grad.fill(T(0));
    Tensor<T>& g = grad_of(root);
    for (std::int64_t i = 0; i < seed.size(); ++i) g.data[i] += seed.data[i];
    for (int id = root; id >= 0; --id) {
      Node& n = nodes[id];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.back) n.back(*this, id);
      if (n.bound) {
        for (std::int64_t i = 0; i < n.grad.size(); ++i)
          n.bound->grad.data[i] += n.grad.data[i];
      }
    }
  }

  Tensor<T>& grad_of(int id) {
    Node& n = nodes[id];
    if (n.grad.size() == 0) n.grad = Tensor<T>(n.value.shape);
    return n.grad;
  }

  int add_node(Tensor<T> value, bool needs_grad, Param<T>* bound,
               std::function<void(Graph&, int)> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.bound = bound;
    n.back = std::move(back);
    nodes.push_back(std::move(n));
    return static_cast<int>(nodes.size()) - 1;
  }

 private:
  static T sigmoid(T v) { return T(1) / (T(1) + std::exp(-v)); }

  int corr_impl(int x, int w, int b, PadMode pad, bool flip) {
    const Tensor<T>& xv = nodes[x].value;
    const int ci_x = xv.ndim() == 1 ? 1 : xv.dim(0);
    const int Lx = xv.ndim() == 1 ? static_cast<int>(xv.size()) : xv.dim(1);
    const Tensor<T>& wv = nodes[w].value;
    const int Co = wv.dim(0);
    const int Ci = wv.dim(1);
    const int K = wv.dim(2);
    if (ci_x != Ci) throw std::invalid_argument("conv: channel mismatch");
    const int pad_left = pad == PadMode::Same ? (K - 1) / 2 : 0;
    const int Lout = pad == PadMode::Same ? Lx : Lx - K + 1;
    if (Lout <= 0) throw std::invalid_argument("conv: input shorter than kernel");

    // true convolution = correlation with the kernel reversed along k
    std::shared_ptr<Tensor<T>> wk;
    if (flip) {
      wk = std::make_shared<Tensor<T>>(wv.shape);
      for (int co = 0; co < Co; ++co)
        for (int ci = 0; ci < Ci; ++ci)
          for (int k = 0; k < K; ++k)
            wk->data[(static_cast<std::size_t>(co) * Ci + ci) * K + k] =
                wv.data[(static_cast<std::size_t>(co) * Ci + ci) * K + (K - 1 - k)];
    }
    const T* wptr = flip ? wk->data.data() : wv.data.data();

    Tensor<T> y({Co, Lout});
    const T* bias = b >= 0 ? nodes[b].value.data.data() : nullptr;
    xcorr1d_forward(xv.data.data(), Ci, Lx, wptr, Co, K, bias, pad_left, Lout, y.data.data());

    bool ng = nodes[x].needs_grad || nodes[w].needs_grad || (b >= 0 && nodes[b].needs_grad);
    return add_node(
        std::move(y), ng, nullptr,
        [x, w, b, Co, Ci, K, Lx, Lout, pad_left, flip, wk](Graph& g, int self) {
          const Tensor<T>& dy = g.nodes[self].grad;
          const Tensor<T>& wv = g.nodes[w].value;
          const T* wptr = flip ? wk->data.data() : wv.data.data();
          const Tensor<T>& xv = g.nodes[x].value;
          if (g.nodes[x].needs_grad) {
            Tensor<T>& dx = g.grad_of(x);
            xcorr1d_backward_x(dy.data.data(), Co, Lout, wptr, Ci, K, Lx, pad_left,
                               dx.data.data());
          }
          if (g.nodes[w].needs_grad || (b >= 0 && g.nodes[b].needs_grad)) {
            Tensor<T> dw_corr(wv.shape);
            Tensor<T> db({Co});
            xcorr1d_backward_w(dy.data.data(), Co, Lout, xv.data.data(), Ci, Lx, K, pad_left,
                               dw_corr.data.data(),
                               b >= 0 && g.nodes[b].needs_grad ? db.data.data() : nullptr);
            if (g.nodes[w].needs_grad) {
              Tensor<T>& dw = g.grad_of(w);
              if (flip) {
                for (int co = 0; co < Co; ++co)
                  for (int ci = 0; ci < Ci; ++ci)
                    for (int k = 0; k < K; ++k)
                      dw.data[(static_cast<std::size_t>(co) * Ci + ci) * K + k] +=
                          dw_corr.data[(static_cast<std::size_t>(co) * Ci + ci) * K +
                                       (K - 1 - k)];
              } else {
                for (std::int64_t i = 0; i < dw.size(); ++i) dw.data[i] += dw_corr.data[i];
              }
            }
            if (b >= 0 && g.nodes[b].needs_grad) {
              Tensor<T>& dbg = g.grad_of(b);
              for (int co = 0; co < Co; ++co) dbg.data[co] += db.data[co];
            }
          }
        });
  }

  void lstm_backward(int x, const std::vector<LstmLayerIds>& layers, int Tn, int H,
                     int num_layers, const auto& cache, const Tensor<T>& dout) {
    Tensor<T> d_above = dout;  // gradient flowing into layer l's h sequence
    for (int l = num_layers - 1; l >= 0; --l) {
      const Tensor<T>& w_ih = nodes[layers[l].w_ih].value;
      const Tensor<T>& w_hh = nodes[layers[l].w_hh].value;
      const int D = cache.input[l].dim(1);
      const Tensor<T>& gates = cache.gates[l];
      const Tensor<T>& cs = cache.c[l];
      const Tensor<T>& tanh_cs = cache.tanh_c[l];
      const Tensor<T>& input = cache.input[l];

      Tensor<T> d_input({Tn, D});
      Tensor<T> dw_ih(w_ih.shape), dw_hh(w_hh.shape);
      Tensor<T> db({4 * H});
      std::vector<T> dh(H, T(0)), dc(H, T(0)), dgate(4 * H);

      for (int t = Tn - 1; t >= 0; --t) {
        for (int j = 0; j < H; ++j) dh[j] += d_above.at(t, j);
        const T* g = gates.row(t);
        const T* tr = tanh_cs.row(t);
        for (int j = 0; j < H; ++j) {
          const T ig = g[j], fg = g[H + j], gg = g[2 * H + j], og = g[3 * H + j];
          const T c_prev = t > 0 ? cs.at(t - 1, j) : T(0);
          dc[j] += dh[j] * og * (T(1) - tr[j] * tr[j]);
          const T d_og = dh[j] * tr[j];
          const T d_ig = dc[j] * gg;
          const T d_gg = dc[j] * ig;
          const T d_fg = dc[j] * c_prev;
          dgate[j] = d_ig * ig * (T(1) - ig);
          dgate[H + j] = d_fg * fg * (T(1) - fg);
          dgate[2 * H + j] = d_gg * (T(1) - gg * gg);
          dgate[3 * H + j] = d_og * og * (T(1) - og);
          dc[j] *= fg;  // becomes dc for t-1
          dh[j] = T(0);
        }
        const T* xt = input.row(t);
        for (int j = 0; j < 4 * H; ++j) {
          const T d = dgate[j];
          db.data[j] += d;
          T* dwi = dw_ih.row(j);
          for (int i = 0; i < D; ++i) dwi[i] += d * xt[i];
          const T* wi = w_ih.row(j);
          T* dir = d_input.row(t);
          for (int i = 0; i < D; ++i) dir[i] += d * wi[i];
          if (t > 0) {
            const T* h_prev = cache.h[l].row(t - 1);
            T* dwh = dw_hh.row(j);
            for (int i = 0; i < H; ++i) dwh[i] += d * h_prev[i];
            const T* wh = w_hh.row(j);
            for (int i = 0; i < H; ++i) dh[i] += d * wh[i];
          }
        }
      }

      auto deposit = [&](int id, const Tensor<T>& g) {
        if (id >= 0 && nodes[id].needs_grad) {
          Tensor<T>& dst = grad_of(id);
          for (std::int64_t i = 0; i < g.size(); ++i) dst.data[i] += g.data[i];
        }
      };
      deposit(layers[l].w_ih, dw_ih);
      deposit(layers[l].w_hh, dw_hh);
      deposit(layers[l].b_ih, db);
      deposit(layers[l].b_hh, db);
      d_above = std::move(d_input);
    }
    if (nodes[x].needs_grad) {
      Tensor<T>& dx = grad_of(x);
      for (std::int64_t i = 0; i < d_above.size(); ++i) dx.data[i] += d_above.data[i];
    }
  }
};

// ---------------------------------------------------------------------------
// finite-difference gradient checking
// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_rel_err = 0.0;
  double mean_rel_err = 0.0;
  long checked = 0;
  std::string worst;  // "name[index]" of the worst element

  bool pass(double tol) const { return checked > 0 && max_rel_err < tol; }
};

// Central-difference check of analytic gradients. loss_fn must rebuild the
// forward pass from the params' current values (re-seeding any internal RNG so
// stochastic ops replay identically); grad_fn must additionally run backward
// and deposit into each param's grad. If max_elems > 0 only that many
// elements per tensor are probed (seeded choice), which keeps big tensors
// affordable.
template <class T>
GradCheckResult grad_check(const std::function<T()>& loss_fn, const std::function<void()>& grad_fn,
                           const std::vector<Param<T>*>& params, T delta,
                           int max_elems = -1, std::uint64_t probe_seed = 0,
                           double denom_floor = 1e-6) {
  for (Param<T>* p : params) p->zero_grad();
  grad_fn();
  std::vector<Tensor<T>> analytic;
  analytic.reserve(params.size());
  for (Param<T>* p : params) analytic.push_back(p->grad);

  GradCheckResult res;
  CounterRng pick(probe_seed);
  double err_sum = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param<T>& p = *params[pi];
    std::vector<std::int64_t> idx;
    if (max_elems > 0 && p.value.size() > max_elems) {
      for (int i = 0; i < max_elems; ++i)
        idx.push_back(static_cast<std::int64_t>(pick.uniform_index(p.value.size())));
    } else {
      idx.resize(p.value.size());
      for (std::int64_t i = 0; i < p.value.size(); ++i) idx[i] = i;
    }
    for (std::int64_t i : idx) {
      const T saved = p.value.data[i];
      p.value.data[i] = saved + delta;
      const double f_plus = static_cast<double>(loss_fn());
      p.value.data[i] = saved - delta;
      const double f_minus = static_cast<double>(loss_fn());
      p.value.data[i] = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * static_cast<double>(delta));
      const double a = static_cast<double>(analytic[pi].data[i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), denom_floor});
      const double rel = std::abs(a - numeric) / denom;
      err_sum += rel;
      ++res.checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  if (res.checked > 0) res.mean_rel_err = err_sum / static_cast<double>(res.checked);
  return res;
}

}  // namespace gaborscope

#endif
