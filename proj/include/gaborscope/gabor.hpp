#ifndef GABORSCOPE_GABOR_HPP
#define GABORSCOPE_GABOR_HPP

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaborscope/autodiff.hpp"
#include "gaborscope/fft.hpp"
#include "gaborscope/rng.hpp"
#include "gaborscope/tensor.hpp"

namespace gaborscope {

// The kernel support is fixed: 200 taps spanning [-1, 1) seconds at 100 Hz,
// i.e. tap k sits at t*_k = -1 + k/100. A kernel therefore covers 2 s of
// signal, one second to each side of its center tap.
inline constexpr int kGaborTaps = 200;
inline constexpr double kGaborSampleRate = 100.0;

inline double gabor_tap_time(int k) { return -1.0 + static_cast<double>(k) / 100.0; }

// Parametric kernel value: exp(-pi (t-u)^2 / |sigma|) * cos(2 pi f t).
// sigma enters through its magnitude only, so its sign never changes the
// waveform; u in seconds, f in Hz.
template <class T>
T gabor_value(T t, T u, T sigma, T f) {
  const T pi = T(3.14159265358979323846);
  const T d = t - u;
  const T env = std::exp(-pi * d * d / std::abs(sigma));
  return env * std::cos(T(2) * pi * f * t);
}

template <class T>
std::vector<T> gabor_waveform(T u, T sigma, T f) {
  std::vector<T> w(kGaborTaps);
  for (int k = 0; k < kGaborTaps; ++k)
    w[k] = gabor_value(static_cast<T>(gabor_tap_time(k)), u, sigma, f);
  return w;
}

// Analytic partials of one tap with respect to the three parameters.
template <class T>
void gabor_partials(T t, T u, T sigma, T f, T* du, T* dsigma, T* df) {
  const T pi = T(3.14159265358979323846);
  const T d = t - u;
  const T abs_s = std::abs(sigma);
  const T sign_s = sigma < T(0) ? T(-1) : T(1);
  const T env = std::exp(-pi * d * d / abs_s);
  const T cosv = std::cos(T(2) * pi * f * t);
  const T sinv = std::sin(T(2) * pi * f * t);
  const T g = env * cosv;
  *du = g * T(2) * pi * d / abs_s;
  *dsigma = g * pi * d * d * sign_s / (sigma * sigma);
  *df = -env * T(2) * pi * t * sinv;
}

// One trainable kernel bank: parameter vectors u, sigma, f of length
// kernels(). The layer's effective filter weights are always resynthesized
// from these three vectors, never stored.
template <class T>
struct GaborBank {
  Param<T> u, sigma, f;

  GaborBank() = default;
  GaborBank(const std::string& prefix, int kernels)
      : u(prefix + ".u", Tensor<T>({kernels})),
        sigma(prefix + ".sigma", Tensor<T>({kernels})),
        f(prefix + ".f", Tensor<T>({kernels})) {}

  int kernels() const { return static_cast<int>(u.value.size()); }

  // [N, 200] filter matrix synthesized from the current parameters.
  Tensor<T> weights() const {
    const int n = kernels();
    Tensor<T> w({n, kGaborTaps});
    for (int i = 0; i < n; ++i) {
      std::vector<T> row = gabor_waveform(u.value.data[i], sigma.value.data[i], f.value.data[i]);
      std::copy(row.begin(), row.end(), w.row(i));
    }
    return w;
  }
};

// Kernel initialization: centers at zero, envelope scales uniform in
// [sigma_lo, sigma_hi], frequencies log-spaced across [f_lo, f_hi] with both
// endpoints present (a single kernel sits at f_lo). Draws come from the
// shared generator so a seed pins the whole bank.
template <class T>
void init_bank(GaborBank<T>& bank, T f_lo, T f_hi, T sigma_lo, T sigma_hi, CounterRng& rng) {
  const int n = bank.kernels();
  if (n <= 0) throw std::invalid_argument("init_bank: empty bank");
  if (!(f_lo > T(0)) || !(f_hi >= f_lo)) throw std::invalid_argument("init_bank: bad f range");
  for (int i = 0; i < n; ++i) {
    bank.u.value.data[i] = T(0);
    bank.sigma.value.data[i] = static_cast<T>(rng.uniform(static_cast<double>(sigma_lo),
                                                          static_cast<double>(sigma_hi)));
    if (n == 1) {
      bank.f.value.data[i] = f_lo;
    } else {
      const double ratio = static_cast<double>(i) / static_cast<double>(n - 1);
      bank.f.value.data[i] = static_cast<T>(
          std::exp(std::log(static_cast<double>(f_lo)) +
                   ratio * (std::log(static_cast<double>(f_hi)) -
                            std::log(static_cast<double>(f_lo)))));
    }
  }
}

// Keeps |sigma| away from zero. Below the guard, a gradient that would keep
// shrinking the envelope is zeroed; the optimizer additionally projects any
// update that lands inside the guard back onto it.
inline constexpr double kSigmaMin = 1e-3;

template <class T>
void clamp_sigma_gradient(const Tensor<T>& sigma, Tensor<T>& grad, T sigma_min) {
  for (std::int64_t i = 0; i < sigma.size(); ++i) {
    const T s = sigma.data[i];
    const T sign_s = s < T(0) ? T(-1) : T(1);
    // descent moves sigma by -lr*g; |sigma| shrinks when g has sigma's sign
    if (std::abs(s) <= sigma_min && grad.data[i] * sign_s > T(0)) grad.data[i] = T(0);
  }
}

template <class T>
void project_sigma(Tensor<T>& sigma, T sigma_min) {
  for (std::int64_t i = 0; i < sigma.size(); ++i) {
    const T sign_s = sigma.data[i] < T(0) ? T(-1) : T(1);
    if (std::abs(sigma.data[i]) < sigma_min) sigma.data[i] = sign_s * sigma_min;
  }
}

// Applies the bank to a 1-D signal node: out[i][t] = sum_k G_i(t*_k) X(t+k),
// full-overlap positions only, so a length-L signal gives L-199 outputs.
// Gradients flow to u/sigma/f through the synthesized taps and to X by the
// usual correlation transpose.
template <class T>
int gabor_layer(Graph<T>& g, int x, GaborBank<T>& bank, T sigma_min = T(kSigmaMin)) {
  Tensor<T> xv = g.nodes[x].value;
  if (xv.ndim() == 1) xv.shape = {1, static_cast<int>(xv.size())};
  if (xv.dim(0) != 1) throw std::invalid_argument("gabor_layer: expects a single-channel signal");
  const int Lx = xv.dim(1);
  const int N = bank.kernels();
  const int Lout = Lx - kGaborTaps + 1;
  if (Lout <= 0) throw std::invalid_argument("gabor_layer: signal shorter than kernel support");

  int u_id = g.param(bank.u);
  int sigma_id = g.param(bank.sigma);
  int f_id = g.param(bank.f);

  auto weights = std::make_shared<Tensor<T>>(bank.weights());
  Tensor<T> y({N, Lout});
  xcorr1d_forward(xv.data.data(), 1, Lx, weights->data.data(), N, kGaborTaps,
                  static_cast<const T*>(nullptr), 0, Lout, y.data.data());

  bool ng = g.nodes[x].needs_grad || g.nodes[u_id].needs_grad || g.nodes[sigma_id].needs_grad ||
            g.nodes[f_id].needs_grad;
  return g.add_node(
      std::move(y), ng, nullptr,
      [x, u_id, sigma_id, f_id, N, Lx, Lout, weights, sigma_min](Graph<T>& g, int self) {
        const Tensor<T>& dy = g.nodes[self].grad;
        Tensor<T> xv = g.nodes[x].value;
        if (xv.ndim() == 1) xv.shape = {1, static_cast<int>(xv.size())};

        if (g.nodes[x].needs_grad) {
          Tensor<T>& dx = g.grad_of(x);
          xcorr1d_backward_x(dy.data.data(), N, Lout, weights->data.data(), 1, kGaborTaps, Lx, 0,
                             dx.data.data());
        }

        const bool want_u = g.nodes[u_id].needs_grad;
        const bool want_sigma = g.nodes[sigma_id].needs_grad;
        const bool want_f = g.nodes[f_id].needs_grad;
        if (!(want_u || want_sigma || want_f)) return;

        // gradient w.r.t. each synthesized tap, then chain through the three
        // closed-form partials
        Tensor<T> dtaps({N, kGaborTaps});
        xcorr1d_backward_w(dy.data.data(), N, Lout, xv.data.data(), 1, Lx, kGaborTaps, 0,
                           dtaps.data.data(), static_cast<T*>(nullptr));

        const Tensor<T>& uv = g.nodes[u_id].value;
        const Tensor<T>& sv = g.nodes[sigma_id].value;
        const Tensor<T>& fv = g.nodes[f_id].value;
        Tensor<T>& du = g.grad_of(u_id);
        Tensor<T>& dsigma = g.grad_of(sigma_id);
        Tensor<T>& df = g.grad_of(f_id);
        for (int i = 0; i < N; ++i) {
          T acc_u = T(0), acc_s = T(0), acc_f = T(0);
          const T* dt = dtaps.row(i);
          for (int k = 0; k < kGaborTaps; ++k) {
            T pu, ps, pf;
            gabor_partials(static_cast<T>(gabor_tap_time(k)), uv.data[i], sv.data[i], fv.data[i],
                           &pu, &ps, &pf);
            acc_u += dt[k] * pu;
            acc_s += dt[k] * ps;
            acc_f += dt[k] * pf;
          }
          if (want_u) du.data[i] += acc_u;
          if (want_f) df.data[i] += acc_f;
          if (want_sigma) {
            const T s = sv.data[i];
            const T sign_s = s < T(0) ? T(-1) : T(1);
            if (std::abs(s) <= sigma_min && acc_s * sign_s > T(0)) acc_s = T(0);
            dsigma.data[i] += acc_s;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// kernel export
// ---------------------------------------------------------------------------

struct KernelWaveformRow {
  int kernel;
  double t_star;
  double value;
};

struct KernelSpectrumRow {
  int kernel;
  double freq_hz;
  double magnitude;
};

inline constexpr int kSpectrumFftSize = 1024;

template <class T>
std::vector<KernelWaveformRow> kernel_waveform_table(const GaborBank<T>& bank) {
  std::vector<KernelWaveformRow> rows;
  rows.reserve(static_cast<std::size_t>(bank.kernels()) * kGaborTaps);
  for (int i = 0; i < bank.kernels(); ++i) {
    std::vector<T> w =
        gabor_waveform(bank.u.value.data[i], bank.sigma.value.data[i], bank.f.value.data[i]);
    for (int k = 0; k < kGaborTaps; ++k)
      rows.push_back({i, gabor_tap_time(k), static_cast<double>(w[k])});
  }
  return rows;
}

// One-sided magnitude spectrum of each kernel, zero-padded to 1024 samples;
// bin spacing is 100 Hz / 1024.
template <class T>
std::vector<KernelSpectrumRow> kernel_spectrum_table(const GaborBank<T>& bank) {
  std::vector<KernelSpectrumRow> rows;
  for (int i = 0; i < bank.kernels(); ++i) {
    std::vector<T> w =
        gabor_waveform(bank.u.value.data[i], bank.sigma.value.data[i], bank.f.value.data[i]);
    std::vector<double> wd(w.begin(), w.end());
    std::vector<double> mag = magnitude_spectrum(wd, kSpectrumFftSize);
    for (std::size_t b = 0; b < mag.size(); ++b)
      rows.push_back({i, static_cast<double>(b) * kGaborSampleRate / kSpectrumFftSize, mag[b]});
  }
  return rows;
}

// Frequency of the largest spectral bin for one kernel.
template <class T>
double kernel_peak_frequency(T u, T sigma, T f) {
  std::vector<T> w = gabor_waveform(u, sigma, f);
  std::vector<double> wd(w.begin(), w.end());
  std::vector<double> mag = magnitude_spectrum(wd, kSpectrumFftSize);
  std::size_t best = 0;
  for (std::size_t b = 1; b < mag.size(); ++b)
    if (mag[b] > mag[best]) best = b;
  return static_cast<double>(best) * kGaborSampleRate / kSpectrumFftSize;
}

}  // namespace gaborscope

#endif
