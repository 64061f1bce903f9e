#ifndef GABORSCOPE_NETWORK_HPP
#define GABORSCOPE_NETWORK_HPP

#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gaborscope/adam.hpp"
#include "gaborscope/autodiff.hpp"
#include "gaborscope/dataset.hpp"
#include "gaborscope/gabor.hpp"
#include "gaborscope/rng.hpp"
#include "gaborscope/stages.hpp"

namespace gaborscope {

// Per-channel, per-epoch standardization. A flat channel (sd under 1e-8)
// becomes zeros instead of dividing by noise.
template <class T, class U>
std::vector<T> zscore(const std::vector<U>& x) {
  const std::size_t n = x.size();
  std::vector<T> out(n);
  if (n == 0) return out;
  double mean = 0.0;
  for (U v : x) mean += static_cast<double>(v);
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (U v : x) {
    const double d = static_cast<double>(v) - mean;
    var += d * d;
  }
  const double sd = std::sqrt(var / static_cast<double>(n));
  if (sd < 1e-8) return out;
  for (std::size_t i = 0; i < n; ++i)
    out[i] = static_cast<T>((static_cast<double>(x[i]) - mean) / sd);
  return out;
}

// How a forward pass should behave. Training wants stochastic dropout and
// per-pass batchnorm statistics; everything else (validation, scoring,
// interpretation, gradient checks) runs the frozen statistics.
struct RunMode {
  bool dropout_active = false;
  bool bn_batch_stats = false;
  bool bn_update_running = false;
  CounterRng* dropout_rng = nullptr;

  static RunMode train(CounterRng* rng) { return {true, true, true, rng}; }
  static RunMode eval() { return {}; }
};

enum class FrontEnd { Gabor, PlainConv200 };

inline std::string front_end_name(FrontEnd fe) {
  return fe == FrontEnd::Gabor ? "gabor" : "plain_conv_200";
}

inline FrontEnd front_end_from_name(const std::string& name) {
  if (name == "gabor") return FrontEnd::Gabor;
  if (name == "plain_conv_200") return FrontEnd::PlainConv200;
  throw DataError("unknown front end \"" + name + "\"");
}

template <class T>
struct ConvLayer {
  Param<T> w, b;
  ConvLayer() = default;
  ConvLayer(const std::string& prefix, int co, int ci, int k)
      : w(prefix + ".w", Tensor<T>({co, ci, k})), b(prefix + ".b", Tensor<T>({co})) {}
};

template <class T>
struct BatchNormLayer {
  Param<T> gamma, beta;
  Tensor<T> running_mean, running_var;
  BatchNormLayer() = default;
  BatchNormLayer(const std::string& prefix, int c)
      : gamma(prefix + ".gamma", Tensor<T>({c})),
        beta(prefix + ".beta", Tensor<T>({c})),
        running_mean({c}),
        running_var({c}) {
    gamma.value.fill(T(1));
    running_var.fill(T(1));
  }
  BatchNormBuffers<T> buffers() { return {&running_mean, &running_var}; }
};

template <class T>
struct DenseLayer {
  Param<T> w, b;
  DenseLayer() = default;
  DenseLayer(const std::string& prefix, int out, int in)
      : w(prefix + ".w", Tensor<T>({out, in})), b(prefix + ".b", Tensor<T>({out})) {}
};

// Per-epoch classifier: waveform front end (trainable Gabor banks, or plain
// length-200 convolutions in the ablation), a kernel-1 mixing convolution,
// five conv/relu/pool/batchnorm blocks, then a three-layer classifier head.
template <class T>
struct SingleEpochNet {
  static constexpr int kEegKernels = 32;
  static constexpr int kEogKernels = 8;
  static constexpr int kGlChannels = kEegKernels + kEogKernels;
  static constexpr int kGlLength = kEpochSamples - kGaborTaps + 1;  // 2801

  FrontEnd front_end = FrontEnd::Gabor;
  GaborBank<T> gl_eeg, gl_eog;
  ConvLayer<T> plain_eeg, plain_eog;
  ConvLayer<T> mixing;
  std::array<ConvLayer<T>, 5> conv;
  std::array<BatchNormLayer<T>, 5> bn;
  DenseLayer<T> fc1, fc2, fc3;
  T dropout_p = T(0.5);
  T bn_momentum = T(0.1);
  T bn_eps = T(1e-5);
  T sigma_min = T(kSigmaMin);

  explicit SingleEpochNet(FrontEnd fe = FrontEnd::Gabor)
      : front_end(fe),
        gl_eeg("single.gl_eeg", kEegKernels),
        gl_eog("single.gl_eog", kEogKernels),
        plain_eeg("single.front_eeg", kEegKernels, 1, kGaborTaps),
        plain_eog("single.front_eog", kEogKernels, 1, kGaborTaps),
        mixing("single.mixing", 256, kGlChannels, 1),
        conv{ConvLayer<T>("single.conv1", 64, 256, 3), ConvLayer<T>("single.conv2", 128, 64, 3),
             ConvLayer<T>("single.conv3", 128, 128, 3), ConvLayer<T>("single.conv4", 256, 128, 3),
             ConvLayer<T>("single.conv5", 256, 256, 3)},
        bn{BatchNormLayer<T>("single.bn1", 64), BatchNormLayer<T>("single.bn2", 128),
           BatchNormLayer<T>("single.bn3", 128), BatchNormLayer<T>("single.bn4", 256),
           BatchNormLayer<T>("single.bn5", 256)},
        fc1("single.fc1", 256, 256 * 11),
        fc2("single.fc2", 128, 256),
        fc3("single.fc3", 5, 128) {}

  void init(std::uint64_t seed) {
    CounterRng rng(CounterRng::derive(seed, 0x51));
    init_bank(gl_eeg, T(0.5), T(25), T(0.05), T(0.5), rng);
    init_bank(gl_eog, T(0.5), T(25), T(0.05), T(0.5), rng);
    auto he = [&rng](Param<T>& w, int fan_in) {
      const double sd = std::sqrt(2.0 / fan_in);
      for (auto& v : w.value.data) v = static_cast<T>(rng.normal() * sd);
    };
    he(plain_eeg.w, kGaborTaps);
    he(plain_eog.w, kGaborTaps);
    he(mixing.w, kGlChannels);
    for (auto& c : conv) he(c.w, c.w.value.dim(1) * c.w.value.dim(2));
    he(fc1.w, fc1.w.value.dim(1));
    he(fc2.w, fc2.w.value.dim(1));
    he(fc3.w, fc3.w.value.dim(1));
  }

  struct Forward {
    int gl = -1;      // [40, 2801] waveform-detector activations, pre-ReLU
    int logits = -1;  // [5]
  };

  // Everything after the front end, starting from a [40, 2801] node. Exposed
  // separately so sensitivity checks can re-run the classifier from a
  // perturbed activation map.
  int forward_tail(Graph<T>& g, int gl, const RunMode& mode) {
    int h = g.relu(gl);
    h = g.cross_correlate1d(h, g.param(mixing.w), g.param(mixing.b), PadMode::Same);
    for (int blk = 0; blk < 5; ++blk) {
      auto& c = conv[static_cast<std::size_t>(blk)];
      auto& b = bn[static_cast<std::size_t>(blk)];
      h = g.cross_correlate1d(h, g.param(c.w), g.param(c.b), PadMode::Same);
      h = g.relu(h);
      h = g.maxpool1d(h, 3, 3);
      h = g.batchnorm1d(h, g.param(b.gamma), g.param(b.beta), b.buffers(), mode.bn_batch_stats,
                        mode.bn_update_running, bn_momentum, bn_eps);
    }
    if (mode.dropout_active && !mode.dropout_rng)
      throw std::invalid_argument("dropout requires a generator in training mode");
    static CounterRng inert(0);
    h = g.dropout(h, dropout_p, mode.dropout_active,
                  mode.dropout_rng ? *mode.dropout_rng : inert);
    h = g.dense(h, g.param(fc1.w), g.param(fc1.b));
    h = g.relu(h);
    h = g.dense(h, g.param(fc2.w), g.param(fc2.b));
    h = g.relu(h);
    return g.dense(h, g.param(fc3.w), g.param(fc3.b));
  }

  Forward forward(Graph<T>& g, const std::vector<T>& eeg, const std::vector<T>& eog,
                  const RunMode& mode) {
    if (eeg.size() != kEpochSamples || eog.size() != kEpochSamples)
      throw std::invalid_argument("single_forward: epochs must be 3000 samples per channel");
    Tensor<T> xe({1, kEpochSamples}), xo({1, kEpochSamples});
    std::copy(eeg.begin(), eeg.end(), xe.data.begin());
    std::copy(eog.begin(), eog.end(), xo.data.begin());
    int e_id = g.constant(std::move(xe));
    int o_id = g.constant(std::move(xo));
    int ge, go;
    if (front_end == FrontEnd::Gabor) {
      ge = gabor_layer(g, e_id, gl_eeg, sigma_min);
      go = gabor_layer(g, o_id, gl_eog, sigma_min);
    } else {
      ge = g.cross_correlate1d(e_id, g.param(plain_eeg.w), g.param(plain_eeg.b), PadMode::Valid);
      go = g.cross_correlate1d(o_id, g.param(plain_eog.w), g.param(plain_eog.b), PadMode::Valid);
    }
    Forward fwd;
    fwd.gl = g.concat0(ge, go);
    fwd.logits = forward_tail(g, fwd.gl, mode);
    return fwd;
  }

  Forward forward(Graph<T>& g, const LabeledEpoch& epoch, const RunMode& mode) {
    return forward(g, zscore<T>(epoch.eeg), zscore<T>(epoch.eog), mode);
  }

  void visit_params(const std::function<void(Param<T>&)>& fn) {
    if (front_end == FrontEnd::Gabor) {
      for (auto* bank : {&gl_eeg, &gl_eog}) {
        fn(bank->u);
        fn(bank->sigma);
        fn(bank->f);
      }
    } else {
      for (auto* c : {&plain_eeg, &plain_eog}) {
        fn(c->w);
        fn(c->b);
      }
    }
    fn(mixing.w);
    fn(mixing.b);
    for (auto& c : conv) {
      fn(c.w);
      fn(c.b);
    }
    for (auto& b : bn) {
      fn(b.gamma);
      fn(b.beta);
    }
    for (auto* d : {&fc1, &fc2, &fc3}) {
      fn(d->w);
      fn(d->b);
    }
  }

  void visit_buffers(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    for (std::size_t i = 0; i < bn.size(); ++i) {
      const std::string prefix = "single.bn" + std::to_string(i + 1);
      fn(prefix + ".running_mean", bn[i].running_mean);
      fn(prefix + ".running_var", bn[i].running_var);
    }
  }

  long parameter_count() {
    long n = 0;
    visit_params([&n](Param<T>& p) { n += static_cast<long>(p.value.size()); });
    return n;
  }
};

// Context classifier over the window O_{n-4}..O_{n+4} of single-epoch
// probability vectors: one two-layer LSTM reads the window forward, another
// reads it backward, and a dense layer maps the two final hidden states to
// stage logits.
template <class T>
struct MultiEpochNet {
  static constexpr int kHidden = 10;
  static constexpr int kLstmLayers = 2;
  static constexpr int kContext = 4;                    // epochs each side
  static constexpr int kWindow = 2 * kContext + 1;      // 9

  struct LstmLayerParams {
    Param<T> w_ih, w_hh, b_ih, b_hh;
    LstmLayerParams() = default;
    LstmLayerParams(const std::string& prefix, int input)
        : w_ih(prefix + ".w_ih", Tensor<T>({4 * kHidden, input})),
          w_hh(prefix + ".w_hh", Tensor<T>({4 * kHidden, kHidden})),
          b_ih(prefix + ".b_ih", Tensor<T>({4 * kHidden})),
          b_hh(prefix + ".b_hh", Tensor<T>({4 * kHidden})) {}
  };

  std::array<std::vector<LstmLayerParams>, 2> dirs;  // [0] forward, [1] backward
  DenseLayer<T> fc;

  MultiEpochNet() : fc("multi.fc", kNumStages, 2 * kHidden) {
    for (int d = 0; d < 2; ++d) {
      const std::string dname = d == 0 ? "multi.fwd" : "multi.bwd";
      dirs[static_cast<std::size_t>(d)].emplace_back(dname + "0", kNumStages);
      dirs[static_cast<std::size_t>(d)].emplace_back(dname + "1", kHidden);
    }
  }

  void init(std::uint64_t seed) {
    CounterRng rng(CounterRng::derive(seed, 0x52));
    const double bound = 1.0 / std::sqrt(static_cast<double>(kHidden));
    visit_params([&](Param<T>& p) {
      for (auto& v : p.value.data) v = static_cast<T>(rng.uniform(-bound, bound));
    });
    for (auto& v : fc.b.value.data) v = T(0);
  }

  int forward(Graph<T>& g, const Tensor<T>& window) {
    if (window.ndim() != 2 || window.dim(0) != kWindow || window.dim(1) != kNumStages)
      throw std::invalid_argument("multi_forward: window must be 9 x 5");
    Tensor<T> reversed(window.shape);
    for (int t = 0; t < kWindow; ++t)
      for (int s = 0; s < kNumStages; ++s)
        reversed.at(t, s) = window.at(kWindow - 1 - t, s);

    int h_last[2];
    for (int d = 0; d < 2; ++d) {
      int x = g.constant(d == 0 ? window : reversed);
      std::vector<LstmLayerIds> ids;
      for (auto& layer : dirs[static_cast<std::size_t>(d)])
        ids.push_back({g.param(layer.w_ih), g.param(layer.w_hh), g.param(layer.b_ih),
                       g.param(layer.b_hh)});
      int seq = g.lstm(x, ids, kHidden);
      h_last[d] = g.row_select(seq, kWindow - 1);
    }
    return g.dense(g.concat0(h_last[0], h_last[1]), g.param(fc.w), g.param(fc.b));
  }

  void visit_params(const std::function<void(Param<T>&)>& fn) {
    for (auto& dir : dirs)
      for (auto& layer : dir) {
        fn(layer.w_ih);
        fn(layer.w_hh);
        fn(layer.b_ih);
        fn(layer.b_hh);
      }
    fn(fc.w);
    fn(fc.b);
  }

  long parameter_count() {
    long n = 0;
    visit_params([&n](Param<T>& p) { n += static_cast<long>(p.value.size()); });
    return n;
  }
};

template <class T>
std::array<T, kNumStages> softmax_probs(const std::array<T, kNumStages>& logits) {
  std::array<T, kNumStages> p;
  T mx = logits[0];
  for (T v : logits) mx = std::max(mx, v);
  T sum = T(0);
  for (std::size_t i = 0; i < kNumStages; ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

template <class T>
StageLabel argmax_stage(const std::array<T, kNumStages>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < kNumStages; ++i)
    if (v[i] > v[best]) best = i;
  return static_cast<StageLabel>(best);
}

// The multi-epoch input for the epoch at `center`: rows are the probability
// vectors of the surrounding retained epochs, with the first and last epochs
// repeated past recording edges.
template <class T>
Tensor<T> probability_window(const std::vector<std::array<T, kNumStages>>& probs, int center) {
  if (probs.empty()) throw std::invalid_argument("probability_window: empty recording");
  Tensor<T> w({MultiEpochNet<T>::kWindow, kNumStages});
  const auto idx = epoch_window(center, static_cast<int>(probs.size()), MultiEpochNet<T>::kContext);
  for (int t = 0; t < MultiEpochNet<T>::kWindow; ++t)
    for (int s = 0; s < kNumStages; ++s)
      w.at(t, s) = probs[static_cast<std::size_t>(idx[static_cast<std::size_t>(t)])]
                        [static_cast<std::size_t>(s)];
  return w;
}

template <class T>
struct ScoredEpoch {
  int index = 0;
  StageLabel truth = StageLabel::Wake;
  std::array<T, kNumStages> single_logits{}, single_probs{}, multi_logits{};
  StageLabel single_pred = StageLabel::Wake;
  StageLabel multi_pred = StageLabel::Wake;
};

template <class T>
std::array<T, kNumStages> single_logits_eval(SingleEpochNet<T>& net, const LabeledEpoch& epoch) {
  Graph<T> g;
  auto fwd = net.forward(g, epoch, RunMode::eval());
  std::array<T, kNumStages> out;
  const Tensor<T>& v = g.nodes[static_cast<std::size_t>(fwd.logits)].value;
  for (std::size_t s = 0; s < kNumStages; ++s) {
    out[s] = v.data[s];
    if (!std::isfinite(static_cast<double>(out[s])))
      throw DataError("non-finite logit while scoring epoch " + std::to_string(epoch.index));
  }
  return out;
}

template <class T>
std::vector<ScoredEpoch<T>> score_recording(SingleEpochNet<T>& single, MultiEpochNet<T>& multi,
                                            const RecordingEpochs& rec) {
  std::vector<ScoredEpoch<T>> out;
  out.reserve(rec.epochs.size());
  std::vector<std::array<T, kNumStages>> probs;
  probs.reserve(rec.epochs.size());
  for (const auto& e : rec.epochs) {
    ScoredEpoch<T> s;
    s.index = e.index;
    s.truth = e.label;
    s.single_logits = single_logits_eval(single, e);
    s.single_probs = softmax_probs(s.single_logits);
    s.single_pred = argmax_stage(s.single_logits);
    probs.push_back(s.single_probs);
    out.push_back(s);
  }
  for (std::size_t n = 0; n < out.size(); ++n) {
    Graph<T> g;
    int logits = multi.forward(g, probability_window(probs, static_cast<int>(n)));
    const Tensor<T>& v = g.nodes[static_cast<std::size_t>(logits)].value;
    for (std::size_t s = 0; s < kNumStages; ++s) {
      out[n].multi_logits[s] = v.data[s];
      if (!std::isfinite(static_cast<double>(v.data[s])))
        throw DataError("non-finite logit while scoring epoch " + std::to_string(out[n].index));
    }
    out[n].multi_pred = argmax_stage(out[n].multi_logits);
  }
  return out;
}

}  // namespace gaborscope

#endif
