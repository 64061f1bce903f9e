#include "gaborscope/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "gaborscope/fft.hpp"
#include "gaborscope/gabor.hpp"
#include "gaborscope/metrics.hpp"
#include "json.hpp"

namespace gaborscope {

namespace {

constexpr double kSignificance = 0.05;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_float(float v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

// Continued-fraction evaluation for the regularized incomplete beta
// function (Lentz's method).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-14;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int mm = 2 * m;
    double aa = m * (b - m) * x / ((qam + mm) * (a + mm));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + mm) * (qap + mm));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

double ibeta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_bt =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
      b * std::log(1.0 - x);
  const double bt = std::exp(ln_bt);
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

const char* modality_of(int kernel) {
  return kernel < SingleEpochNet<float>::kEegKernels ? "eeg" : "eog";
}

// Center of the 200-tap window starting at output sample t, in seconds from
// the epoch start at 100 Hz.
double gl_time_seconds(int t) { return (t + 100) / 100.0; }

double spectral_peak_hz(const std::vector<double>& wave) {
  const auto mag = magnitude_spectrum(wave, kSpectrumFftSize);
  std::size_t best = 0;
  for (std::size_t b = 1; b < mag.size(); ++b)
    if (mag[b] > mag[best]) best = b;
  return static_cast<double>(best) * kGaborSampleRate / kSpectrumFftSize;
}

// Per-kernel tap rows for either front end: synthesized Gabor waveforms or
// the trained free-form filters.
std::vector<std::vector<double>> first_layer_taps(SingleEpochNet<float>& net) {
  std::vector<std::vector<double>> rows;
  if (net.front_end == FrontEnd::Gabor) {
    for (auto* bank : {&net.gl_eeg, &net.gl_eog}) {
      const Tensor<float> w = bank->weights();
      for (int i = 0; i < w.dim(0); ++i) {
        std::vector<double> row(kGaborTaps);
        for (int k = 0; k < kGaborTaps; ++k)
          row[static_cast<std::size_t>(k)] =
              w.data[static_cast<std::size_t>(i) * kGaborTaps + k];
        rows.push_back(std::move(row));
      }
    }
  } else {
    for (auto* conv : {&net.plain_eeg, &net.plain_eog}) {
      const Tensor<float>& w = conv->w.value;  // [n, 1, 200]
      for (int i = 0; i < w.dim(0); ++i) {
        std::vector<double> row(kGaborTaps);
        for (int k = 0; k < kGaborTaps; ++k)
          row[static_cast<std::size_t>(k)] =
              w.data[static_cast<std::size_t>(i) * kGaborTaps + k];
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

void write_file(const std::filesystem::path& dir, const std::string& name,
                const std::string& body, std::vector<std::string>* written) {
  std::ofstream out(dir / name, std::ios::binary);
  if (!out) throw DataError("cannot write " + (dir / name).string());
  out << body;
  written->push_back(name);
}

}  // namespace

SensitivityMap sensitivity(SingleEpochNet<float>& net, const LabeledEpoch& epoch,
                           int target_class, SensitivityTarget target) {
  if (target_class < 0 || target_class >= kNumStages)
    throw std::invalid_argument("sensitivity: class out of range");
  Graph<float> g;
  auto fwd = net.forward(g, epoch, RunMode::eval());
  std::array<float, kNumStages> logits{};
  for (int k = 0; k < kNumStages; ++k) {
    const float v = g.value(fwd.logits).data[k];
    if (!std::isfinite(v)) throw DataError("sensitivity: non-finite logits");
    logits[static_cast<std::size_t>(k)] = v;
  }
  const int root =
      target == SensitivityTarget::Softmax ? g.softmax(fwd.logits) : fwd.logits;
  Tensor<float> seed({kNumStages});
  seed.data[static_cast<std::size_t>(target_class)] = 1.0f;
  g.backward(root, seed);

  SensitivityMap m;
  m.target_class = target_class;
  m.predicted = argmax_stage(logits);
  m.gl = g.value(fwd.gl);
  m.sen = g.nodes[static_cast<std::size_t>(fwd.gl)].grad;
  return m;
}

std::vector<EffectRecord> effect_records(const SensitivityMap& m) {
  const int n = m.gl.dim(0);
  const int len = m.gl.dim(1);
  std::vector<EffectRecord> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    EffectRecord& r = out[static_cast<std::size_t>(i)];
    r.kernel = i;
    r.eff.resize(static_cast<std::size_t>(len));
    double sum = 0.0;
    for (int t = 0; t < len; ++t) {
      const std::size_t at = static_cast<std::size_t>(i) * len + t;
      const float s = m.sen.data[at];
      const float e = s > 0.0f ? m.gl.data[at] * s : 0.0f;
      r.eff[static_cast<std::size_t>(t)] = e;
      sum += static_cast<double>(e) * e;
    }
    r.eff_bar = sum;
  }
  return out;
}

std::array<double, kGlKernels> effect_bars(const SensitivityMap& m) {
  if (m.gl.dim(0) != kGlKernels)
    throw std::invalid_argument("effect_bars: unexpected kernel count");
  const int len = m.gl.dim(1);
  std::array<double, kGlKernels> out{};
  for (int i = 0; i < kGlKernels; ++i) {
    double sum = 0.0;
    for (int t = 0; t < len; ++t) {
      const std::size_t at = static_cast<std::size_t>(i) * len + t;
      const float s = m.sen.data[at];
      if (s > 0.0f) {
        const float e = m.gl.data[at] * s;
        sum += static_cast<double>(e) * e;
      }
    }
    out[static_cast<std::size_t>(i)] = sum;
  }
  return out;
}

int top_kernel(const std::array<double, kGlKernels>& eff_bar) {
  int best = 0;
  for (int i = 1; i < kGlKernels; ++i)
    if (eff_bar[static_cast<std::size_t>(i)] > eff_bar[static_cast<std::size_t>(best)]) best = i;
  return best;
}

EffectSummary summarize(const std::vector<EpochEffects>& epochs) {
  EffectSummary s;
  for (const EpochEffects& e : epochs) {
    const auto j = static_cast<std::size_t>(e.stage);
    ++s.n_stage[j];
    for (int i = 0; i < kGlKernels; ++i)
      s.eff_stage[j][static_cast<std::size_t>(i)] += e.eff_bar[static_cast<std::size_t>(i)];
    ++s.top_count_stage[j][static_cast<std::size_t>(e.top)];
  }
  for (int j = 0; j < kNumStages; ++j) {
    const auto js = static_cast<std::size_t>(j);
    if (s.n_stage[js] == 0) {
      s.stage_missing[js] = true;
      continue;
    }
    const double inv = 1.0 / static_cast<double>(s.n_stage[js]);
    for (int i = 0; i < kGlKernels; ++i) {
      const auto is = static_cast<std::size_t>(i);
      s.eff_stage[js][is] *= inv;
      s.eff_overall[is] += s.eff_stage[js][is];
      s.top_share_overall[is] += static_cast<double>(s.top_count_stage[js][is]) * inv;
    }
  }
  return s;
}

ModalityRatio modality_ratio(const std::array<double, kGlKernels>& eff_bar) {
  constexpr int kEeg = SingleEpochNet<float>::kEegKernels;
  double eeg = 0.0, eog = 0.0;
  for (int i = 0; i < kEeg; ++i) eeg += eff_bar[static_cast<std::size_t>(i)];
  for (int i = kEeg; i < kGlKernels; ++i) eog += eff_bar[static_cast<std::size_t>(i)];
  eeg /= kEeg;
  eog /= kGlKernels - kEeg;
  ModalityRatio r;
  if (eog > 0.0) {
    r.value = eeg / eog;
    r.defined = true;
  }
  return r;
}

WelchResult stage_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2)
    throw std::invalid_argument("stage_test: each group needs at least two values");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  double ma = 0.0, mb = 0.0;
  for (double v : a) ma += v;
  for (double v : b) mb += v;
  ma /= na;
  mb /= nb;
  double va = 0.0, vb = 0.0;
  for (double v : a) va += (v - ma) * (v - ma);
  for (double v : b) vb += (v - mb) * (v - mb);
  va /= na - 1.0;
  vb /= nb - 1.0;
  const double se2 = va / na + vb / nb;
  WelchResult r;
  if (se2 == 0.0) return r;  // both groups internally constant
  r.t = (ma - mb) / std::sqrt(se2);
  r.df = se2 * se2 /
         (va * va / (na * na * (na - 1.0)) + vb * vb / (nb * nb * (nb - 1.0)));
  r.p = ibeta(r.df / 2.0, 0.5, r.df / (r.df + r.t * r.t));
  return r;
}

std::vector<std::string> export_kernel_files(SingleEpochNet<float>& net,
                                             const std::string& out_dir) {
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  std::vector<std::string> written;
  const auto taps = first_layer_taps(net);
  if (net.front_end == FrontEnd::Gabor) {
    std::string body = "kernel,modality,u,sigma,f,peak_hz\n";
    int kernel = 0;
    for (auto* bank : {&net.gl_eeg, &net.gl_eog}) {
      for (int i = 0; i < bank->kernels(); ++i, ++kernel) {
        body += std::to_string(kernel);
        body += ',';
        body += modality_of(kernel);
        body += ',';
        body += fmt_float(bank->u.value.data[i]);
        body += ',';
        body += fmt_float(bank->sigma.value.data[i]);
        body += ',';
        body += fmt_float(bank->f.value.data[i]);
        body += ',';
        body += fmt_double(spectral_peak_hz(taps[static_cast<std::size_t>(kernel)]));
        body += '\n';
      }
    }
    write_file(dir, "kernel_params.csv", body, &written);
  }
  {
    std::string body = "kernel,modality,tap,t_star,value\n";
    for (int kernel = 0; kernel < kGlKernels; ++kernel) {
      for (int k = 0; k < kGaborTaps; ++k) {
        body += std::to_string(kernel);
        body += ',';
        body += modality_of(kernel);
        body += ',';
        body += std::to_string(k);
        body += ',';
        body += fmt_double(gabor_tap_time(k));
        body += ',';
        body += fmt_double(taps[static_cast<std::size_t>(kernel)][static_cast<std::size_t>(k)]);
        body += '\n';
      }
    }
    write_file(dir, "kernel_waveforms.csv", body, &written);
  }
  {
    std::string body = "kernel,modality,freq_hz,magnitude\n";
    for (int kernel = 0; kernel < kGlKernels; ++kernel) {
      const auto mag = magnitude_spectrum(taps[static_cast<std::size_t>(kernel)], kSpectrumFftSize);
      for (std::size_t b = 0; b < mag.size(); ++b) {
        body += std::to_string(kernel);
        body += ',';
        body += modality_of(kernel);
        body += ',';
        body += fmt_double(static_cast<double>(b) * kGaborSampleRate / kSpectrumFftSize);
        body += ',';
        body += fmt_double(mag[b]);
        body += '\n';
      }
    }
    write_file(dir, "kernel_spectra.csv", body, &written);
  }
  return written;
}

std::vector<std::string> interpretation_report(SingleEpochNet<float>& single,
                                               MultiEpochNet<float>* multi,
                                               const EpochStore& store,
                                               const std::vector<EpochRef>& test,
                                               const std::string& out_dir,
                                               const InterpretOptions& opts) {
  if (test.empty()) throw DataError("interpretation report: empty test set");
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  std::vector<std::string> written = export_kernel_files(single, out_dir);

  // --- per-epoch effects ---------------------------------------------------
  std::vector<EpochEffects> effects;
  effects.reserve(test.size());
  std::string ratio_body = "recording,epoch_index,stage,ratio,defined\n";
  std::string trace_body = "recording,epoch_index,kernel,t_seconds,effect\n";
  for (std::size_t n = 0; n < test.size(); ++n) {
    const EpochRef ref = test[n];
    const auto& rec = store.recordings[static_cast<std::size_t>(ref.recording)];
    const LabeledEpoch& e = store.get(ref);
    // Run the eval pass once with the true stage as target, then redo the
    // backward against the predicted stage only when asked and different.
    SensitivityMap m = sensitivity(single, e, static_cast<int>(e.label), opts.target);
    if (opts.use_predicted_label && m.predicted != e.label)
      m = sensitivity(single, e, static_cast<int>(m.predicted), opts.target);

    EpochEffects ee;
    ee.stage = e.label;
    ee.eff_bar = effect_bars(m);
    ee.top = top_kernel(ee.eff_bar);
    effects.push_back(ee);

    const ModalityRatio ratio = modality_ratio(ee.eff_bar);
    ratio_body += rec.id;
    ratio_body += ',';
    ratio_body += std::to_string(e.index);
    ratio_body += ',';
    ratio_body += stage_name(e.label);
    ratio_body += ',';
    ratio_body += ratio.defined ? fmt_double(ratio.value) : std::string();
    ratio_body += ',';
    ratio_body += ratio.defined ? '1' : '0';
    ratio_body += '\n';

    if (static_cast<int>(n) < opts.trace_epochs) {
      const auto records = effect_records(m);
      std::vector<int> order(static_cast<std::size_t>(kGlKernels));
      for (int i = 0; i < kGlKernels; ++i) order[static_cast<std::size_t>(i)] = i;
      std::stable_sort(order.begin(), order.end(), [&ee](int x, int y) {
        return ee.eff_bar[static_cast<std::size_t>(x)] > ee.eff_bar[static_cast<std::size_t>(y)];
      });
      const int keep = std::min(opts.trace_kernels, kGlKernels);
      for (int rank = 0; rank < keep; ++rank) {
        const int kernel = order[static_cast<std::size_t>(rank)];
        const auto& series = records[static_cast<std::size_t>(kernel)].eff;
        for (std::size_t t = 0; t < series.size(); ++t) {
          trace_body += rec.id;
          trace_body += ',';
          trace_body += std::to_string(e.index);
          trace_body += ',';
          trace_body += std::to_string(kernel);
          trace_body += ',';
          trace_body += fmt_double(gl_time_seconds(static_cast<int>(t)));
          trace_body += ',';
          trace_body += fmt_float(series[t]);
          trace_body += '\n';
        }
      }
    }
  }
  write_file(dir, "modality_ratio.csv", ratio_body, &written);
  write_file(dir, "effect_traces.csv", trace_body, &written);

  // --- aggregates ----------------------------------------------------------
  const EffectSummary summary = summarize(effects);
  {
    double max_eff = 0.0;
    for (double v : summary.eff_overall) max_eff = std::max(max_eff, v);
    std::string body = "kernel,modality,eff,eff_normalized,top_share\n";
    for (int i = 0; i < kGlKernels; ++i) {
      const auto is = static_cast<std::size_t>(i);
      body += std::to_string(i);
      body += ',';
      body += modality_of(i);
      body += ',';
      body += fmt_double(summary.eff_overall[is]);
      body += ',';
      body += fmt_double(max_eff > 0.0 ? summary.eff_overall[is] / max_eff : 0.0);
      body += ',';
      body += fmt_double(summary.top_share_overall[is]);
      body += '\n';
    }
    write_file(dir, "effect_overall.csv", body, &written);
  }
  {
    std::string body = "stage,kernel,eff,top_count,n_stage\n";
    for (int j = 0; j < kNumStages; ++j) {
      const auto js = static_cast<std::size_t>(j);
      if (summary.stage_missing[js]) continue;
      for (int i = 0; i < kGlKernels; ++i) {
        const auto is = static_cast<std::size_t>(i);
        body += stage_name(static_cast<StageLabel>(j));
        body += ',';
        body += std::to_string(i);
        body += ',';
        body += fmt_double(summary.eff_stage[js][is]);
        body += ',';
        body += std::to_string(summary.top_count_stage[js][is]);
        body += ',';
        body += std::to_string(summary.n_stage[js]);
        body += '\n';
      }
    }
    write_file(dir, "effect_by_stage.csv", body, &written);
  }

  // --- distributions and pairwise stage tests for the top kernels ----------
  std::vector<int> global_order(static_cast<std::size_t>(kGlKernels));
  for (int i = 0; i < kGlKernels; ++i) global_order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(global_order.begin(), global_order.end(), [&summary](int x, int y) {
    return summary.eff_overall[static_cast<std::size_t>(x)] >
           summary.eff_overall[static_cast<std::size_t>(y)];
  });
  const int top_n = std::min(opts.trace_kernels, kGlKernels);
  {
    std::string body = "kernel,stage,recording,epoch_index,eff_bar\n";
    for (int rank = 0; rank < top_n; ++rank) {
      const int kernel = global_order[static_cast<std::size_t>(rank)];
      for (std::size_t n = 0; n < test.size(); ++n) {
        const EpochRef ref = test[n];
        body += std::to_string(kernel);
        body += ',';
        body += stage_name(effects[n].stage);
        body += ',';
        body += store.recordings[static_cast<std::size_t>(ref.recording)].id;
        body += ',';
        body += std::to_string(store.get(ref).index);
        body += ',';
        body += fmt_double(effects[n].eff_bar[static_cast<std::size_t>(kernel)]);
        body += '\n';
      }
    }
    write_file(dir, "stage_distributions.csv", body, &written);
  }
  {
    std::string body = "kernel,stage_a,stage_b,t,df,p,significant\n";
    for (int rank = 0; rank < top_n; ++rank) {
      const int kernel = global_order[static_cast<std::size_t>(rank)];
      std::array<std::vector<double>, kNumStages> samples;
      for (std::size_t n = 0; n < effects.size(); ++n)
        samples[static_cast<std::size_t>(effects[n].stage)].push_back(
            effects[n].eff_bar[static_cast<std::size_t>(kernel)]);
      for (int ja = 0; ja < kNumStages; ++ja) {
        for (int jb = ja + 1; jb < kNumStages; ++jb) {
          const auto& a = samples[static_cast<std::size_t>(ja)];
          const auto& b = samples[static_cast<std::size_t>(jb)];
          if (a.size() < 2 || b.size() < 2) continue;
          const WelchResult w = stage_test(a, b);
          body += std::to_string(kernel);
          body += ',';
          body += stage_name(static_cast<StageLabel>(ja));
          body += ',';
          body += stage_name(static_cast<StageLabel>(jb));
          body += ',';
          body += fmt_double(w.t);
          body += ',';
          body += fmt_double(w.df);
          body += ',';
          body += fmt_double(w.p);
          body += ',';
          body += w.p < kSignificance ? '1' : '0';
          body += '\n';
        }
      }
    }
    write_file(dir, "stage_tests.csv", body, &written);
  }

  // --- single vs context agreement ----------------------------------------
  if (multi != nullptr) {
    std::vector<int> rec_order;
    std::map<int, std::vector<int>> epochs_by_rec;
    for (const EpochRef ref : test) {
      auto [it, inserted] = epochs_by_rec.try_emplace(ref.recording);
      if (inserted) rec_order.push_back(ref.recording);
      it->second.push_back(ref.epoch);
    }
    std::vector<StageLabel> truth, single_pred, multi_pred;
    for (int rec : rec_order) {
      const auto scored =
          score_recording(single, *multi, store.recordings[static_cast<std::size_t>(rec)]);
      for (int idx : epochs_by_rec.at(rec)) {
        truth.push_back(
            store.recordings[static_cast<std::size_t>(rec)].epochs[static_cast<std::size_t>(idx)]
                .label);
        single_pred.push_back(scored[static_cast<std::size_t>(idx)].single_pred);
        multi_pred.push_back(scored[static_cast<std::size_t>(idx)].multi_pred);
      }
    }
    write_file(dir, "agreement.json",
               agreement_to_json(agreement_matrix(single_pred, multi_pred, truth)), &written);
  }

  // --- manifest-style summary ----------------------------------------------
  {
    nlohmann::json j;
    j["target"] = opts.target == SensitivityTarget::Softmax ? "softmax" : "logit";
    j["label_mode"] = opts.use_predicted_label ? "predicted" : "true";
    j["front_end"] = front_end_name(single.front_end);
    j["test_epochs"] = test.size();
    nlohmann::json stages = nlohmann::json::object();
    for (int jdx = 0; jdx < kNumStages; ++jdx) {
      const auto js = static_cast<std::size_t>(jdx);
      nlohmann::json st;
      st["n"] = summary.n_stage[js];
      st["missing"] = summary.stage_missing[js];
      stages[stage_name(static_cast<StageLabel>(jdx))] = st;
    }
    j["stages"] = stages;
    j["eff_overall"] = summary.eff_overall;
    j["top_share_overall"] = summary.top_share_overall;
    nlohmann::json per_stage = nlohmann::json::object();
    for (int jdx = 0; jdx < kNumStages; ++jdx) {
      const auto js = static_cast<std::size_t>(jdx);
      if (summary.stage_missing[js]) continue;
      nlohmann::json st;
      st["eff"] = summary.eff_stage[js];
      st["top_count"] = summary.top_count_stage[js];
      per_stage[stage_name(static_cast<StageLabel>(jdx))] = st;
    }
    j["per_stage"] = per_stage;
    std::vector<std::string> files = written;
    files.push_back("summary.json");
    j["files"] = files;
    write_file(dir, "summary.json", j.dump(2) + "\n", &written);
  }
  return written;
}

}  // namespace gaborscope
