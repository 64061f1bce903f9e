#ifndef GABORSCOPE_INTERPRET_HPP
#define GABORSCOPE_INTERPRET_HPP

#include <array>
#include <string>
#include <vector>

#include "gaborscope/dataset.hpp"
#include "gaborscope/network.hpp"
#include "gaborscope/tensor.hpp"

namespace gaborscope {

inline constexpr int kGlKernels = SingleEpochNet<float>::kGlChannels;  // 32 EEG + 8 EOG

// What the sensitivity gradient targets: the raw class logit (default) or
// the softmax probability.
enum class SensitivityTarget { Logit, Softmax };

// Exact reverse-mode gradient of one output with respect to every
// waveform-detector activation sample, plus the activations themselves from
// the same eval-mode forward pass.
struct SensitivityMap {
  int target_class = 0;
  StageLabel predicted = StageLabel::Wake;  // argmax of the same pass
  Tensor<float> gl;                         // [40, 2801]
  Tensor<float> sen;                        // [40, 2801]
};

SensitivityMap sensitivity(SingleEpochNet<float>& net, const LabeledEpoch& epoch,
                           int target_class,
                           SensitivityTarget target = SensitivityTarget::Logit);

// Effect series of one kernel: activation times sensitivity where the
// sensitivity is strictly positive, zero elsewhere. eff_bar is the sum of
// squared series samples.
struct EffectRecord {
  int kernel = 0;
  std::vector<float> eff;
  double eff_bar = 0.0;
};

std::vector<EffectRecord> effect_records(const SensitivityMap& m);

// Just the per-kernel scalars, skipping series storage.
std::array<double, kGlKernels> effect_bars(const SensitivityMap& m);

// Argmax with ties broken to the lowest kernel index.
int top_kernel(const std::array<double, kGlKernels>& eff_bar);

// One scored test epoch: its true stage and per-kernel effect scalars.
struct EpochEffects {
  StageLabel stage = StageLabel::Wake;
  std::array<double, kGlKernels> eff_bar{};
  int top = 0;
};

// Stage-weighted aggregates over a test set. Stages absent from the set are
// flagged and contribute nothing to the overall rows.
struct EffectSummary {
  std::array<double, kGlKernels> eff_overall{};                          // Eff_i
  std::array<double, kGlKernels> top_share_overall{};                    // #_i
  std::array<std::array<double, kGlKernels>, kNumStages> eff_stage{};    // Eff_i^j
  std::array<std::array<long, kGlKernels>, kNumStages> top_count_stage{};  // #_i^j
  std::array<long, kNumStages> n_stage{};                                // N_j
  std::array<bool, kNumStages> stage_missing{};
};

EffectSummary summarize(const std::vector<EpochEffects>& epochs);

// Mean EEG-kernel effect divided by mean EOG-kernel effect; undefined when
// the EOG mean is zero.
struct ModalityRatio {
  double value = 0.0;
  bool defined = false;
};

ModalityRatio modality_ratio(const std::array<double, kGlKernels>& eff_bar);

// Welch two-sample t-test with a two-sided p value. Zero pooled variance
// (both groups internally constant) degenerates to t=0, p=1.
struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

WelchResult stage_test(const std::vector<double>& a, const std::vector<double>& b);

struct InterpretOptions {
  SensitivityTarget target = SensitivityTarget::Logit;
  // Effect class defaults to the epoch's true stage; this switches it to the
  // model's own prediction for error analysis.
  bool use_predicted_label = false;
  int trace_kernels = 2;  // top kernels per traced epoch and for stage tests
  int trace_epochs = 1;   // leading test epochs that get full effect traces
};

// Writes the first-layer description files into out_dir and returns their
// names: kernel_params.csv (Gabor front end only), kernel_waveforms.csv,
// kernel_spectra.csv.
std::vector<std::string> export_kernel_files(SingleEpochNet<float>& net,
                                             const std::string& out_dir);

// Emits the full report file set into out_dir and returns the file names
// written (summary.json last, which also lists them). The context model is
// optional; without it the single-vs-context agreement file is skipped.
std::vector<std::string> interpretation_report(SingleEpochNet<float>& single,
                                               MultiEpochNet<float>* multi,
                                               const EpochStore& store,
                                               const std::vector<EpochRef>& test,
                                               const std::string& out_dir,
                                               const InterpretOptions& opts = {});

}  // namespace gaborscope

#endif
