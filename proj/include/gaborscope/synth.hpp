#ifndef GABORSCOPE_SYNTH_HPP
#define GABORSCOPE_SYNTH_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "gaborscope/dataset.hpp"
#include "gaborscope/rng.hpp"

namespace gaborscope {

// Per-stage EEG signatures for generated data. Each stage has a distinct
// spectral fingerprint so a trained model's kernels can be checked against
// the known generator frequency:
//   Wake broadband noise, S1 9 Hz, S2 14 Hz spindle bursts, SWS 1 Hz slow
//   wave, REM 4 Hz with a 0.5 Hz slow-roll EOG component.
// The EOG channel is noise for every stage except REM.
double stage_signal_hz(StageLabel s);  // 0 for Wake (no tone)

// One 30 s epoch of both channels for the given stage signature.
void synth_epoch_signals(StageLabel signature, CounterRng& rng, std::vector<float>* eeg,
                         std::vector<float>* eog);

// Three-class task: 1 Hz slow waves vs 14 Hz spindle bursts vs pure noise,
// labeled SWS / S2 / Wake. Epochs are dealt round-robin across recordings,
// so every recording carries all three classes in equal measure.
struct ThreeClassSpec {
  int epochs_per_class = 600;
  int recordings = 6;  // must divide epochs_per_class
  std::uint64_t seed = 1;
};

EpochStore three_class_store(const ThreeClassSpec& spec);

// Five-stage task with first-order Markov stage transitions. A corrupted
// fraction of epochs keeps its true label but carries another stage's
// signal, so context across neighboring epochs genuinely helps.
struct MarkovSpec {
  int recordings = 4;  // two nights per subject: m01-n1, m01-n2, m02-n1, ...
  int epochs_per_recording = 200;
  double corruption = 0.1;
  std::uint64_t seed = 1;
};

EpochStore markov_store(const MarkovSpec& spec);

// Writes one EDF file per recording ("<id>.edf": EEG Fpz-Cz + EOG horizontal
// at 100 Hz, one 30 s data record per epoch) plus an "<id>.hypnogram.csv"
// stage file, and returns the file names written. Samples are quantized to
// the 16-bit range over physical bounds of +/-8.
std::vector<std::string> write_synth_dataset(const EpochStore& store, const std::string& dir);

inline constexpr const char* kSynthEegChannel = "EEG Fpz-Cz";
inline constexpr const char* kSynthEogChannel = "EOG horizontal";

}  // namespace gaborscope

#endif
