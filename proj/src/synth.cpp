#include "gaborscope/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace gaborscope {

namespace {

constexpr double kTwoPi = 6.28318530717958647692;
constexpr double kPhysRange = 8.0;  // EDF physical bounds +/-8

// Seed chain: one stream per (task seed, recording, epoch) so generation
// order never matters.
CounterRng epoch_rng(std::uint64_t seed, int recording, int epoch) {
  return CounterRng(CounterRng::derive(
      CounterRng::derive(CounterRng::derive(seed, 0x5e), static_cast<std::uint64_t>(recording)),
      static_cast<std::uint64_t>(epoch)));
}

void fill_noise(std::vector<float>* out, double scale, CounterRng& rng) {
  for (auto& v : *out) v = static_cast<float>(scale * rng.normal());
}

void add_tone(std::vector<float>* out, double hz, double amp, double phase) {
  for (int t = 0; t < kEpochSamples; ++t)
    (*out)[static_cast<std::size_t>(t)] +=
        static_cast<float>(amp * std::sin(kTwoPi * hz * (t / 100.0) + phase));
}

void add_spindle_bursts(std::vector<float>* out, double hz, double amp, CounterRng& rng) {
  const double phase = rng.uniform(0.0, kTwoPi);
  double center = 1.0 + rng.uniform(0.0, 1.0);
  std::vector<double> centers;
  while (center < 29.5) {
    centers.push_back(center);
    center += rng.uniform(2.0, 3.5);
  }
  constexpr double sigma = 0.25;  // burst half-width in seconds
  for (int t = 0; t < kEpochSamples; ++t) {
    const double sec = t / 100.0;
    double env = 0.0;
    for (double c : centers) {
      const double d = sec - c;
      env += std::exp(-d * d / (2.0 * sigma * sigma));
    }
    (*out)[static_cast<std::size_t>(t)] +=
        static_cast<float>(amp * env * std::sin(kTwoPi * hz * sec + phase));
  }
}

}  // namespace

double stage_signal_hz(StageLabel s) {
  switch (s) {
    case StageLabel::Wake: return 0.0;
    case StageLabel::S1: return 9.0;
    case StageLabel::S2: return 14.0;
    case StageLabel::SWS: return 1.0;
    case StageLabel::REM: return 4.0;
  }
  return 0.0;
}

void synth_epoch_signals(StageLabel signature, CounterRng& rng, std::vector<float>* eeg,
                         std::vector<float>* eog) {
  eeg->assign(kEpochSamples, 0.0f);
  eog->assign(kEpochSamples, 0.0f);
  switch (signature) {
    case StageLabel::Wake:
      fill_noise(eeg, 0.9, rng);
      break;
    case StageLabel::S1:
      fill_noise(eeg, 0.25, rng);
      add_tone(eeg, 9.0, 1.0, rng.uniform(0.0, kTwoPi));
      break;
    case StageLabel::S2:
      fill_noise(eeg, 0.25, rng);
      add_spindle_bursts(eeg, 14.0, 1.2, rng);
      break;
    case StageLabel::SWS:
      fill_noise(eeg, 0.25, rng);
      add_tone(eeg, 1.0, 1.25, rng.uniform(0.0, kTwoPi));
      break;
    case StageLabel::REM:
      fill_noise(eeg, 0.25, rng);
      add_tone(eeg, 4.0, 1.0, rng.uniform(0.0, kTwoPi));
      break;
  }
  if (signature == StageLabel::REM) {
    fill_noise(eog, 0.3, rng);
    add_tone(eog, 0.5, 0.6, rng.uniform(0.0, kTwoPi));
  } else {
    fill_noise(eog, 0.5, rng);
  }
}

EpochStore three_class_store(const ThreeClassSpec& spec) {
  if (spec.epochs_per_class <= 0 || spec.recordings <= 0)
    throw std::invalid_argument("three_class_store: counts must be positive");
  if (spec.epochs_per_class % spec.recordings != 0)
    throw std::invalid_argument("three_class_store: recordings must divide epochs_per_class");
  const StageLabel classes[3] = {StageLabel::Wake, StageLabel::S2, StageLabel::SWS};
  const int per_rec = 3 * (spec.epochs_per_class / spec.recordings);

  EpochStore st;
  for (int r = 0; r < spec.recordings; ++r) {
    RecordingEpochs rec;
    char id[16];
    std::snprintf(id, sizeof id, "t%02d-n1", r + 1);
    rec.id = id;
    rec.subject = rec.id.substr(0, 3);
    rec.night = 1;
    for (int k = 0; k < per_rec; ++k) {
      LabeledEpoch e;
      e.label = classes[k % 3];
      e.index = k;
      CounterRng rng = epoch_rng(spec.seed, r, k);
      synth_epoch_signals(e.label, rng, &e.eeg, &e.eog);
      rec.epochs.push_back(std::move(e));
    }
    st.recordings.push_back(std::move(rec));
  }
  return st;
}

EpochStore markov_store(const MarkovSpec& spec) {
  if (spec.recordings <= 0 || spec.epochs_per_recording <= 0)
    throw std::invalid_argument("markov_store: counts must be positive");
  if (spec.corruption < 0.0 || spec.corruption > 1.0)
    throw std::invalid_argument("markov_store: corruption must lie in [0, 1]");

  // Row-stochastic transition matrix, Wake/S1/S2/SWS/REM order. Strong
  // self-persistence produces the stage runs a context model can exploit.
  static constexpr double kTransition[kNumStages][kNumStages] = {
      {0.82, 0.15, 0.00, 0.00, 0.03},  // Wake
      {0.10, 0.60, 0.25, 0.00, 0.05},  // S1
      {0.00, 0.05, 0.80, 0.10, 0.05},  // S2
      {0.00, 0.00, 0.15, 0.85, 0.00},  // SWS
      {0.10, 0.08, 0.00, 0.00, 0.82},  // REM
  };

  EpochStore st;
  for (int r = 0; r < spec.recordings; ++r) {
    RecordingEpochs rec;
    char id[16];
    std::snprintf(id, sizeof id, "m%02d-n%d", r / 2 + 1, r % 2 + 1);
    rec.id = id;
    rec.subject = rec.id.substr(0, 3);
    rec.night = r % 2 + 1;

    CounterRng chain(CounterRng::derive(CounterRng::derive(spec.seed, 0x4d),
                                        static_cast<std::uint64_t>(r)));
    StageLabel stage = StageLabel::Wake;
    for (int k = 0; k < spec.epochs_per_recording; ++k) {
      LabeledEpoch e;
      e.label = stage;
      e.index = k;
      CounterRng rng = epoch_rng(spec.seed, r, k);
      StageLabel signature = stage;
      if (rng.uniform() < spec.corruption) {
        // keep the label, swap in another stage's signal
        const auto shift = 1 + rng.uniform_index(kNumStages - 1);
        signature = static_cast<StageLabel>(
            (static_cast<std::size_t>(stage) + shift) % kNumStages);
      }
      synth_epoch_signals(signature, rng, &e.eeg, &e.eog);
      rec.epochs.push_back(std::move(e));

      const double* row = kTransition[static_cast<std::size_t>(stage)];
      double u = chain.uniform();
      for (int j = 0; j < kNumStages; ++j) {
        u -= row[j];
        if (u < 0.0) {
          stage = static_cast<StageLabel>(j);
          break;
        }
      }
    }
    st.recordings.push_back(std::move(rec));
  }
  return st;
}

namespace {

void append_field(std::string* out, const std::string& value, std::size_t width) {
  if (value.size() > width)
    throw std::invalid_argument("edf header field too wide: " + value);
  *out += value;
  out->append(width - value.size(), ' ');
}

void append_samples(std::vector<unsigned char>* bytes, const std::vector<float>& x) {
  for (int k = 0; k < kEpochSamples; ++k) {
    const double v =
        std::clamp(static_cast<double>(x[static_cast<std::size_t>(k)]), -kPhysRange, kPhysRange);
    const double scaled = (v + kPhysRange) / (2.0 * kPhysRange) * 65535.0 - 32768.0;
    const auto d = static_cast<std::int16_t>(std::lround(scaled));
    const auto u = static_cast<std::uint16_t>(d);
    bytes->push_back(static_cast<unsigned char>(u & 0xff));
    bytes->push_back(static_cast<unsigned char>(u >> 8));
  }
}

const char* stage_annotation(StageLabel s) {
  switch (s) {
    case StageLabel::Wake: return "Sleep stage W";
    case StageLabel::S1: return "Sleep stage 1";
    case StageLabel::S2: return "Sleep stage 2";
    case StageLabel::SWS: return "Sleep stage 3";
    case StageLabel::REM: return "Sleep stage R";
  }
  return "Sleep stage ?";
}

}  // namespace

std::vector<std::string> write_synth_dataset(const EpochStore& store, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> written;
  for (const RecordingEpochs& rec : store.recordings) {
    const int num_records = static_cast<int>(rec.epochs.size());
    std::string h;
    append_field(&h, "0", 8);
    append_field(&h, rec.subject, 80);
    append_field(&h, rec.id, 80);
    append_field(&h, "01.01.01", 8);
    append_field(&h, "00.00.00", 8);
    append_field(&h, std::to_string(256 * 3), 8);
    append_field(&h, "", 44);
    append_field(&h, std::to_string(num_records), 8);
    append_field(&h, "30", 8);
    append_field(&h, "2", 4);
    append_field(&h, kSynthEegChannel, 16);
    append_field(&h, kSynthEogChannel, 16);
    for (int i = 0; i < 2; ++i) append_field(&h, "", 80);   // transducer
    for (int i = 0; i < 2; ++i) append_field(&h, "uV", 8);  // physical dimension
    for (int i = 0; i < 2; ++i) append_field(&h, "-8", 8);
    for (int i = 0; i < 2; ++i) append_field(&h, "8", 8);
    for (int i = 0; i < 2; ++i) append_field(&h, "-32768", 8);
    for (int i = 0; i < 2; ++i) append_field(&h, "32767", 8);
    for (int i = 0; i < 2; ++i) append_field(&h, "", 80);   // prefiltering
    for (int i = 0; i < 2; ++i) append_field(&h, "3000", 8);
    for (int i = 0; i < 2; ++i) append_field(&h, "", 32);   // reserved

    std::vector<unsigned char> bytes(h.begin(), h.end());
    for (const LabeledEpoch& e : rec.epochs) {
      append_samples(&bytes, e.eeg);
      append_samples(&bytes, e.eog);
    }

    const auto edf_name = rec.id + ".edf";
    std::ofstream out(std::filesystem::path(dir) / edf_name, std::ios::binary);
    if (!out) throw DataError("cannot write " + edf_name);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.close();
    written.push_back(edf_name);

    std::string csv = "onset_s,duration_s,label\n";
    for (std::size_t k = 0; k < rec.epochs.size(); ++k) {
      csv += std::to_string(30 * k);
      csv += ",30,";
      csv += stage_annotation(rec.epochs[k].label);
      csv += '\n';
    }
    const auto csv_name = rec.id + ".hypnogram.csv";
    std::ofstream csv_out(std::filesystem::path(dir) / csv_name, std::ios::binary);
    if (!csv_out) throw DataError("cannot write " + csv_name);
    csv_out << csv;
    written.push_back(csv_name);
  }
  return written;
}

}  // namespace gaborscope
