#include "gaborscope/synth.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "gaborscope/edf.hpp"
#include "gaborscope/fft.hpp"
#include "gaborscope/manifest.hpp"

using namespace gaborscope;

namespace {

double epoch_peak_hz(const std::vector<float>& x) {
  std::vector<double> xd(x.begin(), x.end());
  const auto mag = magnitude_spectrum(xd, 2048);
  std::size_t best = 1;  // skip the DC bin
  for (std::size_t b = 2; b < mag.size(); ++b)
    if (mag[b] > mag[best]) best = b;
  return static_cast<double>(best) * 100.0 / 2048.0;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("three-class store deals balanced classes across recordings") {
  ThreeClassSpec spec;
  spec.epochs_per_class = 12;
  spec.recordings = 3;
  spec.seed = 5;
  const EpochStore st = three_class_store(spec);

  REQUIRE(st.recordings.size() == 3);
  CHECK(st.recordings[0].id == "t01-n1");
  CHECK(st.recordings[0].subject == "t01");
  CHECK(st.recordings[2].id == "t03-n1");
  for (const auto& rec : st.recordings) {
    REQUIRE(rec.epochs.size() == 12);
    const auto counts = rec.stage_counts();
    CHECK(counts[static_cast<std::size_t>(StageLabel::Wake)] == 4);
    CHECK(counts[static_cast<std::size_t>(StageLabel::S2)] == 4);
    CHECK(counts[static_cast<std::size_t>(StageLabel::SWS)] == 4);
    CHECK(counts[static_cast<std::size_t>(StageLabel::S1)] == 0);
    CHECK(counts[static_cast<std::size_t>(StageLabel::REM)] == 0);
    for (std::size_t k = 0; k < rec.epochs.size(); ++k) {
      CHECK(rec.epochs[k].index == static_cast<int>(k));
      REQUIRE(rec.epochs[k].eeg.size() == static_cast<std::size_t>(kEpochSamples));
      REQUIRE(rec.epochs[k].eog.size() == static_cast<std::size_t>(kEpochSamples));
    }
  }
  CHECK(st.recordings[0].epochs[0].label == StageLabel::Wake);
  CHECK(st.recordings[0].epochs[1].label == StageLabel::S2);
  CHECK(st.recordings[0].epochs[2].label == StageLabel::SWS);

  ThreeClassSpec ragged = spec;
  ragged.recordings = 5;
  CHECK_THROWS_AS(three_class_store(ragged), std::invalid_argument);
  ThreeClassSpec zero = spec;
  zero.epochs_per_class = 0;
  CHECK_THROWS_AS(three_class_store(zero), std::invalid_argument);
}

TEST_CASE("generators are deterministic in the seed") {
  ThreeClassSpec spec;
  spec.epochs_per_class = 6;
  spec.recordings = 2;
  spec.seed = 11;
  CHECK(dataset_fingerprint(three_class_store(spec)) ==
        dataset_fingerprint(three_class_store(spec)));
  ThreeClassSpec other = spec;
  other.seed = 12;
  CHECK(dataset_fingerprint(three_class_store(other)) !=
        dataset_fingerprint(three_class_store(spec)));

  MarkovSpec ms;
  ms.recordings = 2;
  ms.epochs_per_recording = 20;
  ms.seed = 11;
  CHECK(dataset_fingerprint(markov_store(ms)) == dataset_fingerprint(markov_store(ms)));
  MarkovSpec ms2 = ms;
  ms2.seed = 12;
  CHECK(dataset_fingerprint(markov_store(ms2)) != dataset_fingerprint(markov_store(ms)));
}

TEST_CASE("stage signatures place their energy at the generator frequency") {
  CHECK(stage_signal_hz(StageLabel::SWS) == 1.0);
  CHECK(stage_signal_hz(StageLabel::S2) == 14.0);
  CHECK(stage_signal_hz(StageLabel::S1) == 9.0);
  CHECK(stage_signal_hz(StageLabel::REM) == 4.0);
  CHECK(stage_signal_hz(StageLabel::Wake) == 0.0);

  for (StageLabel s : {StageLabel::SWS, StageLabel::S2, StageLabel::S1, StageLabel::REM}) {
    for (std::uint64_t salt = 0; salt < 3; ++salt) {
      CounterRng rng(CounterRng::derive(0x5eed, salt * 8 + static_cast<std::uint64_t>(s)));
      std::vector<float> eeg, eog;
      synth_epoch_signals(s, rng, &eeg, &eog);
      CAPTURE(static_cast<int>(s));
      CHECK(std::abs(epoch_peak_hz(eeg) - stage_signal_hz(s)) < 0.5);
    }
  }

  // REM carries a slow-roll component on the EOG channel
  CounterRng rng(CounterRng::derive(0x5eed, 99));
  std::vector<float> eeg, eog;
  synth_epoch_signals(StageLabel::REM, rng, &eeg, &eog);
  CHECK(std::abs(epoch_peak_hz(eog) - 0.5) < 0.3);
}

TEST_CASE("markov store has persistent runs over all five stages") {
  MarkovSpec spec;
  spec.recordings = 4;
  spec.epochs_per_recording = 200;
  spec.corruption = 0.1;
  spec.seed = 3;
  const EpochStore st = markov_store(spec);

  REQUIRE(st.recordings.size() == 4);
  CHECK(st.recordings[0].id == "m01-n1");
  CHECK(st.recordings[1].id == "m01-n2");
  CHECK(st.recordings[2].id == "m02-n1");
  CHECK(st.recordings[3].id == "m02-n2");
  CHECK(st.recordings[0].subject == "m01");
  CHECK(st.recordings[3].subject == "m02");
  CHECK(st.recordings[1].night == 2);

  std::array<long, kNumStages> totals{};
  long same = 0, pairs = 0;
  for (const auto& rec : st.recordings) {
    REQUIRE(rec.epochs.size() == 200);
    const auto counts = rec.stage_counts();
    for (int j = 0; j < kNumStages; ++j) totals[static_cast<std::size_t>(j)] += counts[static_cast<std::size_t>(j)];
    for (std::size_t k = 1; k < rec.epochs.size(); ++k) {
      ++pairs;
      if (rec.epochs[k].label == rec.epochs[k - 1].label) ++same;
    }
  }
  for (int j = 0; j < kNumStages; ++j) {
    CAPTURE(j);
    CHECK(totals[static_cast<std::size_t>(j)] > 0);
  }
  CHECK(static_cast<double>(same) / static_cast<double>(pairs) > 0.6);

  MarkovSpec bad = spec;
  bad.corruption = 1.5;
  CHECK_THROWS_AS(markov_store(bad), std::invalid_argument);
}

TEST_CASE("corruption swaps signals while keeping labels") {
  MarkovSpec clean;
  clean.recordings = 1;
  clean.epochs_per_recording = 150;
  clean.corruption = 0.0;
  clean.seed = 21;
  MarkovSpec dirty = clean;
  dirty.corruption = 1.0;

  auto match_rate = [](const EpochStore& st) {
    long toned = 0, matched = 0;
    for (const auto& rec : st.recordings) {
      for (const auto& e : rec.epochs) {
        const double hz = stage_signal_hz(e.label);
        if (hz == 0.0) continue;  // Wake has no tone to match
        ++toned;
        if (std::abs(epoch_peak_hz(e.eeg) - hz) < 0.5) ++matched;
      }
    }
    REQUIRE(toned > 0);
    return static_cast<double>(matched) / static_cast<double>(toned);
  };

  CHECK(match_rate(markov_store(clean)) > 0.95);
  CHECK(match_rate(markov_store(dirty)) < 0.3);

  // labels follow the same chain regardless of corruption
  const EpochStore a = markov_store(clean);
  const EpochStore b = markov_store(dirty);
  for (std::size_t k = 0; k < a.recordings[0].epochs.size(); ++k)
    REQUIRE(a.recordings[0].epochs[k].label == b.recordings[0].epochs[k].label);
}

TEST_CASE("written dataset round-trips through the edf and hypnogram parsers") {
  ThreeClassSpec spec;
  spec.epochs_per_class = 2;
  spec.recordings = 1;
  spec.seed = 7;
  const EpochStore st = three_class_store(spec);
  REQUIRE(st.recordings.size() == 1);
  REQUIRE(st.recordings[0].epochs.size() == 6);

  const auto dir = std::filesystem::temp_directory_path() / "gscope_synth_test";
  std::filesystem::remove_all(dir);
  const auto files = write_synth_dataset(st, dir.string());
  const std::vector<std::string> expected = {"t01-n1.edf", "t01-n1.hypnogram.csv"};
  CHECK(files == expected);

  const Recording rec = parse_edf_file((dir / "t01-n1.edf").string());
  CHECK(rec.subject.empty());  // parser keeps only the caller-provided id
  const Channel* eeg = rec.find_channel(kSynthEegChannel);
  const Channel* eog = rec.find_channel(kSynthEogChannel);
  REQUIRE(eeg != nullptr);
  REQUIRE(eog != nullptr);
  CHECK(eeg->sample_rate_hz == 100.0);
  REQUIRE(eeg->samples.size() == 6u * kEpochSamples);
  REQUIRE(eog->samples.size() == 6u * kEpochSamples);

  const double quantum = 16.0 / 65535.0;
  for (std::size_t k = 0; k < st.recordings[0].epochs.size(); ++k) {
    const auto& e = st.recordings[0].epochs[k];
    for (int t = 0; t < kEpochSamples; t += 307) {
      const std::size_t at = k * kEpochSamples + static_cast<std::size_t>(t);
      CHECK(std::abs(eeg->samples[at] - e.eeg[static_cast<std::size_t>(t)]) <= quantum);
      CHECK(std::abs(eog->samples[at] - e.eog[static_cast<std::size_t>(t)]) <= quantum);
    }
  }

  const auto annotations = parse_hypnogram_csv_file((dir / "t01-n1.hypnogram.csv").string());
  const Hypnogram hyp = map_hypnogram(annotations);
  REQUIRE(hyp.epochs.size() == 6);
  for (std::size_t k = 0; k < hyp.epochs.size(); ++k) {
    REQUIRE(hyp.epochs[k].has_value());
    CHECK(*hyp.epochs[k] == st.recordings[0].epochs[k].label);
  }

  // rewriting produces the same bytes
  const auto dir2 = std::filesystem::temp_directory_path() / "gscope_synth_test2";
  std::filesystem::remove_all(dir2);
  write_synth_dataset(st, dir2.string());
  CHECK(slurp(dir / "t01-n1.edf") == slurp(dir2 / "t01-n1.edf"));
  CHECK(slurp(dir / "t01-n1.hypnogram.csv") == slurp(dir2 / "t01-n1.hypnogram.csv"));

  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir2);
}
