#ifndef GABORSCOPE_DATASET_HPP
#define GABORSCOPE_DATASET_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gaborscope/edf.hpp"
#include "gaborscope/stages.hpp"

namespace gaborscope {

constexpr int kEpochSamples = 3000;  // 30 s at 100 Hz
constexpr double kEpochSeconds = 30.0;
constexpr double kTargetRateHz = 100.0;

struct LabeledEpoch {
  std::vector<float> eeg;  // 3000 samples
  std::vector<float> eog;  // 3000 samples
  StageLabel label = StageLabel::Wake;
  int index = 0;  // epoch ordinal within the recording before exclusions
};

struct RecordingEpochs {
  std::string id;
  std::string subject;
  int night = 1;
  std::vector<LabeledEpoch> epochs;  // excluded epochs already removed

  std::array<long, kNumStages> stage_counts() const;
};

// Cuts consecutive 3000-sample windows from the named channels, attaching one
// stage per window. Excluded epochs are skipped; a trailing stretch of signal
// shorter than an epoch is dropped. Labels that extend past the signal raise
// DataError.
RecordingEpochs segment_epochs(const Recording& rec, const Hypnogram& hypnogram,
                               const std::string& eeg_channel, const std::string& eog_channel);

struct EpochRef {
  int recording = 0;  // index into EpochStore::recordings
  int epoch = 0;      // index into that recording's epochs vector
  bool operator==(const EpochRef&) const = default;
};

// On-disk corpus of segmented recordings: one binary file per recording plus
// an index.json with subject/night metadata and stage counts.
class EpochStore {
 public:
  std::vector<RecordingEpochs> recordings;

  const LabeledEpoch& get(EpochRef r) const {
    return recordings[static_cast<std::size_t>(r.recording)]
        .epochs[static_cast<std::size_t>(r.epoch)];
  }
  long total_epochs() const;

  void save(const std::string& dir) const;
  static EpochStore load(const std::string& dir);
};

enum class SplitStrategy { NightHoldout, SubjectHoldout, RecordHoldout, LeaveOneOut };

std::string split_strategy_name(SplitStrategy s);
SplitStrategy split_strategy_from_name(const std::string& name);

struct SplitSpec {
  SplitStrategy strategy = SplitStrategy::RecordHoldout;
  int fold = 0;
  int k = 5;  // fold count for the k-fold strategies
  std::uint64_t seed = 0;
};

struct DatasetSplit {
  SplitSpec spec;
  std::vector<int> train_recordings;
  std::vector<int> validation_recordings;
  std::vector<int> test_recordings;
  std::vector<EpochRef> train;
  std::vector<EpochRef> validation;
  std::vector<EpochRef> test;
};

// Partitions recordings into train/validation/test and expands each side into
// epoch references.
//
//   NightHoldout    subjects with exactly two nights are shuffled by seed and
//                   their nights dealt to folds (subject s: first night to
//                   fold s mod k, second to fold (s+1) mod k); fold `fold` is
//                   the test set, the other folds train, and recordings of
//                   subjects without exactly two nights form the validation
//                   set. At most one night per subject lands in test.
//   SubjectHoldout  same cohort, but both nights of a subject go to the
//                   subject's fold, so no subject spans two sets.
//   RecordHoldout   seeded shuffle of all recordings; 10% (at least one) to
//                   test, three (one on small cohorts) to validation.
//   LeaveOneOut     recording `fold` is the test set; one seeded pick from
//                   the rest is validation.
//
// Raises DataError when fold is out of range or the cohort is too small.
DatasetSplit build_split(const EpochStore& store, const SplitSpec& spec);

struct EpochCensus {
  std::array<long, kNumStages> train{};
  std::array<long, kNumStages> validation{};
  std::array<long, kNumStages> test{};
};

EpochCensus epoch_census(const EpochStore& store, const DatasetSplit& split);

std::string split_to_json(const EpochStore& store, const DatasetSplit& split);
std::string census_to_json(const EpochCensus& census);

// Indices of the epochs feeding one classifier decision: a window of
// 2*half+1 consecutive retained epochs centered on `center`, clamped at
// recording edges so the first and last epochs repeat.
std::vector<int> epoch_window(int center, int epoch_count, int half);

}  // namespace gaborscope

#endif
