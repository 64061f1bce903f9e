#include "gaborscope/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"

#include "gaborscope/rng.hpp"

namespace gaborscope {

namespace fs = std::filesystem;
using nlohmann::json;

std::array<long, kNumStages> RecordingEpochs::stage_counts() const {
  std::array<long, kNumStages> counts{};
  for (const auto& e : epochs) counts[static_cast<std::size_t>(e.label)]++;
  return counts;
}

RecordingEpochs segment_epochs(const Recording& rec, const Hypnogram& hypnogram,
                               const std::string& eeg_channel, const std::string& eog_channel) {
  const Channel* eeg = rec.find_channel(eeg_channel);
  const Channel* eog = rec.find_channel(eog_channel);
  if (!eeg) throw DataError("channel \"" + eeg_channel + "\" not found in " + rec.id);
  if (!eog) throw DataError("channel \"" + eog_channel + "\" not found in " + rec.id);
  for (const Channel* c : {eeg, eog})
    if (c->sample_rate_hz != kTargetRateHz)
      throw DataError("channel \"" + c->name + "\" in " + rec.id + " is at " +
                      std::to_string(c->sample_rate_hz) + " Hz, expected 100 Hz");

  const std::size_t usable = std::min(eeg->samples.size(), eog->samples.size());
  const std::size_t full_epochs = usable / kEpochSamples;
  if (hypnogram.epochs.size() > full_epochs)
    throw DataError(rec.id + " has labels for " + std::to_string(hypnogram.epochs.size()) +
                    " epochs but signal for only " + std::to_string(full_epochs));

  RecordingEpochs out;
  out.id = rec.id;
  out.subject = rec.subject;
  out.night = rec.night;
  for (std::size_t e = 0; e < hypnogram.epochs.size(); ++e) {
    if (!hypnogram.epochs[e]) continue;
    LabeledEpoch ep;
    ep.label = *hypnogram.epochs[e];
    ep.index = static_cast<int>(e);
    ep.eeg.resize(kEpochSamples);
    ep.eog.resize(kEpochSamples);
    const std::size_t base = e * kEpochSamples;
    for (std::size_t s = 0; s < kEpochSamples; ++s) {
      ep.eeg[s] = static_cast<float>(eeg->samples[base + s]);
      ep.eog[s] = static_cast<float>(eog->samples[base + s]);
    }
    out.epochs.push_back(std::move(ep));
  }
  return out;
}

long EpochStore::total_epochs() const {
  long n = 0;
  for (const auto& r : recordings) n += static_cast<long>(r.epochs.size());
  return n;
}

namespace {

constexpr char kEpochMagic[4] = {'G', 'S', 'E', 'P'};
constexpr std::uint32_t kEpochVersion = 1;

void put_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  if (!f.read(reinterpret_cast<char*>(b), 4)) throw DataError("truncated epoch file " + path);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ofstream& f, const std::vector<float>& v) {
  static_assert(sizeof(float) == 4);
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(float)));
}

void get_f32(std::ifstream& f, std::vector<float>* v, const std::string& path) {
  if (!f.read(reinterpret_cast<char*>(v->data()),
              static_cast<std::streamsize>(v->size() * sizeof(float))))
    throw DataError("truncated epoch file " + path);
}

}  // namespace

void EpochStore::save(const std::string& dir) const {
  fs::create_directories(dir);
  json index;
  index["version"] = kEpochVersion;
  index["sample_rate_hz"] = kTargetRateHz;
  index["recordings"] = json::array();
  for (const auto& r : recordings) {
    const std::string file = r.id + ".epochs";
    std::ofstream f(fs::path(dir) / file, std::ios::binary);
    if (!f) throw DataError("cannot write " + (fs::path(dir) / file).string());
    f.write(kEpochMagic, 4);
    put_u32(f, kEpochVersion);
    put_u32(f, static_cast<std::uint32_t>(r.epochs.size()));
    put_u32(f, 2);
    put_u32(f, kEpochSamples);
    for (const auto& e : r.epochs) {
      put_u32(f, static_cast<std::uint32_t>(e.index));
      const unsigned char label = static_cast<unsigned char>(e.label);
      f.write(reinterpret_cast<const char*>(&label), 1);
      put_f32(f, e.eeg);
      put_f32(f, e.eog);
    }
    const auto counts = r.stage_counts();
    json jc;
    for (std::size_t s = 0; s < kNumStages; ++s)
      jc[stage_name(static_cast<StageLabel>(s))] = counts[s];
    index["recordings"].push_back({{"id", r.id},
                                   {"subject", r.subject},
                                   {"night", r.night},
                                   {"file", file},
                                   {"epochs", r.epochs.size()},
                                   {"stage_counts", jc}});
  }
  std::ofstream jf(fs::path(dir) / "index.json");
  jf << index.dump(2) << "\n";
}

EpochStore EpochStore::load(const std::string& dir) {
  std::ifstream jf(fs::path(dir) / "index.json");
  if (!jf) throw DataError("cannot open " + (fs::path(dir) / "index.json").string());
  json index;
  try {
    jf >> index;
  } catch (const json::exception& e) {
    throw DataError("bad index.json in " + dir + ": " + e.what());
  }

  EpochStore store;
  for (const auto& jr : index.at("recordings")) {
    RecordingEpochs r;
    r.id = jr.at("id").get<std::string>();
    r.subject = jr.at("subject").get<std::string>();
    r.night = jr.at("night").get<int>();
    const std::string path = (fs::path(dir) / jr.at("file").get<std::string>()).string();
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path);
    char magic[4];
    if (!f.read(magic, 4) || std::string(magic, 4) != std::string(kEpochMagic, 4))
      throw DataError("bad magic in " + path);
    if (get_u32(f, path) != kEpochVersion) throw DataError("unsupported version in " + path);
    const std::uint32_t n_epochs = get_u32(f, path);
    if (get_u32(f, path) != 2) throw DataError("unexpected channel count in " + path);
    if (get_u32(f, path) != kEpochSamples)
      throw DataError("unexpected samples per epoch in " + path);
    r.epochs.resize(n_epochs);
    for (auto& e : r.epochs) {
      e.index = static_cast<int>(get_u32(f, path));
      unsigned char label;
      if (!f.read(reinterpret_cast<char*>(&label), 1)) throw DataError("truncated " + path);
      if (label >= kNumStages) throw DataError("bad stage byte in " + path);
      e.label = static_cast<StageLabel>(label);
      e.eeg.resize(kEpochSamples);
      e.eog.resize(kEpochSamples);
      get_f32(f, &e.eeg, path);
      get_f32(f, &e.eog, path);
    }
    store.recordings.push_back(std::move(r));
  }
  return store;
}

std::string split_strategy_name(SplitStrategy s) {
  switch (s) {
    case SplitStrategy::NightHoldout: return "night-holdout";
    case SplitStrategy::SubjectHoldout: return "subject-holdout";
    case SplitStrategy::RecordHoldout: return "record-holdout";
    case SplitStrategy::LeaveOneOut: return "leave-one-out";
  }
  return "unknown";
}

SplitStrategy split_strategy_from_name(const std::string& name) {
  if (name == "night-holdout") return SplitStrategy::NightHoldout;
  if (name == "subject-holdout") return SplitStrategy::SubjectHoldout;
  if (name == "record-holdout") return SplitStrategy::RecordHoldout;
  if (name == "leave-one-out") return SplitStrategy::LeaveOneOut;
  throw DataError("unknown split strategy \"" + name + "\"");
}

namespace {

template <typename T>
void seeded_shuffle(std::vector<T>* v, std::uint64_t seed) {
  CounterRng rng(CounterRng::derive(seed, 0x5b17));
  for (std::size_t i = v->size(); i > 1; --i)
    std::swap((*v)[i - 1], (*v)[rng.uniform_index(i)]);
}

void expand_epochs(const EpochStore& store, const std::vector<int>& recs,
                   std::vector<EpochRef>* out) {
  for (int r : recs)
    for (std::size_t e = 0; e < store.recordings[static_cast<std::size_t>(r)].epochs.size(); ++e)
      out->push_back({r, static_cast<int>(e)});
}

// Subjects that contributed exactly two nights, each with its recordings
// ordered by night, plus everyone else's recordings in one pile.
struct Cohort {
  std::vector<std::array<int, 2>> two_night;  // [first night, second night]
  std::vector<int> leftover;
};

Cohort group_by_subject(const EpochStore& store) {
  std::map<std::string, std::vector<int>> by_subject;
  for (std::size_t i = 0; i < store.recordings.size(); ++i)
    by_subject[store.recordings[i].subject].push_back(static_cast<int>(i));
  Cohort c;
  for (auto& [subject, recs] : by_subject) {
    std::sort(recs.begin(), recs.end(), [&](int a, int b) {
      return store.recordings[static_cast<std::size_t>(a)].night <
             store.recordings[static_cast<std::size_t>(b)].night;
    });
    if (recs.size() == 2)
      c.two_night.push_back({recs[0], recs[1]});
    else
      c.leftover.insert(c.leftover.end(), recs.begin(), recs.end());
  }
  return c;
}

}  // namespace

DatasetSplit build_split(const EpochStore& store, const SplitSpec& spec) {
  DatasetSplit split;
  split.spec = spec;
  const int n = static_cast<int>(store.recordings.size());

  switch (spec.strategy) {
    case SplitStrategy::NightHoldout:
    case SplitStrategy::SubjectHoldout: {
      if (spec.k < 2) throw DataError("fold count must be at least 2");
      if (spec.fold < 0 || spec.fold >= spec.k)
        throw DataError("fold " + std::to_string(spec.fold) + " out of range for k=" +
                        std::to_string(spec.k));
      Cohort cohort = group_by_subject(store);
      if (static_cast<int>(cohort.two_night.size()) < spec.k)
        throw DataError("need at least " + std::to_string(spec.k) +
                        " subjects with two nights, have " +
                        std::to_string(cohort.two_night.size()));
      seeded_shuffle(&cohort.two_night, spec.seed);
      for (std::size_t s = 0; s < cohort.two_night.size(); ++s) {
        const auto& nights = cohort.two_night[s];
        if (spec.strategy == SplitStrategy::NightHoldout) {
          const int f0 = static_cast<int>(s) % spec.k;
          const int f1 = static_cast<int>(s + 1) % spec.k;
          (f0 == spec.fold ? split.test_recordings : split.train_recordings).push_back(nights[0]);
          (f1 == spec.fold ? split.test_recordings : split.train_recordings).push_back(nights[1]);
        } else {
          auto& dest = (static_cast<int>(s) % spec.k == spec.fold) ? split.test_recordings
                                                                   : split.train_recordings;
          dest.push_back(nights[0]);
          dest.push_back(nights[1]);
        }
      }
      split.validation_recordings = cohort.leftover;
      break;
    }
    case SplitStrategy::RecordHoldout: {
      if (spec.fold != 0) throw DataError("record-holdout has a single fold");
      if (n < 5) throw DataError("record-holdout needs at least 5 recordings, have " +
                                 std::to_string(n));
      std::vector<int> order(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
      seeded_shuffle(&order, spec.seed);
      const int n_test = std::max(1, static_cast<int>(std::lround(0.1 * n)));
      const int n_val = n >= 20 ? 3 : 1;
      for (int i = 0; i < n; ++i) {
        if (i < n_test)
          split.test_recordings.push_back(order[static_cast<std::size_t>(i)]);
        else if (i < n_test + n_val)
          split.validation_recordings.push_back(order[static_cast<std::size_t>(i)]);
        else
          split.train_recordings.push_back(order[static_cast<std::size_t>(i)]);
      }
      break;
    }
    case SplitStrategy::LeaveOneOut: {
      if (n < 3) throw DataError("leave-one-out needs at least 3 recordings, have " +
                                 std::to_string(n));
      if (spec.fold < 0 || spec.fold >= n)
        throw DataError("fold " + std::to_string(spec.fold) + " out of range for " +
                        std::to_string(n) + " recordings");
      split.test_recordings.push_back(spec.fold);
      std::vector<int> rest;
      for (int i = 0; i < n; ++i)
        if (i != spec.fold) rest.push_back(i);
      CounterRng rng(CounterRng::derive(spec.seed, 0x100));
      const std::size_t val_pick = rng.uniform_index(rest.size());
      for (std::size_t i = 0; i < rest.size(); ++i)
        (i == val_pick ? split.validation_recordings : split.train_recordings).push_back(rest[i]);
      break;
    }
  }

  for (auto* v : {&split.train_recordings, &split.validation_recordings, &split.test_recordings})
    std::sort(v->begin(), v->end());
  expand_epochs(store, split.train_recordings, &split.train);
  expand_epochs(store, split.validation_recordings, &split.validation);
  expand_epochs(store, split.test_recordings, &split.test);
  return split;
}

EpochCensus epoch_census(const EpochStore& store, const DatasetSplit& split) {
  EpochCensus c;
  auto tally = [&](const std::vector<EpochRef>& refs, std::array<long, kNumStages>* counts) {
    for (const auto& r : refs) (*counts)[static_cast<std::size_t>(store.get(r).label)]++;
  };
  tally(split.train, &c.train);
  tally(split.validation, &c.validation);
  tally(split.test, &c.test);
  return c;
}

namespace {

json stage_counts_json(const std::array<long, kNumStages>& counts) {
  json j;
  long total = 0;
  for (std::size_t s = 0; s < kNumStages; ++s) {
    j[stage_name(static_cast<StageLabel>(s))] = counts[s];
    total += counts[s];
  }
  j["total"] = total;
  return j;
}

}  // namespace

std::string split_to_json(const EpochStore& store, const DatasetSplit& split) {
  json j;
  j["strategy"] = split_strategy_name(split.spec.strategy);
  j["fold"] = split.spec.fold;
  j["k"] = split.spec.k;
  j["seed"] = split.spec.seed;
  auto ids = [&](const std::vector<int>& recs) {
    json a = json::array();
    for (int r : recs) a.push_back(store.recordings[static_cast<std::size_t>(r)].id);
    return a;
  };
  j["train_recordings"] = ids(split.train_recordings);
  j["validation_recordings"] = ids(split.validation_recordings);
  j["test_recordings"] = ids(split.test_recordings);
  j["epochs"] = {{"train", split.train.size()},
                 {"validation", split.validation.size()},
                 {"test", split.test.size()}};
  return j.dump(2) + "\n";
}

std::string census_to_json(const EpochCensus& census) {
  json j;
  j["train"] = stage_counts_json(census.train);
  j["validation"] = stage_counts_json(census.validation);
  j["test"] = stage_counts_json(census.test);
  return j.dump(2) + "\n";
}

std::vector<int> epoch_window(int center, int epoch_count, int half) {
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(2 * half + 1));
  for (int o = -half; o <= half; ++o)
    idx.push_back(std::clamp(center + o, 0, epoch_count - 1));
  return idx;
}

}  // namespace gaborscope
