// Command-line front end: dataset synthesis and ingestion, train/score/eval,
// and the interpretation report. Every command drops a manifest.json into its
// output directory listing the emitted files; nothing here writes timestamps,
// so a rerun with the same seed reproduces outputs byte for byte.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gaborscope/checkpoint.hpp"
#include "gaborscope/dataset.hpp"
#include "gaborscope/edf.hpp"
#include "gaborscope/interpret.hpp"
#include "gaborscope/log.hpp"
#include "gaborscope/manifest.hpp"
#include "gaborscope/metrics.hpp"
#include "gaborscope/network.hpp"
#include "gaborscope/resample.hpp"
#include "gaborscope/synth.hpp"
#include "gaborscope/trainer.hpp"

namespace fs = std::filesystem;
using namespace gaborscope;

namespace {

int fail(int code, const std::string& msg) {
  nlohmann::json j;
  j["error"] = msg;
  j["code"] = code;
  std::fprintf(stderr, "%s\n", j.dump().c_str());
  return code;
}

void write_text(const fs::path& dir, const std::string& name, const std::string& body,
                std::vector<std::string>* outputs) {
  fs::create_directories(dir);
  std::ofstream out(dir / name, std::ios::binary);
  if (!out) throw DataError("cannot write " + (dir / name).string());
  out << body;
  outputs->push_back(name);
}

void finish_manifest(RunManifest* m, const fs::path& out_dir) {
  m->outputs.push_back("manifest.json");
  fs::create_directories(out_dir);
  save_manifest(*m, (out_dir / "manifest.json").string());
}

SplitStrategy strategy_from_flag(const std::string& name) {
  if (name == "night") return SplitStrategy::NightHoldout;
  if (name == "subject") return SplitStrategy::SubjectHoldout;
  if (name == "record") return SplitStrategy::RecordHoldout;
  if (name == "loo") return SplitStrategy::LeaveOneOut;
  throw std::invalid_argument("unknown split strategy \"" + name +
                              "\" (expected night, subject, record, or loo)");
}

// Recording identity from an EDF file name: "<subject>-n<night>" stems carry
// both, anything else becomes a single-night subject of its own.
void stem_identity(const std::string& stem, std::string* subject, int* night) {
  *subject = stem;
  *night = 1;
  const auto dash = stem.rfind("-n");
  if (dash == std::string::npos || dash + 2 >= stem.size()) return;
  const std::string tail = stem.substr(dash + 2);
  if (tail.find_first_not_of("0123456789") != std::string::npos) return;
  *subject = stem.substr(0, dash);
  *night = std::stoi(tail);
}

std::array<std::string, kNumStages> census_header_names() {
  std::array<std::string, kNumStages> names;
  for (int j = 0; j < kNumStages; ++j)
    names[static_cast<std::size_t>(j)] = stage_name(static_cast<StageLabel>(j));
  return names;
}

nlohmann::json counts_json(const std::array<long, kNumStages>& counts) {
  nlohmann::json j = nlohmann::json::object();
  for (int s = 0; s < kNumStages; ++s)
    j[stage_name(static_cast<StageLabel>(s))] = counts[static_cast<std::size_t>(s)];
  return j;
}

struct SynthOptions {
  std::string task = "three-class";
  std::string out_dir;
  std::uint64_t seed = 1;
  int epochs_per_class = 600;
  int recordings = 0;  // 0 = task default
  int epochs_per_recording = 200;
  double corruption = 0.1;
};

int cmd_synth(const SynthOptions& o) {
  EpochStore store;
  nlohmann::json cfg;
  cfg["task"] = o.task;
  cfg["seed"] = o.seed;
  if (o.task == "three-class") {
    ThreeClassSpec spec;
    spec.epochs_per_class = o.epochs_per_class;
    spec.recordings = o.recordings > 0 ? o.recordings : 6;
    spec.seed = o.seed;
    cfg["epochs_per_class"] = spec.epochs_per_class;
    cfg["recordings"] = spec.recordings;
    store = three_class_store(spec);
  } else if (o.task == "markov") {
    MarkovSpec spec;
    spec.recordings = o.recordings > 0 ? o.recordings : 4;
    spec.epochs_per_recording = o.epochs_per_recording;
    spec.corruption = o.corruption;
    spec.seed = o.seed;
    cfg["recordings"] = spec.recordings;
    cfg["epochs_per_recording"] = spec.epochs_per_recording;
    cfg["corruption"] = spec.corruption;
    store = markov_store(spec);
  } else {
    throw std::invalid_argument("unknown synth task \"" + o.task +
                                "\" (expected three-class or markov)");
  }

  RunManifest m;
  m.command = "synth";
  m.config_hash = canonical_json_hash(cfg.dump());
  m.seed = o.seed;
  m.dataset_fingerprint = dataset_fingerprint(store);
  m.outputs = write_synth_dataset(store, o.out_dir);
  finish_manifest(&m, o.out_dir);
  log_info("synth: %zu recordings, %ld epochs -> %s", store.recordings.size(),
           store.total_epochs(), o.out_dir.c_str());
  return 0;
}

struct IngestOptions {
  std::string data_dir;
  std::string out_dir;
  std::string eeg_channel = kSynthEegChannel;
  std::string eog_channel = kSynthEogChannel;
};

int cmd_ingest(const IngestOptions& o) {
  std::vector<fs::path> edfs;
  if (!fs::is_directory(o.data_dir)) throw DataError("not a directory: " + o.data_dir);
  for (const auto& entry : fs::directory_iterator(o.data_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".edf")
      edfs.push_back(entry.path());
  std::sort(edfs.begin(), edfs.end());
  if (edfs.empty()) throw DataError("no .edf files in " + o.data_dir);

  EpochStore store;
  for (const fs::path& path : edfs) {
    Recording rec = parse_edf_file(path.string());
    stem_identity(rec.id, &rec.subject, &rec.night);

    Hypnogram hyp;
    const auto sleep_annotations = filter_sleep_annotations(rec.annotations);
    if (!sleep_annotations.empty()) {
      hyp = map_hypnogram(sleep_annotations);
    } else {
      const fs::path csv = path.parent_path() / (rec.id + ".hypnogram.csv");
      if (!fs::exists(csv))
        throw DataError(rec.id + " has no embedded stage annotations and no " +
                        csv.filename().string());
      hyp = map_hypnogram(parse_hypnogram_csv_file(csv.string()));
    }

    for (const std::string& name : {o.eeg_channel, o.eog_channel}) {
      Channel* c = nullptr;
      for (auto& ch : rec.channels)
        if (ch.name == name) c = &ch;
      if (c == nullptr) throw DataError("channel \"" + name + "\" not found in " + rec.id);
      if (c->sample_rate_hz != kTargetRateHz) {
        c->samples = resample(c->samples, c->sample_rate_hz, kTargetRateHz);
        c->sample_rate_hz = kTargetRateHz;
      }
    }
    store.recordings.push_back(segment_epochs(rec, hyp, o.eeg_channel, o.eog_channel));
    log_debug("ingest: %s -> %zu epochs", rec.id.c_str(),
              store.recordings.back().epochs.size());
  }

  store.save(o.out_dir);
  std::vector<std::string> outputs;
  for (const auto& entry : fs::directory_iterator(o.out_dir))
    if (entry.is_regular_file() && entry.path().filename() != "manifest.json")
      outputs.push_back(entry.path().filename().string());
  std::sort(outputs.begin(), outputs.end());

  const auto names = census_header_names();
  std::string census = "recording,subject,night";
  for (const auto& n : names) census += "," + n;
  census += ",total\n";
  std::array<long, kNumStages> totals{};
  long grand = 0;
  for (const auto& rec : store.recordings) {
    const auto counts = rec.stage_counts();
    census += rec.id + "," + rec.subject + "," + std::to_string(rec.night);
    long row = 0;
    for (int s = 0; s < kNumStages; ++s) {
      census += "," + std::to_string(counts[static_cast<std::size_t>(s)]);
      totals[static_cast<std::size_t>(s)] += counts[static_cast<std::size_t>(s)];
      row += counts[static_cast<std::size_t>(s)];
    }
    census += "," + std::to_string(row) + "\n";
    grand += row;
  }
  census += "TOTAL,,";
  for (int s = 0; s < kNumStages; ++s)
    census += "," + std::to_string(totals[static_cast<std::size_t>(s)]);
  census += "," + std::to_string(grand) + "\n";
  write_text(o.out_dir, "census.csv", census, &outputs);

  RunManifest m;
  m.command = "ingest";
  nlohmann::json cfg;
  cfg["eeg_channel"] = o.eeg_channel;
  cfg["eog_channel"] = o.eog_channel;
  m.config_hash = canonical_json_hash(cfg.dump());
  m.dataset_fingerprint = dataset_fingerprint(store);
  m.outputs = outputs;
  finish_manifest(&m, o.out_dir);
  log_info("ingest: %zu recordings, %ld epochs -> %s", store.recordings.size(),
           store.total_epochs(), o.out_dir.c_str());
  return 0;
}

struct SplitOptions {
  std::string data_dir;
  std::string strategy = "record";
  int fold = 0;
  std::uint64_t seed = 0;
  std::string out_dir;
};

int cmd_split(const SplitOptions& o) {
  const EpochStore store = EpochStore::load(o.data_dir);
  SplitSpec spec;
  spec.strategy = strategy_from_flag(o.strategy);
  spec.fold = o.fold;
  spec.seed = o.seed;
  const DatasetSplit split = build_split(store, spec);
  const EpochCensus census = epoch_census(store, split);

  auto ids = [&store](const std::vector<int>& recs) {
    std::vector<std::string> out;
    for (int r : recs) out.push_back(store.recordings[static_cast<std::size_t>(r)].id);
    return out;
  };

  nlohmann::json j;
  j["strategy"] = split_strategy_name(spec.strategy);
  j["fold"] = spec.fold;
  j["k"] = spec.k;
  j["seed"] = spec.seed;
  j["train_recordings"] = ids(split.train_recordings);
  j["validation_recordings"] = ids(split.validation_recordings);
  j["test_recordings"] = ids(split.test_recordings);
  j["census"] = {{"train", counts_json(census.train)},
                 {"validation", counts_json(census.validation)},
                 {"test", counts_json(census.test)}};

  RunManifest m;
  m.command = "split";
  nlohmann::json cfg;
  cfg["strategy"] = o.strategy;
  cfg["fold"] = o.fold;
  cfg["k"] = spec.k;
  cfg["seed"] = o.seed;
  m.config_hash = canonical_json_hash(cfg.dump());
  m.seed = o.seed;
  m.dataset_fingerprint = dataset_fingerprint(store);
  write_text(o.out_dir, "split.json", j.dump(2) + "\n", &m.outputs);
  finish_manifest(&m, o.out_dir);
  return 0;
}

struct TrainOptions {
  std::string data_dir;
  std::string config;
  std::string out_dir;
  std::string checkpoint;  // train-multi input
  std::string strategy = "record";
  int fold = 0;
  std::int64_t seed = -1;  // -1 = keep the config's seed
  std::string ablation;
};

int cmd_train(const TrainOptions& o, bool multi) {
  const EpochStore store = EpochStore::load(o.data_dir);
  TrainConfig cfg = load_train_config(o.config);
  if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
  if (!o.ablation.empty()) {
    if (o.ablation != "plain-conv")
      throw std::invalid_argument("unknown ablation \"" + o.ablation +
                                  "\" (expected plain-conv)");
    cfg.front_end = FrontEnd::PlainConv200;
  }
  cfg.validate();

  SplitSpec spec;
  spec.strategy = strategy_from_flag(o.strategy);
  spec.fold = o.fold;
  spec.seed = cfg.seed;
  const DatasetSplit split = build_split(store, spec);

  TrainResult res;
  RunManifest m;
  if (multi) {
    const NamedTensorMap single_map = load_checkpoint(o.checkpoint);
    res = train_multi(cfg, store, split, single_map);
    m.command = "train-multi";
    m.checkpoints.push_back(o.checkpoint);
  } else {
    res = train_single(cfg, store, split);
    m.command = "train-single";
  }

  const std::string ckpt_name = multi ? "multi.ckpt" : "single.ckpt";
  fs::create_directories(o.out_dir);
  const fs::path out_dir(o.out_dir);
  save_checkpoint((out_dir / ckpt_name).string(), res.checkpoint);
  m.checkpoints.push_back((out_dir / ckpt_name).string());
  m.outputs.push_back(ckpt_name);
  write_text(out_dir, "train_log.csv", res.log.to_csv(), &m.outputs);

  m.config_hash = canonical_json_hash(train_config_to_json(cfg));
  m.seed = cfg.seed;
  m.dataset_fingerprint = dataset_fingerprint(store);
  finish_manifest(&m, out_dir);
  log_info("%s: best validation kappa %.4f at iteration %d (stopped at %d)",
           m.command.c_str(), res.best_val_kappa, res.best_iteration, res.stop_iteration);
  return 0;
}

struct ScoreOptions {
  std::string data_dir;
  std::string checkpoint;
  std::string out_dir;
  std::string recording;  // empty = all
};

int cmd_score(const ScoreOptions& o) {
  const EpochStore store = EpochStore::load(o.data_dir);
  const NamedTensorMap map = load_checkpoint(o.checkpoint);
  SingleEpochNet<float> single;
  unpack_single(map, &single);
  MultiEpochNet<float> multi;
  const bool has_multi = checkpoint_has_multi(map);
  if (has_multi) unpack_multi(map, &multi);

  RunManifest m;
  m.command = "score";
  m.checkpoints.push_back(o.checkpoint);
  bool found = false;
  for (const auto& rec : store.recordings) {
    if (!o.recording.empty() && rec.id != o.recording) continue;
    found = true;
    std::string body = "epoch_index,single_pred,multi_pred,true_label\n";
    if (has_multi) {
      const auto scored = score_recording(single, multi, rec);
      for (const auto& s : scored) {
        body += std::to_string(s.index);
        body += ',';
        body += stage_name(s.single_pred);
        body += ',';
        body += stage_name(s.multi_pred);
        body += ',';
        body += stage_name(s.truth);
        body += '\n';
      }
    } else {
      for (const auto& e : rec.epochs) {
        body += std::to_string(e.index);
        body += ',';
        body += stage_name(argmax_stage(single_logits_eval(single, e)));
        body += ",,";
        body += stage_name(e.label);
        body += '\n';
      }
    }
    write_text(o.out_dir, rec.id + ".predictions.csv", body, &m.outputs);
  }
  if (!found) throw DataError("recording \"" + o.recording + "\" not found in " + o.data_dir);

  nlohmann::json cfg;
  cfg["recording"] = o.recording;
  m.config_hash = canonical_json_hash(cfg.dump());
  m.dataset_fingerprint = dataset_fingerprint(store);
  finish_manifest(&m, o.out_dir);
  return 0;
}

struct EvalOptions {
  std::string predictions;
  std::string out_dir;
};

int cmd_eval(const EvalOptions& o) {
  std::vector<fs::path> files;
  if (fs::is_directory(o.predictions)) {
    for (const auto& entry : fs::directory_iterator(o.predictions)) {
      const auto name = entry.path().filename().string();
      if (entry.is_regular_file() && name.size() > 16 &&
          name.substr(name.size() - 16) == ".predictions.csv")
        files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no .predictions.csv files in " + o.predictions);
  } else if (fs::is_regular_file(o.predictions)) {
    files.push_back(o.predictions);
  } else {
    throw DataError("predictions path not found: " + o.predictions);
  }

  std::vector<StageLabel> truth, single_pred, multi_pred;
  bool any_multi = false, any_missing_multi = false;
  for (const fs::path& path : files) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "epoch_index,single_pred,multi_pred,true_label")
      throw DataError(path.string() + ": unexpected header");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::array<std::string, 4> cols;
      std::size_t start = 0;
      for (int c = 0; c < 4; ++c) {
        const auto comma = line.find(',', start);
        if (c < 3 && comma == std::string::npos)
          throw DataError(path.string() + ": malformed row \"" + line + "\"");
        cols[static_cast<std::size_t>(c)] =
            c < 3 ? line.substr(start, comma - start) : line.substr(start);
        start = comma + 1;
      }
      auto parse_stage = [&path, &line](const std::string& s) {
        const auto v = stage_from_name(s);
        if (!v) throw DataError(path.string() + ": unknown stage \"" + s + "\" in \"" + line + "\"");
        return *v;
      };
      single_pred.push_back(parse_stage(cols[1]));
      truth.push_back(parse_stage(cols[3]));
      if (cols[2].empty()) {
        any_missing_multi = true;
      } else {
        any_multi = true;
        multi_pred.push_back(parse_stage(cols[2]));
      }
    }
  }
  if (truth.empty()) throw DataError("no prediction rows in " + o.predictions);
  if (any_multi && any_missing_multi)
    throw DataError("mixed rows with and without context predictions in " + o.predictions);

  RunManifest m;
  m.command = "eval";
  const ConfusionMatrix cm_single = confusion(truth, single_pred);
  const MetricReport rep_single = report(cm_single);
  write_text(o.out_dir, "report_single.json", report_to_json(rep_single), &m.outputs);
  write_text(o.out_dir, "confusion_single.csv", confusion_to_csv(cm_single), &m.outputs);
  log_info("eval: single accuracy %.4f kappa %.4f over %zu epochs", rep_single.accuracy,
           rep_single.kappa, truth.size());
  if (any_multi) {
    const ConfusionMatrix cm_multi = confusion(truth, multi_pred);
    const MetricReport rep_multi = report(cm_multi);
    write_text(o.out_dir, "report_multi.json", report_to_json(rep_multi), &m.outputs);
    write_text(o.out_dir, "confusion_multi.csv", confusion_to_csv(cm_multi), &m.outputs);
    write_text(o.out_dir, "agreement.json",
               agreement_to_json(agreement_matrix(single_pred, multi_pred, truth)), &m.outputs);
    log_info("eval: context accuracy %.4f kappa %.4f", rep_multi.accuracy, rep_multi.kappa);
  }
  m.config_hash = canonical_json_hash("{}");
  finish_manifest(&m, o.out_dir);
  return 0;
}

struct InterpretCmdOptions {
  std::string data_dir;
  std::string checkpoint;
  std::string out_dir;
  std::string strategy = "record";
  int fold = 0;
  std::uint64_t seed = 0;
  std::string target = "logit";
  bool predicted_label = false;
  int trace_kernels = 2;
  int trace_epochs = 1;
};

int cmd_interpret(const InterpretCmdOptions& o) {
  const EpochStore store = EpochStore::load(o.data_dir);
  const NamedTensorMap map = load_checkpoint(o.checkpoint);
  SingleEpochNet<float> single;
  unpack_single(map, &single);
  MultiEpochNet<float> multi;
  const bool has_multi = checkpoint_has_multi(map);
  if (has_multi) unpack_multi(map, &multi);

  SplitSpec spec;
  spec.strategy = strategy_from_flag(o.strategy);
  spec.fold = o.fold;
  spec.seed = o.seed;
  const DatasetSplit split = build_split(store, spec);

  InterpretOptions opts;
  if (o.target == "softmax") {
    opts.target = SensitivityTarget::Softmax;
  } else if (o.target != "logit") {
    throw std::invalid_argument("unknown sensitivity target \"" + o.target +
                                "\" (expected logit or softmax)");
  }
  opts.use_predicted_label = o.predicted_label;
  opts.trace_kernels = o.trace_kernels;
  opts.trace_epochs = o.trace_epochs;

  RunManifest m;
  m.command = "interpret";
  m.checkpoints.push_back(o.checkpoint);
  m.outputs = interpretation_report(single, has_multi ? &multi : nullptr, store, split.test,
                                    o.out_dir, opts);
  nlohmann::json cfg;
  cfg["strategy"] = o.strategy;
  cfg["fold"] = o.fold;
  cfg["seed"] = o.seed;
  cfg["target"] = o.target;
  cfg["predicted_label"] = o.predicted_label;
  cfg["trace_kernels"] = o.trace_kernels;
  cfg["trace_epochs"] = o.trace_epochs;
  m.config_hash = canonical_json_hash(cfg.dump());
  m.seed = o.seed;
  m.dataset_fingerprint = dataset_fingerprint(store);
  finish_manifest(&m, o.out_dir);
  return 0;
}

struct ExportOptions {
  std::string checkpoint;
  std::string out_dir;
};

int cmd_export_kernels(const ExportOptions& o) {
  const NamedTensorMap map = load_checkpoint(o.checkpoint);
  SingleEpochNet<float> single;
  unpack_single(map, &single);
  RunManifest m;
  m.command = "export-kernels";
  m.checkpoints.push_back(o.checkpoint);
  m.outputs = export_kernel_files(single, o.out_dir);
  m.config_hash = canonical_json_hash("{}");
  finish_manifest(&m, o.out_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interpretable sleep-stage scoring with a trainable Gabor front end"};
  app.require_subcommand(1);

  SynthOptions synth_opt;
  auto* sc_synth = app.add_subcommand("synth", "Generate a synthetic EDF dataset");
  sc_synth->add_option("--task", synth_opt.task, "three-class or markov");
  sc_synth->add_option("--out-dir", synth_opt.out_dir, "output directory")->required();
  sc_synth->add_option("--seed", synth_opt.seed, "generator seed");
  sc_synth->add_option("--epochs-per-class", synth_opt.epochs_per_class,
                       "three-class epochs per class");
  sc_synth->add_option("--recordings", synth_opt.recordings, "recording count");
  sc_synth->add_option("--epochs-per-recording", synth_opt.epochs_per_recording,
                       "markov epochs per recording");
  sc_synth->add_option("--corruption", synth_opt.corruption,
                       "markov fraction of epochs with a swapped signal");

  IngestOptions ingest_opt;
  auto* sc_ingest = app.add_subcommand("ingest", "Parse an EDF directory into an epoch store");
  sc_ingest->add_option("--data-dir", ingest_opt.data_dir, "directory of .edf files")->required();
  sc_ingest->add_option("--out-dir", ingest_opt.out_dir, "epoch store directory")->required();
  sc_ingest->add_option("--eeg-channel", ingest_opt.eeg_channel, "EEG channel name");
  sc_ingest->add_option("--eog-channel", ingest_opt.eog_channel, "EOG channel name");

  SplitOptions split_opt;
  auto* sc_split = app.add_subcommand("split", "Partition a store into train/validation/test");
  sc_split->add_option("--data-dir", split_opt.data_dir, "epoch store directory")->required();
  sc_split->add_option("--strategy", split_opt.strategy, "night, subject, record, or loo");
  sc_split->add_option("--fold", split_opt.fold, "fold index");
  sc_split->add_option("--seed", split_opt.seed, "shuffle seed");
  sc_split->add_option("--out-dir", split_opt.out_dir, "output directory")->required();

  TrainOptions train_opt;
  auto* sc_train_single = app.add_subcommand("train-single", "Train the epoch classifier");
  auto* sc_train_multi = app.add_subcommand("train-multi", "Train the context classifier");
  for (auto* sc : {sc_train_single, sc_train_multi}) {
    sc->add_option("--data-dir", train_opt.data_dir, "epoch store directory")->required();
    sc->add_option("--config", train_opt.config, "training config file")->required();
    sc->add_option("--out-dir", train_opt.out_dir, "output directory")->required();
    sc->add_option("--strategy", train_opt.strategy, "night, subject, record, or loo");
    sc->add_option("--fold", train_opt.fold, "fold index");
    sc->add_option("--seed", train_opt.seed, "overrides the config seed");
    sc->add_option("--ablation", train_opt.ablation, "plain-conv swaps the Gabor front end");
  }
  sc_train_multi->add_option("--checkpoint", train_opt.checkpoint, "trained single checkpoint")
      ->required();

  ScoreOptions score_opt;
  auto* sc_score = app.add_subcommand("score", "Write per-epoch predictions for recordings");
  sc_score->add_option("--data-dir", score_opt.data_dir, "epoch store directory")->required();
  sc_score->add_option("--checkpoint", score_opt.checkpoint, "trained checkpoint")->required();
  sc_score->add_option("--out-dir", score_opt.out_dir, "output directory")->required();
  sc_score->add_option("--recording", score_opt.recording, "score only this recording id");

  EvalOptions eval_opt;
  auto* sc_eval = app.add_subcommand("eval", "Metrics from prediction files");
  sc_eval->add_option("--predictions", eval_opt.predictions,
                      ".predictions.csv file or directory")->required();
  sc_eval->add_option("--out-dir", eval_opt.out_dir, "output directory")->required();

  InterpretCmdOptions interp_opt;
  auto* sc_interpret = app.add_subcommand("interpret", "Sensitivity/effect report on the test set");
  sc_interpret->add_option("--data-dir", interp_opt.data_dir, "epoch store directory")->required();
  sc_interpret->add_option("--checkpoint", interp_opt.checkpoint, "trained checkpoint")->required();
  sc_interpret->add_option("--out-dir", interp_opt.out_dir, "output directory")->required();
  sc_interpret->add_option("--strategy", interp_opt.strategy, "night, subject, record, or loo");
  sc_interpret->add_option("--fold", interp_opt.fold, "fold index");
  sc_interpret->add_option("--seed", interp_opt.seed, "split seed (match the training run)");
  sc_interpret->add_option("--target", interp_opt.target, "logit or softmax sensitivity");
  sc_interpret->add_flag("--predicted-label", interp_opt.predicted_label,
                         "attribute effects to the predicted stage instead of the true one");
  sc_interpret->add_option("--trace-kernels", interp_opt.trace_kernels,
                           "kernels per traced epoch and stage test");
  sc_interpret->add_option("--trace-epochs", interp_opt.trace_epochs,
                           "test epochs that get full effect traces");

  ExportOptions export_opt;
  auto* sc_export = app.add_subcommand("export-kernels", "First-layer waveforms and spectra");
  sc_export->add_option("--checkpoint", export_opt.checkpoint, "trained checkpoint")->required();
  sc_export->add_option("--out-dir", export_opt.out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    nlohmann::json j;
    j["error"] = std::string(e.what());
    j["code"] = 2;
    std::fprintf(stderr, "%s\n", j.dump().c_str());
    std::fprintf(stderr, "%s", app.help().c_str());
    return 2;
  }

  try {
    if (sc_synth->parsed()) return cmd_synth(synth_opt);
    if (sc_ingest->parsed()) return cmd_ingest(ingest_opt);
    if (sc_split->parsed()) return cmd_split(split_opt);
    if (sc_train_single->parsed()) return cmd_train(train_opt, false);
    if (sc_train_multi->parsed()) return cmd_train(train_opt, true);
    if (sc_score->parsed()) return cmd_score(score_opt);
    if (sc_eval->parsed()) return cmd_eval(eval_opt);
    if (sc_interpret->parsed()) return cmd_interpret(interp_opt);
    if (sc_export->parsed()) return cmd_export_kernels(export_opt);
  } catch (const DivergenceError& e) {
    return fail(4, e.what());
  } catch (const DataError& e) {
    return fail(3, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(2, e.what());
  } catch (const std::exception& e) {
    return fail(3, e.what());
  }
  return fail(2, "no command given");
}
