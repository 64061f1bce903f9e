#include "gaborscope/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <utility>

#include "gaborscope/adam.hpp"
#include "gaborscope/gabor.hpp"
#include "gaborscope/metrics.hpp"
#include "json.hpp"

namespace gaborscope {

namespace {

const std::set<std::string>& int_keys() {
  static const std::set<std::string> keys = {"minibatch_size", "lr_decay_every", "validate_every",
                                            "max_iterations", "patience"};
  return keys;
}

const std::set<std::string>& double_keys() {
  static const std::set<std::string> keys = {"initial_lr", "lr_decay_factor"};
  return keys;
}

void apply_config_key(TrainConfig* cfg, const std::string& key, const nlohmann::json& value) {
  try {
    if (key == "minibatch_size")
      cfg->minibatch_size = value.get<int>();
    else if (key == "lr_decay_every")
      cfg->lr_decay_every = value.get<int>();
    else if (key == "validate_every")
      cfg->validate_every = value.get<int>();
    else if (key == "max_iterations")
      cfg->max_iterations = value.get<int>();
    else if (key == "patience")
      cfg->patience = value.get<int>();
    else if (key == "initial_lr")
      cfg->initial_lr = value.get<double>();
    else if (key == "lr_decay_factor")
      cfg->lr_decay_factor = value.get<double>();
    else if (key == "seed")
      cfg->seed = value.get<std::uint64_t>();
    else if (key == "front_end") {
      try {
        cfg->front_end = front_end_from_name(value.get<std::string>());
      } catch (const DataError& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
      }
    }
    else if (key == "active_stages") {
      cfg->active_stages.clear();
      for (const auto& item : value) {
        auto stage = stage_from_name(item.get<std::string>());
        if (!stage)
          throw std::invalid_argument("config: unknown stage \"" + item.get<std::string>() +
                                      "\" in active_stages");
        cfg->active_stages.push_back(*stage);
      }
    } else {
      throw std::invalid_argument("config: unknown key \"" + key + "\"");
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config: bad value for \"" + key + "\": " + e.what());
  }
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

nlohmann::json config_text_to_json(const std::string& text) {
  const std::string body = trim(text);
  if (!body.empty() && body[0] == '{') {
    try {
      return nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
    }
  }
  nlohmann::json obj = nlohmann::json::object();
  std::istringstream in(body);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected key=value, got \"" + line + "\"");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "front_end") {
        obj[key] = value;
      } else if (key == "active_stages") {
        nlohmann::json arr = nlohmann::json::array();
        std::istringstream items(value);
        std::string item;
        while (std::getline(items, item, ',')) arr.push_back(trim(item));
        obj[key] = arr;
      } else if (key == "seed") {
        obj[key] = static_cast<std::uint64_t>(std::stoull(value));
      } else if (int_keys().count(key)) {
        obj[key] = static_cast<int>(std::stoll(value));
      } else if (double_keys().count(key)) {
        obj[key] = std::stod(value);
      } else {
        throw std::invalid_argument("config: unknown key \"" + key + "\"");
      }
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("config: bad value for \"" + key + "\": " + value);
    }
  }
  return obj;
}

// Numerically stable cross entropy straight from a logit vector, used on the
// evaluation side where no graph is needed.
double ce_from_logits(const std::array<float, kNumStages>& logits, int cls) {
  double mx = logits[0];
  for (int k = 1; k < kNumStages; ++k) mx = std::max(mx, static_cast<double>(logits[k]));
  double sum = 0.0;
  for (int k = 0; k < kNumStages; ++k) sum += std::exp(static_cast<double>(logits[k]) - mx);
  return -(static_cast<double>(logits[cls]) - mx - std::log(sum));
}

struct LoopCallbacks {
  // Forward + backward on one sample with the adjoint seeded 1/minibatch so
  // accumulated gradients average; returns the sample loss and appends the
  // train-mode prediction.
  std::function<double(EpochRef, std::vector<StageLabel>*)> sample_step;
  std::function<void()> zero_grads;
  std::function<void(double lr)> apply_update;
  std::function<std::pair<double, double>()> validate;  // (loss, kappa)
  std::function<void(NamedTensorMap*)> snapshot;
};

TrainResult run_training_loop(const TrainConfig& cfg, const EpochStore& store,
                              const StagePools& pools, const LoopCallbacks& cb) {
  CounterRng batch_rng(CounterRng::derive(cfg.seed, 0x7001));
  TrainResult res;
  res.best_val_kappa = -2.0;  // below any attainable kappa
  double acc_loss = 0.0;
  long acc_batches = 0;
  std::vector<StageLabel> acc_truth, acc_pred;
  int since_best = 0;
  bool stopped = false;

  for (int iter = 0; iter < cfg.max_iterations && !stopped; ++iter) {
    const auto batch = sample_minibatch(pools, cfg.active_stages, cfg.minibatch_size, batch_rng);
    cb.zero_grads();
    double batch_loss = 0.0;
    for (EpochRef r : batch) {
      acc_truth.push_back(store.get(r).label);
      batch_loss += cb.sample_step(r, &acc_pred);
    }
    batch_loss /= cfg.minibatch_size;
    if (!std::isfinite(batch_loss))
      throw DivergenceError(
          "training diverged at iteration " + std::to_string(iter + 1) + " (non-finite loss)",
          iter + 1);
    cb.apply_update(lr_at(cfg, iter));
    acc_loss += batch_loss;
    ++acc_batches;
    res.stop_iteration = iter + 1;

    if ((iter + 1) % cfg.validate_every == 0) {
      const auto [val_loss, val_kappa] = cb.validate();
      TrainLogRow row;
      row.iteration = iter + 1;
      row.train_loss = acc_loss / static_cast<double>(acc_batches);
      row.val_loss = val_loss;
      row.train_kappa = report(confusion(acc_truth, acc_pred)).kappa;
      row.val_kappa = val_kappa;
      res.log.rows.push_back(row);
      acc_loss = 0.0;
      acc_batches = 0;
      acc_truth.clear();
      acc_pred.clear();
      if (val_kappa > res.best_val_kappa) {
        res.best_val_kappa = val_kappa;
        res.best_iteration = iter + 1;
        res.checkpoint = NamedTensorMap{};
        cb.snapshot(&res.checkpoint);
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        stopped = true;
      }
    }
  }

  // A run shorter than one validation interval still needs a log row and a
  // checkpoint to hand back.
  if (res.log.rows.empty()) {
    const auto [val_loss, val_kappa] = cb.validate();
    TrainLogRow row;
    row.iteration = res.stop_iteration;
    row.train_loss = acc_batches > 0 ? acc_loss / static_cast<double>(acc_batches) : 0.0;
    row.val_loss = val_loss;
    row.train_kappa =
        acc_truth.empty() ? 0.0 : report(confusion(acc_truth, acc_pred)).kappa;
    row.val_kappa = val_kappa;
    res.log.rows.push_back(row);
    res.best_val_kappa = val_kappa;
    res.best_iteration = res.stop_iteration;
    cb.snapshot(&res.checkpoint);
  }
  return res;
}

void require_validation(const DatasetSplit& split) {
  if (split.validation.empty())
    throw std::invalid_argument(
        "training requires a non-empty validation set for checkpoint selection; this split has "
        "none");
}

}  // namespace

void TrainConfig::validate() const {
  if (minibatch_size <= 0) throw std::invalid_argument("config: minibatch_size must be positive");
  if (initial_lr <= 0.0) throw std::invalid_argument("config: initial_lr must be positive");
  if (lr_decay_every <= 0) throw std::invalid_argument("config: lr_decay_every must be positive");
  if (lr_decay_factor <= 0.0 || lr_decay_factor >= 1.0)
    throw std::invalid_argument("config: lr_decay_factor must be in (0, 1)");
  if (validate_every <= 0) throw std::invalid_argument("config: validate_every must be positive");
  if (max_iterations <= 0) throw std::invalid_argument("config: max_iterations must be positive");
  if (patience <= 0) throw std::invalid_argument("config: patience must be positive");
  if (active_stages.empty())
    throw std::invalid_argument("config: active_stages must not be empty");
  std::set<StageLabel> seen;
  for (StageLabel s : active_stages)
    if (!seen.insert(s).second)
      throw std::invalid_argument(std::string("config: duplicate stage \"") + stage_name(s) +
                                  "\" in active_stages");
}

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig cfg;
  const nlohmann::json obj = config_text_to_json(text);
  if (!obj.is_object()) throw std::invalid_argument("config: top level must be an object");
  for (const auto& [key, value] : obj.items()) apply_config_key(&cfg, key, value);
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_train_config(buf.str());
}

std::string train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["minibatch_size"] = cfg.minibatch_size;
  j["initial_lr"] = cfg.initial_lr;
  j["lr_decay_every"] = cfg.lr_decay_every;
  j["lr_decay_factor"] = cfg.lr_decay_factor;
  j["validate_every"] = cfg.validate_every;
  j["max_iterations"] = cfg.max_iterations;
  j["patience"] = cfg.patience;
  j["seed"] = cfg.seed;
  j["front_end"] = front_end_name(cfg.front_end);
  nlohmann::json stages = nlohmann::json::array();
  for (StageLabel s : cfg.active_stages) stages.push_back(stage_name(s));
  j["active_stages"] = stages;
  return j.dump(2);
}

std::string TrainLog::to_csv() const {
  std::string out = "iteration,train_loss,val_loss,train_kappa,val_kappa\n";
  char buf[256];
  for (const TrainLogRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f\n", r.iteration, r.train_loss,
                  r.val_loss, r.train_kappa, r.val_kappa);
    out += buf;
  }
  return out;
}

double lr_at(const TrainConfig& cfg, int iteration) {
  return cfg.initial_lr * std::pow(cfg.lr_decay_factor, iteration / cfg.lr_decay_every);
}

StagePools build_stage_pools(const EpochStore& store, const std::vector<EpochRef>& refs) {
  StagePools pools;
  for (EpochRef r : refs) pools[static_cast<std::size_t>(store.get(r).label)].push_back(r);
  return pools;
}

std::vector<EpochRef> sample_minibatch(const StagePools& pools,
                                       const std::vector<StageLabel>& active_stages, int size,
                                       CounterRng& rng) {
  if (active_stages.empty()) throw std::invalid_argument("sampler: no active stages");
  std::vector<EpochRef> batch;
  batch.reserve(static_cast<std::size_t>(size));
  for (int i = 0; i < size; ++i) {
    const StageLabel stage =
        active_stages[rng.uniform_index(active_stages.size())];
    const auto& pool = pools[static_cast<std::size_t>(stage)];
    if (pool.empty())
      throw std::invalid_argument(std::string("sampler: stage ") + stage_name(stage) +
                                  " has no training epochs");
    batch.push_back(pool[rng.uniform_index(pool.size())]);
  }
  return batch;
}

TrainResult train_single(const TrainConfig& cfg, const EpochStore& store,
                         const DatasetSplit& split) {
  cfg.validate();
  require_validation(split);
  SingleEpochNet<float> net(cfg.front_end);
  net.init(cfg.seed);
  std::vector<Param<float>*> params;
  net.visit_params([&params](Param<float>& p) { params.push_back(&p); });
  AdamState<float> adam;
  CounterRng dropout_rng(CounterRng::derive(cfg.seed, 0x7002));
  const StagePools pools = build_stage_pools(store, split.train);
  const float grad_seed = 1.0f / static_cast<float>(cfg.minibatch_size);

  LoopCallbacks cb;
  cb.zero_grads = [&params] {
    for (Param<float>* p : params) p->grad.fill(0.0f);
  };
  cb.sample_step = [&](EpochRef r, std::vector<StageLabel>* preds) {
    const LabeledEpoch& e = store.get(r);
    Graph<float> g;
    auto fwd = net.forward(g, e, RunMode::train(&dropout_rng));
    const int loss = g.softmax_cross_entropy(fwd.logits, static_cast<int>(e.label));
    std::array<float, kNumStages> logits{};
    for (int k = 0; k < kNumStages; ++k) logits[static_cast<std::size_t>(k)] =
        g.value(fwd.logits).data[k];
    preds->push_back(argmax_stage(logits));
    Tensor<float> seed({1});
    seed.data[0] = grad_seed;
    g.backward(loss, seed);
    return static_cast<double>(g.value(loss).data[0]);
  };
  cb.apply_update = [&](double lr) {
    adam.step(params, lr);
    if (net.front_end == FrontEnd::Gabor) {
      project_sigma(net.gl_eeg.sigma.value, net.sigma_min);
      project_sigma(net.gl_eog.sigma.value, net.sigma_min);
    }
  };
  cb.validate = [&]() {
    double total = 0.0;
    std::vector<StageLabel> truth, pred;
    for (EpochRef r : split.validation) {
      const LabeledEpoch& e = store.get(r);
      const auto logits = single_logits_eval(net, e);
      total += ce_from_logits(logits, static_cast<int>(e.label));
      truth.push_back(e.label);
      pred.push_back(argmax_stage(logits));
    }
    const double kappa = report(confusion(truth, pred)).kappa;
    return std::make_pair(total / static_cast<double>(split.validation.size()), kappa);
  };
  cb.snapshot = [&net](NamedTensorMap* m) { pack_single(net, m); };
  return run_training_loop(cfg, store, pools, cb);
}

TrainResult train_multi(const TrainConfig& cfg, const EpochStore& store, const DatasetSplit& split,
                        const NamedTensorMap& single_checkpoint) {
  cfg.validate();
  require_validation(split);
  SingleEpochNet<float> single(cfg.front_end);
  unpack_single(single_checkpoint, &single);
  MultiEpochNet<float> net;
  net.init(cfg.seed);
  std::vector<Param<float>*> params;
  net.visit_params([&params](Param<float>& p) { params.push_back(&p); });
  AdamState<float> adam;
  const StagePools pools = build_stage_pools(store, split.train);
  const float grad_seed = 1.0f / static_cast<float>(cfg.minibatch_size);

  // The frozen model's probability sequences, one pass per recording.
  std::set<int> needed(split.train_recordings.begin(), split.train_recordings.end());
  needed.insert(split.validation_recordings.begin(), split.validation_recordings.end());
  std::map<int, std::vector<std::array<float, kNumStages>>> probs;
  for (int rec : needed) {
    auto& seq = probs[rec];
    for (const LabeledEpoch& e : store.recordings[static_cast<std::size_t>(rec)].epochs)
      seq.push_back(softmax_probs(single_logits_eval(single, e)));
  }

  auto window_logits = [&](EpochRef r, Graph<float>& g) {
    return net.forward(g, probability_window(probs.at(r.recording), r.epoch));
  };

  LoopCallbacks cb;
  cb.zero_grads = [&params] {
    for (Param<float>* p : params) p->grad.fill(0.0f);
  };
  cb.sample_step = [&](EpochRef r, std::vector<StageLabel>* preds) {
    Graph<float> g;
    const int logits_id = window_logits(r, g);
    const int loss = g.softmax_cross_entropy(logits_id, static_cast<int>(store.get(r).label));
    std::array<float, kNumStages> logits{};
    for (int k = 0; k < kNumStages; ++k) logits[static_cast<std::size_t>(k)] =
        g.value(logits_id).data[k];
    preds->push_back(argmax_stage(logits));
    Tensor<float> seed({1});
    seed.data[0] = grad_seed;
    g.backward(loss, seed);
    return static_cast<double>(g.value(loss).data[0]);
  };
  cb.apply_update = [&](double lr) { adam.step(params, lr); };
  cb.validate = [&]() {
    double total = 0.0;
    std::vector<StageLabel> truth, pred;
    for (EpochRef r : split.validation) {
      Graph<float> g;
      const int logits_id = window_logits(r, g);
      std::array<float, kNumStages> logits{};
      for (int k = 0; k < kNumStages; ++k) {
        const float v = g.value(logits_id).data[k];
        if (!std::isfinite(v)) throw DataError("non-finite context logits during validation");
        logits[static_cast<std::size_t>(k)] = v;
      }
      total += ce_from_logits(logits, static_cast<int>(store.get(r).label));
      truth.push_back(store.get(r).label);
      pred.push_back(argmax_stage(logits));
    }
    const double kappa = report(confusion(truth, pred)).kappa;
    return std::make_pair(total / static_cast<double>(split.validation.size()), kappa);
  };
  cb.snapshot = [&](NamedTensorMap* m) {
    pack_single(single, m);
    pack_multi(net, m);
  };
  return run_training_loop(cfg, store, pools, cb);
}

}  // namespace gaborscope
