#ifndef GABORSCOPE_TRAINER_HPP
#define GABORSCOPE_TRAINER_HPP

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaborscope/checkpoint.hpp"
#include "gaborscope/dataset.hpp"
#include "gaborscope/network.hpp"
#include "gaborscope/rng.hpp"
#include "gaborscope/stages.hpp"

namespace gaborscope {

// Hyperparameters shared by both training phases: stage-balanced minibatches
// of 16, Adam starting at 6.25e-4 and halved every 5000 iterations,
// validation every 1000 iterations with best-kappa checkpoint selection.
struct TrainConfig {
  int minibatch_size = 16;
  double initial_lr = 0.000625;
  int lr_decay_every = 5000;
  double lr_decay_factor = 0.5;
  int validate_every = 1000;
  int max_iterations = 100000;
  int patience = 20;  // validation points without a new best before stopping
  std::uint64_t seed = 0;
  FrontEnd front_end = FrontEnd::Gabor;
  // Stages the sampler draws from. Defaults to all five; restrict it for
  // datasets that by construction contain fewer stages. A listed stage with
  // an empty epoch pool is an error, never silently renormalized away.
  std::vector<StageLabel> active_stages{kAllStages.begin(), kAllStages.end()};

  void validate() const;  // throws std::invalid_argument on bad values
};

// Accepts a JSON object or key=value lines (# comments allowed). Unknown
// keys are errors so config typos fail loudly.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);
std::string train_config_to_json(const TrainConfig& cfg);

struct TrainLogRow {
  int iteration = 0;  // completed iterations at this validation point
  double train_loss = 0.0;
  double val_loss = 0.0;
  double train_kappa = 0.0;
  double val_kappa = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  std::string to_csv() const;
};

// Step-decay schedule: initial_lr * factor^(iteration / decay_every).
double lr_at(const TrainConfig& cfg, int iteration);

// Training epoch refs grouped by stage, preserving the input order within
// each stage.
using StagePools = std::array<std::vector<EpochRef>, kNumStages>;
StagePools build_stage_pools(const EpochStore& store, const std::vector<EpochRef>& refs);

// Each batch slot independently draws a stage uniformly from active_stages,
// then an epoch uniformly from that stage's pool.
std::vector<EpochRef> sample_minibatch(const StagePools& pools,
                                       const std::vector<StageLabel>& active_stages, int size,
                                       CounterRng& rng);

struct TrainResult {
  NamedTensorMap checkpoint;  // snapshot taken at the best validation kappa
  TrainLog log;
  double best_val_kappa = 0.0;
  int best_iteration = 0;
  int stop_iteration = 0;
};

// Phase one: the epoch classifier, trained on raw 30 s epochs.
TrainResult train_single(const TrainConfig& cfg, const EpochStore& store,
                         const DatasetSplit& split);

// Phase two: the context classifier. Single-epoch parameters come from the
// given checkpoint and stay frozen; its probability outputs over the train
// and validation recordings are computed once up front and training runs on
// windows of those. The returned checkpoint carries both models.
TrainResult train_multi(const TrainConfig& cfg, const EpochStore& store,
                        const DatasetSplit& split, const NamedTensorMap& single_checkpoint);

}  // namespace gaborscope

#endif
