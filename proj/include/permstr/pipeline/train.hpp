// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "permstr/optim/optim.hpp"
#include "permstr/pipeline/dataset.hpp"
#include "permstr/pipeline/sequence_model.hpp"

namespace permstr::pipeline {

struct TrainConfig {
  std::string preset = "tiny64";
  int charset_size = 36;
  int k = 6;
  int batch_size = 32;
  int total_steps = 3000;
  double max_lr = 1e-3;
  double warmup_frac = 0.3;
  double swa_start_frac = 0.75;
  // Snapshot cadence once SWA is active; the final step is always included.
  int swa_every = 25;
  // Constant SWA learning rate as a fraction of max_lr.
  double swa_lr_frac = 0.05;
  std::uint64_t seed = 0;
  int val_every = 200;
  // Validation samples decoded at each log line (0: whole set).
  int val_samples = 128;

  void validate() const;
  // ceil(swa_start_frac · total_steps).
  int swa_start_step() const;
};

// Optimizer, schedule and random streams; the model lives outside so tests
// can wrap it.
struct TrainState {
  optim::AdamState adam;
  optim::OneCycleSchedule schedule;
  optim::SwaState swa;
  num::Rng order_rng;
  num::Rng perm_rng;
  num::Rng dropout_rng;
  std::uint64_t step = 0;
  std::vector<std::size_t> order;
  std::size_t cursor = 0;

  TrainState(const TrainConfig& cfg, std::size_t dataset_size);
};

double lr_for_step(const TrainConfig& cfg, const TrainState& state, std::uint64_t step);

// Next batch of sample indices; reshuffles at each epoch boundary.
std::vector<std::size_t> next_batch(TrainState& state, std::size_t batch_size);

// One optimization step: encode once, decode the K permutation masks,
// backpropagate and apply Adam. Returns the loss.
double train_step(SequenceModel& model, std::span<const optim::Parameter> params, const TrainConfig& cfg,
                  TrainState& state, const Dataset& data, std::span<const std::size_t> batch);

struct LogRow {
  std::uint64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double val_word_accuracy = -1.0;  // negative when no validation set
};

struct TrainResult {
  model::ModelParams params;  // SWA average when SWA ran, else the last weights
  std::vector<LogRow> log;
  std::uint64_t swa_snapshots = 0;
};

// Writes `step lr loss val_word_acc` lines to `log` when given.
TrainResult train_loop(const TrainConfig& cfg, const Dataset& train, const Dataset* val, std::ostream* log);

}  // namespace permstr::pipeline
