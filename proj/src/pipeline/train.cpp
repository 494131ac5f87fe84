// SPDX-License-Identifier: Apache-2.0
#include "permstr/pipeline/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "permstr/errors.hpp"
#include "permstr/numerics/tape.hpp"
#include "permstr/permute/permute.hpp"
#include "permstr/pipeline/eval.hpp"
#include "permstr/pipeline/loss.hpp"

namespace permstr::pipeline {

namespace {

num::Rng stream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index)};
  return num::Rng(seq);
}

double grad_norm(std::span<const optim::Parameter> params) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : p.tensor.grad_vector()) sq += g * g;
  }
  return std::sqrt(sq);
}

}  // namespace

void TrainConfig::validate() const {
  if (k < 1 || (k != 1 && k % 2 != 0)) {
    throw ConfigError("k must be 1 or even, got " + std::to_string(k));
  }
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (total_steps < 1) throw ConfigError("total_steps must be positive");
  if (!(max_lr > 0.0)) throw ConfigError("max_lr must be positive");
  if (!(swa_start_frac > 0.0 && swa_start_frac < 1.0)) throw ConfigError("swa_start_frac must lie in (0, 1)");
  if (swa_every < 1) throw ConfigError("swa_every must be positive");
  if (!(swa_lr_frac > 0.0)) throw ConfigError("swa_lr_frac must be positive");
  if (val_every < 1) throw ConfigError("val_every must be positive");
  if (val_samples < 0) throw ConfigError("val_samples must be >= 0");
  if (charset_size != 36 && charset_size != 62 && charset_size != 94) {
    throw ConfigError("charset_size must be 36, 62 or 94");
  }
  optim::OneCycleSchedule sched;
  sched.max_lr = max_lr;
  sched.total_steps = static_cast<std::uint64_t>(total_steps);
  sched.warmup_frac = warmup_frac;
  sched.validate();
}

int TrainConfig::swa_start_step() const {
  return static_cast<int>(std::ceil(swa_start_frac * total_steps - 1e-9));
}

TrainState::TrainState(const TrainConfig& cfg, std::size_t dataset_size)
    : order_rng(stream(cfg.seed, 1)), perm_rng(stream(cfg.seed, 2)), dropout_rng(stream(cfg.seed, 3)) {
  schedule.max_lr = cfg.max_lr;
  schedule.total_steps = static_cast<std::uint64_t>(cfg.total_steps);
  schedule.warmup_frac = cfg.warmup_frac;
  swa.swa_lr = cfg.max_lr * cfg.swa_lr_frac;
  order.resize(dataset_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), order_rng);
}

double lr_for_step(const TrainConfig& cfg, const TrainState& state, std::uint64_t step) {
  return step >= static_cast<std::uint64_t>(cfg.swa_start_step()) ? state.swa.swa_lr
                                                                  : optim::lr_at(state.schedule, step);
}

std::vector<std::size_t> next_batch(TrainState& state, std::size_t batch_size) {
  if (state.order.empty()) {
    throw DataError("training set is empty");
  }
  std::vector<std::size_t> batch;
  while (batch.size() < batch_size) {
    if (state.cursor == state.order.size()) {
      std::shuffle(state.order.begin(), state.order.end(), state.order_rng);
      state.cursor = 0;
    }
    batch.push_back(state.order[state.cursor++]);
  }
  return batch;
}

double train_step(SequenceModel& model, std::span<const optim::Parameter> params, const TrainConfig& cfg,
                  TrainState& state, const Dataset& data, std::span<const std::size_t> batch) {
  const model::ModelConfig& mcfg = model.config();
  std::vector<text::EncodedLabel> labels;
  for (std::size_t i : batch) labels.push_back(data.samples.at(i).encoded);
  const num::Tensor images = batch_images(data, batch, mcfg, params.front().tensor.dtype());
  const auto perms = perm::sample_permutations(cfg.k, longest_label(labels), state.perm_rng);

  for (const auto& p : params) {
    num::Tensor t = p.tensor;
    t.zero_grad();
  }
  num::Tape tape;
  num::TapeScope scope(tape);
  const Encoded encoded = model.encode(images);
  const num::Tensor loss = plm_loss(model, encoded, labels, perms, &state.dropout_rng);
  tape.backward(loss);
  const double value = loss.item();
  const double lr = lr_for_step(cfg, state, state.step);
  if (!std::isfinite(value)) {
    std::ostringstream msg;
    msg << "non-finite loss " << value << " at step " << state.step << " (lr " << lr << ", grad norm "
        << grad_norm(params) << ")";
    throw NumericalError(msg.str());
  }
  optim::adam_step(params, state.adam, lr);
  ++state.step;
  return value;
}

TrainResult train_loop(const TrainConfig& cfg, const Dataset& train, const Dataset* val, std::ostream* log) {
  cfg.validate();
  if (train.size() == 0) {
    throw DataError("no training samples left after label filtering");
  }
  const model::ModelConfig mcfg = model::ModelConfig::from_preset(cfg.preset, cfg.charset_size);
  num::Rng init_rng = stream(cfg.seed, 0);
  TransformerModel model(model::init_params(mcfg, init_rng));
  const auto params = model.params().parameters();
  model::set_requires_grad(model.params(), true);
  TrainState state(cfg, train.size());

  TrainResult result;
  const auto swa_start = static_cast<std::uint64_t>(cfg.swa_start_step());
  const auto total = static_cast<std::uint64_t>(cfg.total_steps);
  while (state.step < total) {
    const std::uint64_t step = state.step;
    const double lr = lr_for_step(cfg, state, step);
    const auto batch = next_batch(state, static_cast<std::size_t>(cfg.batch_size));
    const double loss = train_step(model, params, cfg, state, train, batch);
    if (step >= swa_start && ((step - swa_start) % static_cast<std::uint64_t>(cfg.swa_every) == 0 ||
                              step + 1 == total)) {
      optim::swa_update(state.swa, params);
    }
    if ((step + 1) % static_cast<std::uint64_t>(cfg.val_every) == 0 || step + 1 == total) {
      LogRow row{step + 1, lr, loss, -1.0};
      if (val != nullptr && val->size() > 0) {
        DecodeConfig dcfg;
        dcfg.scheme = Scheme::ar;
        dcfg.refine_iters = 0;
        row.val_word_accuracy =
            evaluate(model, *val, dcfg, static_cast<std::size_t>(cfg.val_samples)).word_accuracy;
      }
      result.log.push_back(row);
      if (log != nullptr) {
        *log << row.step << ' ' << row.lr << ' ' << row.loss << ' ';
        if (row.val_word_accuracy < 0) {
          *log << '-';
        } else {
          *log << row.val_word_accuracy;
        }
        *log << '\n' << std::flush;
      }
    }
  }

  model::set_requires_grad(model.params(), false);
  result.swa_snapshots = state.swa.count;
  if (state.swa.count > 0) {
    const auto averaged = optim::swa_finalize(state.swa, params);
    for (std::size_t i = 0; i < params.size(); ++i) {
      num::Tensor dst = params[i].tensor;
      for (std::size_t j = 0; j < dst.numel(); ++j) dst.set_value(j, averaged[i].value(j));
    }
  }
  result.params = model::clone_params(model.params(), num::DType::f32);
  return result;
}

}  // namespace permstr::pipeline
