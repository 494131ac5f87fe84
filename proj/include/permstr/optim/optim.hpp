// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "permstr/numerics/tensor.hpp"

namespace permstr::optim {

struct Parameter {
  std::string name;
  num::Tensor tensor;
};

// Bias-corrected Adam without weight decay. Moment buffers are created on
// the first step and mirror each parameter's shape and dtype.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<num::Tensor> m;
  std::vector<num::Tensor> v;
};

void adam_step(std::span<const Parameter> params, AdamState& state, double lr);

// Cosine warmup from max_lr/div_factor to max_lr over the first
// warmup_frac of the run, then cosine decay to
// max_lr/(div_factor*final_div_factor) at total_steps.
struct OneCycleSchedule {
  double max_lr = 1e-3;
  std::uint64_t total_steps = 1;
  double warmup_frac = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;

  void validate() const;
};

double lr_at(const OneCycleSchedule& sched, std::uint64_t step);

// Running arithmetic mean of parameter snapshots, kept in f64.
struct SwaState {
  std::vector<std::vector<double>> averaged;
  std::vector<num::Shape> shapes;
  std::uint64_t count = 0;
  double swa_lr = 0.0;
};

void swa_update(SwaState& state, std::span<const Parameter> params);

// Averaged snapshot cast to each parameter's dtype, in parameter order.
std::vector<num::Tensor> swa_finalize(const SwaState& state, std::span<const Parameter> params);

std::optional<std::vector<num::Tensor>> swa_update_and_finalize(SwaState& state,
                                                                std::span<const Parameter> params,
                                                                bool finalize);

}  // namespace permstr::optim
