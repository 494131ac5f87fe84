// SPDX-License-Identifier: Apache-2.0
#include "permstr/optim/optim.hpp"

#include <cmath>
#include <numbers>

namespace permstr::optim {

void adam_step(std::span<const Parameter> params, AdamState& state, double lr) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) {
      throw ContractError("adam_step: parameter '" + p.name + "' has no gradient");
    }
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(num::Tensor::zeros(p.tensor.shape(), p.tensor.dtype()));
      state.v.push_back(num::Tensor::zeros(p.tensor.shape(), p.tensor.dtype()));
    }
  }
  if (state.m.size() != params.size()) {
    throw ContractError("adam_step: parameter count changed between steps");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    num::Tensor param = params[i].tensor;
    num::dispatch(param.dtype(), [&]<typename T>() {
      auto w = param.data<T>();
      auto g = param.grad<T>();
      auto m = state.m[i].data<T>();
      auto v = state.v[i].data<T>();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = g[j];
        const double mj = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
        const double vj = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double update = (mj / correction1) / (std::sqrt(vj / correction2) + state.eps);
        w[j] = static_cast<T>(w[j] - lr * update);
      }
    });
  }
}

void OneCycleSchedule::validate() const {
  if (total_steps == 0 || !(warmup_frac > 0.0 && warmup_frac < 1.0) || !(div_factor > 1.0) ||
      !(final_div_factor > 1.0) || !(max_lr > 0.0)) {
    throw ConfigError("OneCycleSchedule: need total_steps > 0, warmup_frac in (0,1), "
                      "div factors > 1 and max_lr > 0");
  }
}

namespace {

double cosine(double from, double to, double progress) {
  return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace

double lr_at(const OneCycleSchedule& sched, std::uint64_t step) {
  sched.validate();
  if (step > sched.total_steps) {
    throw IndexError("lr_at: step " + std::to_string(step) + " beyond total_steps " +
                     std::to_string(sched.total_steps));
  }
  const double initial = sched.max_lr / sched.div_factor;
  const double final_lr = initial / sched.final_div_factor;
  const double peak = sched.warmup_frac * static_cast<double>(sched.total_steps);
  const double s = static_cast<double>(step);
  if (s <= peak) {
    return cosine(initial, sched.max_lr, s / peak);
  }
  return cosine(sched.max_lr, final_lr,
                (s - peak) / (static_cast<double>(sched.total_steps) - peak));
}

void swa_update(SwaState& state, std::span<const Parameter> params) {
  if (state.count == 0) {
    state.averaged.clear();
    state.shapes.clear();
    for (const auto& p : params) {
      state.averaged.push_back(p.tensor.to_vector());
      state.shapes.push_back(p.tensor.shape());
    }
    state.count = 1;
    return;
  }
  if (params.size() != state.averaged.size()) {
    throw ContractError("swa_update: parameter count changed between snapshots");
  }
  state.count += 1;
  const double weight = 1.0 / static_cast<double>(state.count);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].tensor.shape() != state.shapes[i]) {
      throw ContractError("swa_update: parameter '" + params[i].name + "' changed shape");
    }
    auto& avg = state.averaged[i];
    const auto current = params[i].tensor.to_vector();
    for (std::size_t j = 0; j < avg.size(); ++j) {
      avg[j] += (current[j] - avg[j]) * weight;
    }
  }
}

std::vector<num::Tensor> swa_finalize(const SwaState& state, std::span<const Parameter> params) {
  if (state.count == 0) {
    throw ContractError("swa_finalize: no snapshots have been averaged");
  }
  if (params.size() != state.averaged.size()) {
    throw ContractError("swa_finalize: parameter count does not match the averaged snapshot");
  }
  std::vector<num::Tensor> out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back(num::Tensor::from_values(state.shapes[i], state.averaged[i],
                                           params[i].tensor.dtype()));
  }
  return out;
}

std::optional<std::vector<num::Tensor>> swa_update_and_finalize(SwaState& state,
                                                                std::span<const Parameter> params,
                                                                bool finalize) {
  if (finalize) {
    return swa_finalize(state, params);
  }
  swa_update(state, params);
  return std::nullopt;
}

}  // namespace permstr::optim
