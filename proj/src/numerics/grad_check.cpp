// SPDX-License-Identifier: Apache-2.0
#include "permstr/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "permstr/numerics/tape.hpp"

namespace permstr::num {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  NoGradScope no_grad;
  const double value = f().item();
  if (!std::isfinite(value)) {
    throw NumericalError("grad_check: program is not finite at a perturbed point");
  }
  return value;
}

}  // namespace

GradCheckReport grad_check_report(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                  const GradCheckOptions& options) {
  for (const auto& p : params) {
    if (p.dtype() != DType::f64) {
      throw ContractError("grad_check requires f64 parameters");
    }
  }
  std::vector<std::vector<double>> analytic;
  {
    for (auto& p : params) {
      p.set_requires_grad(true);
      p.zero_grad();
    }
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f();
    if (loss.numel() != 1) {
      throw ContractError("grad_check: program must be scalar-valued");
    }
    tape.backward(loss);
    for (const auto& p : params) {
      analytic.push_back(p.grad_vector());
    }
  }

  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  const double h = options.step;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    std::vector<std::size_t> coords(p.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_param > 0 && coords.size() > options.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    auto values = p.data<double>();
    for (std::size_t c : coords) {
      const double saved = values[c];
      values[c] = saved + h;
      const double up = evaluate(f);
      values[c] = saved - h;
      const double down = evaluate(f);
      values[c] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[pi][c];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      ++report.coords_checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.param_index = pi;
        report.coord = c;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params, double step) {
  GradCheckOptions options;
  options.step = step;
  return grad_check_report(f, std::move(params), options).max_rel_error;
}

}  // namespace permstr::num
