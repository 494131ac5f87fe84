// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "permstr/numerics/tensor.hpp"

namespace permstr::num {

struct GradCheckOptions {
  double step = 1e-5;
  // 0 checks every coordinate; otherwise at most this many coordinates per
  // parameter, picked uniformly with `seed`.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t param_index = 0;
  std::size_t coord = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coords_checked = 0;
};

// Compares tape gradients of the scalar program `f` with central differences
// over `params` (f64 only). Error per coordinate is |a-n| / max(|a|, |n|, 1e-8).
GradCheckReport grad_check_report(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                  const GradCheckOptions& options);

double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params, double step);

}  // namespace permstr::num
