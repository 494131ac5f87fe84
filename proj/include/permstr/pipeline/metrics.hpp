// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>

namespace permstr::pipeline {

struct Metrics {
  double word_accuracy = 0.0;
  double one_minus_ned = 0.0;
};

std::size_t levenshtein(std::string_view a, std::string_view b);

// Exact-match rate and mean of 1 - edit/max(len), with 0/0 counted as a
// perfect match.
Metrics compute_metrics(std::span<const std::string> preds, std::span<const std::string> gts);

}  // namespace permstr::pipeline
