// SPDX-License-Identifier: Apache-2.0
#include "permstr/pipeline/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

#include "permstr/errors.hpp"

namespace permstr::pipeline {

std::size_t levenshtein(std::string_view a, std::string_view b) {
  std::vector<std::size_t> row(b.size() + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

Metrics compute_metrics(std::span<const std::string> preds, std::span<const std::string> gts) {
  if (preds.size() != gts.size()) {
    throw ContractError("compute_metrics: " + std::to_string(preds.size()) + " predictions for " +
                        std::to_string(gts.size()) + " labels");
  }
  Metrics m;
  if (preds.empty()) {
    return m;
  }
  double correct = 0.0;
  double similarity = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    correct += preds[i] == gts[i] ? 1.0 : 0.0;
    const std::size_t longest = std::max(preds[i].size(), gts[i].size());
    const double ned =
        longest == 0 ? 0.0 : static_cast<double>(levenshtein(preds[i], gts[i])) / static_cast<double>(longest);
    similarity += 1.0 - ned;
  }
  const auto n = static_cast<double>(preds.size());
  m.word_accuracy = correct / n;
  m.one_minus_ned = similarity / n;
  return m;
}

}  // namespace permstr::pipeline
