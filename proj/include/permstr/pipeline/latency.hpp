// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "permstr/pipeline/decode.hpp"
#include "permstr/pipeline/sequence_model.hpp"

namespace permstr::pipeline {

// Runs the wrapped model unchanged, then overwrites its logits so greedy
// decoding emits exactly `length` characters followed by [E]. Compute cost
// is that of the real model.
class ForcedLengthModel final : public SequenceModel {
 public:
  ForcedLengthModel(SequenceModel& inner, int length) : inner_(inner), length_(length) {}

  const model::ModelConfig& config() const override { return inner_.config(); }
  Encoded encode(const num::Tensor& images) override { return inner_.encode(images); }
  num::Tensor decode(const Encoded& encoded, std::span<const int> context_ids, std::size_t context_len,
                     std::span<const int> query_positions, std::span<const std::uint8_t> allowed,
                     num::Rng* dropout_rng) override;

 private:
  SequenceModel& inner_;
  int length_;
};

// Decode times exclude the image encoder; total times include it.
struct LatencyRow {
  int length = 0;
  Scheme scheme = Scheme::ar;
  double median_ms = 0.0;
  double mean_ms = 0.0;
  double total_median_ms = 0.0;
};

// Single-image decoding with the scheme's default refinement, timed `reps`
// times per forced length and scheme. Each rep also encodes the image so
// the full inference time is reported alongside.
std::vector<LatencyRow> latency_bench(SequenceModel& model, const num::Tensor& image, std::span<const int> lengths,
                                      int reps);

// Aligned table followed by `latency <length> <scheme> <median> <mean> <total_median>`
// rows.
void write_latency(std::ostream& out, std::span<const LatencyRow> rows);

// Least-squares fit of latency against length.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};
LineFit fit_line(std::span<const double> x, std::span<const double> y);

}  // namespace permstr::pipeline
