// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "permstr/pipeline/dataset.hpp"
#include "permstr/pipeline/decode.hpp"
#include "permstr/pipeline/metrics.hpp"
#include "permstr/pipeline/sequence_model.hpp"

namespace permstr::pipeline {

struct SampleRecord {
  std::string prediction;
  std::string ground_truth;
  double confidence = 0.0;
  double latency_ms = 0.0;  // batch wall time divided by batch size
};

struct EvalReport {
  double word_accuracy = 0.0;
  double one_minus_ned = 0.0;
  int charset_size = 0;
  std::string scheme;
  int refine_iters = 0;
  std::vector<SampleRecord> records;
};

// Decodes the first `limit` samples (0: all) in batches.
EvalReport evaluate(SequenceModel& model, const Dataset& data, const DecodeConfig& cfg, std::size_t limit = 0,
                    std::size_t batch_size = 64);

// One cloze refinement pass fed the ground-truth label as context.
EvalReport evaluate_cloze(SequenceModel& model, const Dataset& data, std::size_t limit = 0,
                          std::size_t batch_size = 64);

// One tab-separated line per sample, then a `key value` summary block.
void write_report(std::ostream& out, const EvalReport& report);

}  // namespace permstr::pipeline
