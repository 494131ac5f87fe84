// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>

#include "permstr/model/model.hpp"

namespace permstr::pipeline {

// Image features plus whatever the model caches per image batch.
struct Encoded {
  num::Tensor features;
  std::size_t batch = 0;
  model::DecoderMemory memory;
};

// What training and decoding need from a recognizer. Implementations other
// than TransformerModel exist to instrument or stub the decoder in tests
// and benchmarks.
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;

  virtual const model::ModelConfig& config() const = 0;

  // images: [batch × H × W × C].
  virtual Encoded encode(const num::Tensor& images) = 0;

  // context_ids: batch rows of context_len ids starting with [B].
  // Returns logits [batch·queries × (S+1)]; see model::decode_logits.
  virtual num::Tensor decode(const Encoded& encoded, std::span<const int> context_ids,
                             std::size_t context_len, std::span<const int> query_positions,
                             std::span<const std::uint8_t> allowed, num::Rng* dropout_rng) = 0;
};

class TransformerModel final : public SequenceModel {
 public:
  explicit TransformerModel(model::ModelParams params) : params_(std::move(params)) {}

  const model::ModelConfig& config() const override { return params_.config; }
  Encoded encode(const num::Tensor& images) override;
  num::Tensor decode(const Encoded& encoded, std::span<const int> context_ids, std::size_t context_len,
                     std::span<const int> query_positions, std::span<const std::uint8_t> allowed,
                     num::Rng* dropout_rng) override;

  model::ModelParams& params() { return params_; }
  const model::ModelParams& params() const { return params_; }

 private:
  model::ModelParams params_;
};

}  // namespace permstr::pipeline
