// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "permstr/pipeline/sequence_model.hpp"
#include "permstr/textcodec/textcodec.hpp"

namespace permstr::pipeline {

enum class Scheme { ar, nar };

std::string to_string(Scheme scheme);
Scheme parse_scheme(const std::string& name);

struct DecodeConfig {
  Scheme scheme = Scheme::ar;
  // Unset means the scheme default: one for AR, two for NAR.
  std::optional<int> refine_iters;
  // Only the first `active_charset` characters may be emitted; 0 means all.
  int active_charset = 0;

  int effective_refine_iters() const;
  void validate() const;
};

// Greedy output for one image: character ids (without [E]) and the softmax
// maximum at every emitted position, [E] included when it was emitted.
struct Prediction {
  std::vector<int> ids;
  std::vector<double> probs;

  double confidence() const;
};

using DecodeResult = std::vector<Prediction>;

// One new token per decoder call, querying only the newest position.
// Stops at [E] or after T+1 steps, then runs `refine_iters` refinements.
DecodeResult decode_ar(SequenceModel& model, const Encoded& encoded, int refine_iters, int active_charset = 0);

// All positions at once against a [B]-only context.
DecodeResult decode_nar(SequenceModel& model, const Encoded& encoded, int refine_iters, int active_charset = 0);

// Cloze pass: each position sees [B] and every other position of `prev`.
DecodeResult refine(SequenceModel& model, const Encoded& encoded, const DecodeResult& prev, int active_charset = 0);

DecodeResult decode(SequenceModel& model, const Encoded& encoded, const DecodeConfig& cfg);

std::string to_text(const Prediction& prediction, const text::TokenCodec& codec);

}  // namespace permstr::pipeline
