// SPDX-License-Identifier: Apache-2.0
#include "permstr/pipeline/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "permstr/errors.hpp"
#include "permstr/permute/permute.hpp"

namespace permstr::pipeline {

namespace {

struct Pick {
  int id = 0;
  double prob = 0.0;
};

// Argmax and softmax maximum over the permitted classes: the active
// character slice plus [E].
Pick pick(std::span<const double> logits, int charset_size, int active) {
  const int eos = charset_size;
  const int limit = active > 0 ? std::min(active, charset_size) : charset_size;
  auto permitted = [&](int c) { return c < limit || c == eos; };
  Pick best{eos, 0.0};
  double top = -std::numeric_limits<double>::infinity();
  for (int c = 0; c <= eos; ++c) {
    if (permitted(c) && logits[static_cast<std::size_t>(c)] > top) {
      top = logits[static_cast<std::size_t>(c)];
      best.id = c;
    }
  }
  double denom = 0.0;
  for (int c = 0; c <= eos; ++c) {
    if (permitted(c)) denom += std::exp(logits[static_cast<std::size_t>(c)] - top);
  }
  best.prob = 1.0 / denom;
  return best;
}

// Reads consecutive query rows [first, first+rows) as positions 1..rows,
// truncating at the first [E]. A character in the [E] slot (row T+1) is
// dropped: labels never exceed T characters.
Prediction collect(const std::vector<double>& logits, std::size_t first, std::size_t rows,
                   const model::ModelConfig& cfg, int active) {
  const auto classes = static_cast<std::size_t>(cfg.num_classes());
  Prediction p;
  for (std::size_t r = 0; r < rows; ++r) {
    const Pick choice = pick(std::span(logits).subspan((first + r) * classes, classes), cfg.charset_size, active);
    if (choice.id == cfg.eos_id()) {
      p.probs.push_back(choice.prob);
      break;
    }
    if (static_cast<int>(r) == cfg.max_len) {
      break;
    }
    p.ids.push_back(choice.id);
    p.probs.push_back(choice.prob);
  }
  return p;
}

std::vector<int> all_positions(const model::ModelConfig& cfg) {
  std::vector<int> positions(static_cast<std::size_t>(cfg.max_len + 1));
  std::iota(positions.begin(), positions.end(), 0);
  return positions;
}

DecodeResult refine_times(SequenceModel& model, const Encoded& encoded, DecodeResult result, int iters,
                          int active) {
  if (iters < 0) {
    throw ContractError("refine iterations must be >= 0, got " + std::to_string(iters));
  }
  for (int i = 0; i < iters; ++i) result = refine(model, encoded, result, active);
  return result;
}

}  // namespace

std::string to_string(Scheme scheme) { return scheme == Scheme::ar ? "ar" : "nar"; }

Scheme parse_scheme(const std::string& name) {
  if (name == "ar") return Scheme::ar;
  if (name == "nar") return Scheme::nar;
  throw ConfigError("unknown decoding scheme '" + name + "' (expected ar or nar)");
}

int DecodeConfig::effective_refine_iters() const {
  return refine_iters.value_or(scheme == Scheme::ar ? 1 : 2);
}

void DecodeConfig::validate() const {
  if (effective_refine_iters() < 0) {
    throw ConfigError("refine iterations must be >= 0");
  }
  if (active_charset < 0) {
    throw ConfigError("active charset size must be >= 0");
  }
}

double Prediction::confidence() const {
  return std::accumulate(probs.begin(), probs.end(), 1.0, std::multiplies<>());
}

DecodeResult decode_ar(SequenceModel& model, const Encoded& encoded, int refine_iters, int active_charset) {
  const model::ModelConfig& cfg = model.config();
  const std::size_t batch = encoded.batch;
  const auto slots = static_cast<std::size_t>(cfg.max_len + 1);
  const auto classes = static_cast<std::size_t>(cfg.num_classes());
  DecodeResult out(batch);
  std::vector<bool> done(batch, false);
  // Full-width context buffer; step i passes the first i+1 slots.
  std::vector<int> context(batch * slots, cfg.pad_id());
  for (std::size_t b = 0; b < batch; ++b) context[b * slots] = cfg.bos_id();
  std::vector<int> step_context;
  for (std::size_t i = 0; i < slots; ++i) {
    const std::size_t len = i + 1;
    step_context.resize(batch * len);
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(context.begin() + static_cast<long>(b * slots), len,
                  step_context.begin() + static_cast<long>(b * len));
    }
    const std::vector<int> query{static_cast<int>(i)};
    const std::vector<double> logits = model.decode(encoded, step_context, len, query, {}, nullptr).to_vector();
    bool all_done = true;
    for (std::size_t b = 0; b < batch; ++b) {
      if (done[b]) continue;
      const Pick choice = pick(std::span(logits).subspan(b * classes, classes), cfg.charset_size, active_charset);
      if (choice.id == cfg.eos_id()) {
        out[b].probs.push_back(choice.prob);
        done[b] = true;
      } else if (i + 1 == slots) {
        done[b] = true;
      } else {
        out[b].ids.push_back(choice.id);
        out[b].probs.push_back(choice.prob);
        context[b * slots + i + 1] = choice.id;
      }
      all_done = all_done && done[b];
    }
    if (all_done) break;
  }
  return refine_times(model, encoded, std::move(out), refine_iters, active_charset);
}

DecodeResult decode_nar(SequenceModel& model, const Encoded& encoded, int refine_iters, int active_charset) {
  const model::ModelConfig& cfg = model.config();
  const std::size_t batch = encoded.batch;
  const auto slots = static_cast<std::size_t>(cfg.max_len + 1);
  // A lone [B] is the all-ones mask restricted to [B].
  const std::vector<int> context(batch, cfg.bos_id());
  const std::vector<double> logits =
      model.decode(encoded, context, 1, all_positions(cfg), {}, nullptr).to_vector();
  DecodeResult out;
  for (std::size_t b = 0; b < batch; ++b) out.push_back(collect(logits, b * slots, slots, cfg, active_charset));
  return refine_times(model, encoded, std::move(out), refine_iters, active_charset);
}

DecodeResult refine(SequenceModel& model, const Encoded& encoded, const DecodeResult& prev, int active_charset) {
  const model::ModelConfig& cfg = model.config();
  const std::size_t batch = encoded.batch;
  if (prev.size() != batch) {
    throw DimensionError("refine: " + std::to_string(prev.size()) + " predictions for " +
                         std::to_string(batch) + " images");
  }
  const auto slots = static_cast<std::size_t>(cfg.max_len + 1);
  const perm::AttentionMask cloze = perm::cloze_mask(cfg.max_len);
  std::vector<int> context(batch * slots, cfg.pad_id());
  std::vector<std::uint8_t> allowed;
  allowed.reserve(batch * slots * slots);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto& ids = prev[b].ids;
    if (ids.size() > static_cast<std::size_t>(cfg.max_len)) {
      throw ContractError("refine: prediction longer than max_len");
    }
    const auto row = context.begin() + static_cast<long>(b * slots);
    *row = cfg.bos_id();
    std::copy(ids.begin(), ids.end(), row + 1);
    const auto mask = perm::apply_context_restrictions(cloze, std::span(context).subspan(b * slots, slots),
                                                       cfg.eos_id(), cfg.pad_id());
    allowed.insert(allowed.end(), mask.bits().begin(), mask.bits().end());
  }
  const std::vector<double> logits =
      model.decode(encoded, context, slots, all_positions(cfg), allowed, nullptr).to_vector();
  DecodeResult out;
  for (std::size_t b = 0; b < batch; ++b) out.push_back(collect(logits, b * slots, slots, cfg, active_charset));
  return out;
}

DecodeResult decode(SequenceModel& model, const Encoded& encoded, const DecodeConfig& cfg) {
  cfg.validate();
  return cfg.scheme == Scheme::ar
             ? decode_ar(model, encoded, cfg.effective_refine_iters(), cfg.active_charset)
             : decode_nar(model, encoded, cfg.effective_refine_iters(), cfg.active_charset);
}

std::string to_text(const Prediction& prediction, const text::TokenCodec& codec) {
  return text::decode_ids(prediction.ids, codec);
}

}  // namespace permstr::pipeline
