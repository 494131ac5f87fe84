// SPDX-License-Identifier: Apache-2.0
#include "permstr/pipeline/loss.hpp"

#include <algorithm>

#include "permstr/errors.hpp"

namespace permstr::pipeline {

int longest_label(std::span<const text::EncodedLabel> labels) {
  int longest = 0;
  for (const auto& l : labels) longest = std::max(longest, l.length);
  return longest;
}

num::Tensor plm_loss(SequenceModel& model, const Encoded& encoded, std::span<const text::EncodedLabel> labels,
                     std::span<const perm::Permutation> perms, num::Rng* dropout_rng) {
  const model::ModelConfig& cfg = model.config();
  const std::size_t batch = labels.size();
  if (batch == 0 || batch != encoded.batch) {
    throw DimensionError("plm_loss: " + std::to_string(batch) + " labels for " +
                         std::to_string(encoded.batch) + " images");
  }
  const std::size_t k_count = perms.size();
  if (k_count == 0) {
    throw ContractError("plm_loss: no permutations");
  }
  const int longest = longest_label(labels);
  const auto len = static_cast<std::size_t>(longest + 1);
  for (const auto& p : perms) {
    if (static_cast<int>(p.size()) != longest) {
      throw DimensionError("plm_loss: permutation of length " + std::to_string(p.size()) +
                           " for batch longest label " + std::to_string(longest));
    }
  }
  for (const auto& l : labels) {
    if (l.context_ids.size() != static_cast<std::size_t>(cfg.max_len + 1) ||
        l.target_ids.size() != l.context_ids.size()) {
      throw DimensionError("plm_loss: encoded label does not match max_len " + std::to_string(cfg.max_len));
    }
  }

  std::vector<perm::AttentionMask> masks;
  std::vector<perm::MaskRole> roles;
  for (std::size_t k = 0; k < k_count; ++k) {
    roles.push_back(perm::role_for_index(k, k_count));
    masks.push_back(perm::mask_from_permutation(perms[k], roles.back()));
  }

  // Rows are ordered (sample, permutation, position); each sample stacks
  // its K restricted masks over the same context.
  std::vector<int> context(batch * len);
  std::vector<std::uint8_t> allowed(batch * k_count * len * len);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto& ids = labels[b].context_ids;
    std::copy_n(ids.begin(), len, context.begin() + static_cast<long>(b * len));
    for (std::size_t k = 0; k < k_count; ++k) {
      const auto restricted = perm::apply_context_restrictions(
          masks[k], std::span(ids).first(len), cfg.eos_id(), cfg.pad_id());
      std::copy(restricted.bits().begin(), restricted.bits().end(),
                allowed.begin() + static_cast<long>((b * k_count + k) * len * len));
    }
  }
  std::vector<int> positions(k_count * len);
  for (std::size_t k = 0; k < k_count; ++k) {
    for (std::size_t t = 0; t < len; ++t) positions[k * len + t] = static_cast<int>(t);
  }

  const num::Tensor logits =
      model.decode(encoded, context, len, positions, allowed, dropout_rng);

  num::Tensor total;
  const int ignore = cfg.pad_id();
  for (std::size_t k = 0; k < k_count; ++k) {
    std::vector<int> targets(batch * k_count * len, ignore);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t t = 0; t < len; ++t) {
        int target = labels[b].target_ids[t];
        if (roles[k] == perm::MaskRole::interior && target == cfg.eos_id()) {
          target = ignore;
        }
        targets[(b * k_count + k) * len + t] = target;
      }
    }
    const num::Tensor ce = num::masked_cross_entropy(logits, targets, ignore);
    total = total.defined() ? num::add(total, ce) : ce;
  }
  return num::scale(total, 1.0 / static_cast<double>(k_count));
}

}  // namespace permstr::pipeline
