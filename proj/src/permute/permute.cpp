// SPDX-License-Identifier: Apache-2.0
#include "permstr/permute/permute.hpp"

#include <algorithm>
#include <numeric>

#include "permstr/errors.hpp"

namespace permstr::perm {

std::string to_string(MaskRole role) {
  switch (role) {
    case MaskRole::interior:
      return "interior";
    case MaskRole::ltr_pair_first:
      return "ltr_pair_first";
    case MaskRole::rtl_pair_second:
      return "rtl_pair_second";
  }
  return "unknown";
}

AttentionMask::AttentionMask(int max_len, std::uint8_t fill) : max_len_(max_len) {
  if (max_len < 1) {
    throw ContractError("attention mask needs max_len >= 1, got " + std::to_string(max_len));
  }
  bits_.assign(static_cast<std::size_t>(side()) * static_cast<std::size_t>(side()), fill);
}

std::size_t AttentionMask::index(int row, int col) const {
  if (row < 0 || row >= side() || col < 0 || col >= side()) {
    throw IndexError("mask cell (" + std::to_string(row) + ", " + std::to_string(col) +
                     ") outside " + std::to_string(side()) + "x" + std::to_string(side()));
  }
  return static_cast<std::size_t>(row) * static_cast<std::size_t>(side()) +
         static_cast<std::size_t>(col);
}

std::size_t AttentionMask::row_count(int row) const {
  std::size_t n = 0;
  for (int c = 0; c < side(); ++c) n += at(row, c);
  return n;
}

std::string AttentionMask::render() const {
  const int width = max_len_ >= 10 ? 4 : 3;
  auto pad = [&](const std::string& s) {
    return s.size() >= static_cast<std::size_t>(width) ? s + " "
                                                       : std::string(width - s.size(), ' ') + s + " ";
  };
  std::string out = pad("");
  out += pad("[B]");
  for (int j = 1; j <= max_len_; ++j) out += pad("y" + std::to_string(j));
  out.back() = '\n';
  for (int r = 0; r < side(); ++r) {
    out += pad(r < max_len_ ? "y" + std::to_string(r + 1) : "[E]");
    for (int c = 0; c < side(); ++c) out += pad(at(r, c) ? "1" : "0");
    out.back() = '\n';
  }
  return out;
}

std::vector<Permutation> sample_permutations(int k, int max_len, std::mt19937_64& rng) {
  if (k < 1 || (k != 1 && k % 2 != 0)) {
    throw ContractError("permutation count must be 1 or even, got " + std::to_string(k));
  }
  if (max_len < 1) {
    throw ContractError("permutation length must be >= 1, got " + std::to_string(max_len));
  }
  Permutation ltr(static_cast<std::size_t>(max_len));
  std::iota(ltr.begin(), ltr.end(), 1);
  std::vector<Permutation> perms{ltr};
  if (k == 1) {
    return perms;
  }
  const int half = k / 2;
  for (int i = 1; i < half; ++i) {
    Permutation p = ltr;
    std::shuffle(p.begin(), p.end(), rng);
    perms.push_back(std::move(p));
  }
  for (int i = 0; i < half; ++i) {
    Permutation p = perms[static_cast<std::size_t>(i)];
    std::reverse(p.begin(), p.end());
    perms.push_back(std::move(p));
  }
  return perms;
}

MaskRole role_for_index(std::size_t index, std::size_t count) {
  if (index >= count) {
    throw IndexError("permutation index " + std::to_string(index) + " >= " + std::to_string(count));
  }
  if (index == 0) {
    return MaskRole::ltr_pair_first;
  }
  if (count > 1 && index == count / 2) {
    return MaskRole::rtl_pair_second;
  }
  return MaskRole::interior;
}

void validate_permutation(std::span<const int> order) {
  const int n = static_cast<int>(order.size());
  if (n < 1) {
    throw ContractError("empty permutation");
  }
  std::vector<bool> seen(order.size() + 1, false);
  for (int v : order) {
    if (v < 1 || v > n || seen[static_cast<std::size_t>(v)]) {
      throw ContractError("not a permutation of 1.." + std::to_string(n));
    }
    seen[static_cast<std::size_t>(v)] = true;
  }
}

AttentionMask mask_from_permutation(std::span<const int> order, MaskRole role) {
  validate_permutation(order);
  const int t = static_cast<int>(order.size());
  AttentionMask mask(t, 0);
  for (int step = 0; step < t; ++step) {
    const int row = order[static_cast<std::size_t>(step)] - 1;
    mask.set(row, 0, 1);
    for (int prev = 0; prev < step; ++prev) {
      mask.set(row, order[static_cast<std::size_t>(prev)], 1);
    }
  }
  for (int c = 0; c <= t; ++c) {
    mask.set(t, c, role == MaskRole::rtl_pair_second ? (c == 0 ? 1 : 0) : 1);
  }
  return mask;
}

AttentionMask lookahead_mask(int max_len) {
  AttentionMask mask(max_len, 0);
  for (int r = 0; r <= max_len; ++r) {
    for (int c = 0; c <= r; ++c) mask.set(r, c, 1);
  }
  return mask;
}

AttentionMask cloze_mask(int max_len) {
  AttentionMask mask(max_len, 1);
  for (int r = 0; r < max_len; ++r) mask.set(r, r + 1, 0);
  return mask;
}

AttentionMask all_ones_mask(int max_len) { return AttentionMask(max_len, 1); }

AttentionMask apply_context_restrictions(AttentionMask mask, std::span<const text::TokenId> context_ids,
                                         const text::TokenCodec& codec) {
  return apply_context_restrictions(std::move(mask), context_ids, codec.eos_id(), codec.pad_id());
}

AttentionMask apply_context_restrictions(AttentionMask mask, std::span<const text::TokenId> context_ids,
                                         text::TokenId eos_id, text::TokenId pad_id) {
  if (static_cast<int>(context_ids.size()) != mask.side()) {
    throw DimensionError("context length " + std::to_string(context_ids.size()) +
                         " does not match mask side " + std::to_string(mask.side()));
  }
  for (int c = 1; c < mask.side(); ++c) {
    const auto id = context_ids[static_cast<std::size_t>(c)];
    if (id == eos_id || id == pad_id) {
      for (int r = 0; r < mask.side(); ++r) mask.set(r, c, 0);
    }
  }
  return mask;
}

}  // namespace permstr::perm
