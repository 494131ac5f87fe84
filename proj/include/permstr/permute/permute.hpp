// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "permstr/textcodec/textcodec.hpp"

namespace permstr::perm {

// Factorization order over label positions, 1-based.
using Permutation = std::vector<int>;

enum class MaskRole { interior, ltr_pair_first, rtl_pair_second };

std::string to_string(MaskRole role);

// (T+1)x(T+1) visibility matrix. Rows are outputs y1..yT then [E];
// columns are context slots [B] then y1..yT. 1 means "may attend".
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(int max_len, std::uint8_t fill);

  int max_len() const { return max_len_; }
  int side() const { return max_len_ + 1; }
  std::uint8_t at(int row, int col) const { return bits_[index(row, col)]; }
  void set(int row, int col, std::uint8_t value) { bits_[index(row, col)] = value; }
  std::span<const std::uint8_t> bits() const { return bits_; }
  std::size_t row_count(int row) const;

  // 0/1 grid with [B]/[E] headers, one row per line.
  std::string render() const;

  bool operator==(const AttentionMask&) const = default;

 private:
  std::size_t index(int row, int col) const;

  int max_len_ = 0;
  std::vector<std::uint8_t> bits_;
};

// LTR first, K/2-1 uniform random orders, then the reversals of the first
// half. K == 1 yields LTR only.
std::vector<Permutation> sample_permutations(int k, int max_len, std::mt19937_64& rng);

// Role of the i-th permutation returned by sample_permutations.
MaskRole role_for_index(std::size_t index, std::size_t count);

void validate_permutation(std::span<const int> order);

AttentionMask mask_from_permutation(std::span<const int> order, MaskRole role);

// Row i may see [B] and y1..y(i-1); the [E] row sees everything.
AttentionMask lookahead_mask(int max_len);

// Every slot except the row's own character.
AttentionMask cloze_mask(int max_len);

AttentionMask all_ones_mask(int max_len);

// Zero every column whose context id is [E] or [P].
AttentionMask apply_context_restrictions(AttentionMask mask, std::span<const text::TokenId> context_ids,
                                         const text::TokenCodec& codec);
AttentionMask apply_context_restrictions(AttentionMask mask, std::span<const text::TokenId> context_ids,
                                         text::TokenId eos_id, text::TokenId pad_id);

}  // namespace permstr::perm
