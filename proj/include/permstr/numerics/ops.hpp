// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>

#include "permstr/numerics/tensor.hpp"

namespace permstr::num {

using Rng = std::mt19937_64;

// All ops record themselves on the active tape when any input requires
// grad. Shapes must match exactly; the only broadcast is add_bias over the
// last axis.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);

// x·w + b for x [n×in], w [in×out], b [out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

// Exact form x·Φ(x).
Tensor gelu(const Tensor& x);

Tensor gather_rows(const Tensor& table, std::span<const int> ids);

// Mean of -log softmax(logits)[target] over rows whose target != ignore.
Tensor masked_cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore);

// Inverted dropout: zeroes with probability p and scales survivors by
// 1/(1-p). Identity when p == 0 or rng is null.
Tensor dropout(const Tensor& x, double p, Rng* rng);

struct AttentionShape {
  std::size_t batch = 1;
  std::size_t heads = 1;
  std::size_t queries = 0;  // per batch element
  std::size_t keys = 0;     // per batch element
};

// Multi-head scaled dot-product attention over already-projected inputs.
// q is [batch·queries × d], k and v are [batch·keys × d]; head h uses the
// column block [h·d/heads, (h+1)·d/heads). `allowed` is empty (no mask),
// queries×keys (shared) or batch×queries×keys, nonzero meaning visible.
// Returns the concatenated heads, [batch·queries × d].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionShape& shape,
                 std::span<const std::uint8_t> allowed);

}  // namespace permstr::num
