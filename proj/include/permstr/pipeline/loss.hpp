// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "permstr/permute/permute.hpp"
#include "permstr/pipeline/sequence_model.hpp"
#include "permstr/textcodec/textcodec.hpp"

namespace permstr::pipeline {

int longest_label(std::span<const text::EncodedLabel> labels);

// Mean over permutations of the cross-entropy of one decoder pass per
// permutation mask. Masks and permutations span the batch's longest label
// T_b, so `perms` must be permutations of 1..T_b (see longest_label). Pad
// targets are ignored; interior permutations also ignore the [E] target.
// All K decodes share the encoded image and run as a single decoder call.
num::Tensor plm_loss(SequenceModel& model, const Encoded& encoded, std::span<const text::EncodedLabel> labels,
                     std::span<const perm::Permutation> perms, num::Rng* dropout_rng);

}  // namespace permstr::pipeline
