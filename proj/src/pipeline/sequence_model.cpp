// SPDX-License-Identifier: Apache-2.0
#include "permstr/pipeline/sequence_model.hpp"

namespace permstr::pipeline {

Encoded TransformerModel::encode(const num::Tensor& images) {
  Encoded out;
  out.features = model::encode_image(images, params_);
  out.batch = out.features.dim(0) / static_cast<std::size_t>(params_.config.image_tokens());
  out.memory = model::prepare_memory(params_, out.features, out.batch);
  return out;
}

num::Tensor TransformerModel::decode(const Encoded& encoded, std::span<const int> context_ids,
                                     std::size_t context_len, std::span<const int> query_positions,
                                     std::span<const std::uint8_t> allowed, num::Rng* dropout_rng) {
  const model::ContextStream context =
      model::prepare_context(params_, context_ids, encoded.batch, context_len);
  return model::decode_logits(params_, encoded.memory, context, query_positions, allowed, dropout_rng);
}

}  // namespace permstr::pipeline
