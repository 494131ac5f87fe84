// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "permstr/numerics/ops.hpp"
#include "permstr/numerics/tensor.hpp"
#include "permstr/optim/optim.hpp"
#include "permstr/permute/permute.hpp"

namespace permstr::model {

struct ModelConfig {
  std::string preset = "tiny64";
  int image_w = 64;
  int image_h = 16;
  int channels = 1;
  int patch_w = 8;
  int patch_h = 4;
  int d_model = 64;
  int enc_depth = 2;
  int enc_heads = 2;
  int dec_heads = 2;
  int d_mlp = 256;
  int max_len = 8;
  int charset_size = 36;
  double dropout = 0.1;

  // "tiny64" or "parseq-ti".
  static ModelConfig from_preset(const std::string& name, int charset_size);

  void validate() const;
  int image_tokens() const { return (image_w / patch_w) * (image_h / patch_h); }
  int patch_dim() const { return patch_w * patch_h * channels; }
  int num_classes() const { return charset_size + 1; }
  int vocab_size() const { return charset_size + 3; }
  int eos_id() const { return charset_size; }
  int bos_id() const { return charset_size + 1; }
  int pad_id() const { return charset_size + 2; }

  bool operator==(const ModelConfig&) const = default;
};

struct NormParams {
  num::Tensor gamma;
  num::Tensor beta;
};

// Input projections (x·W + b) for queries, keys and values, then an output
// projection over the concatenated heads.
struct AttentionParams {
  num::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct MlpParams {
  num::Tensor w1, b1, w2, b2;
};

struct EncoderLayer {
  NormParams norm1;
  AttentionParams attn;
  NormParams norm2;
  MlpParams mlp;
};

struct DecoderParams {
  NormParams norm_query;
  NormParams norm_context;
  AttentionParams context_attn;
  NormParams norm1;
  AttentionParams image_attn;
  NormParams norm2;
  MlpParams mlp;
  NormParams norm_out;
};

struct ModelParams {
  ModelConfig config;
  num::Tensor patch_w, patch_b;
  num::Tensor image_pos;  // [image tokens × d]
  std::vector<EncoderLayer> encoder;
  NormParams encoder_norm;
  // T+1 rows: query for output i, and position embedding of context slot i+1.
  num::Tensor position_tokens;
  num::Tensor char_embed;  // [S+3 × d]
  DecoderParams decoder;
  num::Tensor head_w, head_b;

  // Handles in a fixed order; mutating them mutates the model.
  std::vector<optim::Parameter> parameters() const;
  num::DType dtype() const { return head_w.dtype(); }
  std::size_t parameter_count() const;
};

// Truncated normal (σ = 0.02, cut at 2σ) weights, zero biases, unit gains.
ModelParams init_params(const ModelConfig& cfg, num::Rng& rng, num::DType dtype = num::DType::f32);

// Deep copy, optionally converted.
ModelParams clone_params(const ModelParams& params, num::DType dtype);

void set_requires_grad(const ModelParams& params, bool flag);

struct KeyValues {
  num::Tensor keys;
  num::Tensor values;
};

num::Tensor project_queries(const AttentionParams& p, const num::Tensor& x);
KeyValues project_keys_values(const AttentionParams& p, const num::Tensor& source);

// Attention over projected queries/keys/values followed by the output
// projection. `allowed` follows num::attention.
num::Tensor attend(const AttentionParams& p, const num::Tensor& queries, const KeyValues& kv,
                   const num::AttentionShape& shape, std::span<const std::uint8_t> allowed);

// Full multi-head attention: q [n×d], k and v [m×d], optional n×m mask.
num::Tensor mha(const AttentionParams& p, const num::Tensor& q, const num::Tensor& k,
                const num::Tensor& v, std::size_t heads, std::span<const std::uint8_t> allowed = {});

num::Tensor mlp(const MlpParams& p, const num::Tensor& x);
num::Tensor norm(const NormParams& p, const num::Tensor& x);

// Images are [batch × H × W × C] (or [H × W × C]) in [-1, 1], any dtype.
// Returns [batch·tokens × d] in the parameter dtype.
num::Tensor encode_image(const num::Tensor& images, const ModelParams& params);

// Image keys/values for the decoder's second attention, computed once per
// image batch and reused across every decode against it.
struct DecoderMemory {
  KeyValues image;
  std::size_t batch = 0;
  std::size_t tokens = 0;
};

DecoderMemory prepare_memory(const ModelParams& params, const num::Tensor& z, std::size_t batch);

// Context keys/values. ids hold batch rows of `length` ids starting with [B].
struct ContextStream {
  KeyValues kv;
  std::size_t batch = 0;
  std::size_t length = 0;
};

ContextStream prepare_context(const ModelParams& params, std::span<const int> ids, std::size_t batch,
                              std::size_t length);

// One decoder pass. Each sample issues the queries listed in
// `query_positions` (position-token indices, shared by the batch) against
// its context. `allowed` is empty, queries×length (shared) or
// batch×queries×length. Dropout runs only when `dropout_rng` is set.
// Returns logits [batch·queries × (S+1)].
num::Tensor decode_logits(const ModelParams& params, const DecoderMemory& memory,
                          const ContextStream& context, std::span<const int> query_positions,
                          std::span<const std::uint8_t> allowed, num::Rng* dropout_rng);

// Single-image decode over all T+1 queries: z [tokens × d], context T+1 ids,
// an already context-restricted mask. Returns [(T+1) × (S+1)].
num::Tensor decoder_forward(const num::Tensor& z, std::span<const int> context_ids,
                            const perm::AttentionMask& mask, const ModelParams& params,
                            num::Rng* dropout_rng = nullptr);

// Checkpoint: text header (magic, config, metadata, tensor index) followed
// by little-endian f32 payloads.
struct Checkpoint {
  ModelParams params;
  std::map<std::string, std::string> metadata;
};

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const std::map<std::string, std::string>& metadata = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace permstr::model
