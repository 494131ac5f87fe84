// SPDX-License-Identifier: Apache-2.0
#include "permstr/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "permstr/errors.hpp"

namespace permstr::model {

using num::DType;
using num::Tensor;

namespace {

constexpr double kNormEps = 1e-5;
constexpr double kInitStd = 0.02;

void require_positive(const char* key, int value) {
  if (value < 1) {
    throw ConfigError(std::string(key) + " must be positive, got " + std::to_string(value));
  }
}

class Initializer {
 public:
  Initializer(num::Rng& rng, DType dtype) : rng_(rng), dtype_(dtype) {}

  Tensor normal(num::Shape shape) {
    std::normal_distribution<double> dist(0.0, kInitStd);
    std::vector<double> values(num::numel_of(shape));
    for (auto& v : values) {
      do {
        v = dist(rng_);
      } while (std::abs(v) > 2 * kInitStd);
    }
    return Tensor::from_values(std::move(shape), values, dtype_);
  }
  Tensor zeros(num::Shape shape) const { return Tensor::zeros(std::move(shape), dtype_); }
  Tensor ones(num::Shape shape) const { return Tensor::full(std::move(shape), 1.0, dtype_); }

  NormParams norm(std::size_t d) const { return {ones({d}), zeros({d})}; }
  AttentionParams attention(std::size_t d) {
    AttentionParams p;
    p.wq = normal({d, d});
    p.bq = zeros({d});
    p.wk = normal({d, d});
    p.bk = zeros({d});
    p.wv = normal({d, d});
    p.bv = zeros({d});
    p.wo = normal({d, d});
    p.bo = zeros({d});
    return p;
  }
  MlpParams mlp(std::size_t d, std::size_t hidden) {
    return {normal({d, hidden}), zeros({hidden}), normal({hidden, d}), zeros({d})};
  }

 private:
  num::Rng& rng_;
  DType dtype_;
};

// Visits every tensor with its checkpoint name, in a fixed order. P may be
// const or mutable.
template <class P, class F>
void for_each_named(P& p, F&& f) {
  auto norm = [&](const std::string& prefix, auto& n) {
    f(prefix + ".gamma", n.gamma);
    f(prefix + ".beta", n.beta);
  };
  auto attention = [&](const std::string& prefix, auto& a) {
    f(prefix + ".wq", a.wq);
    f(prefix + ".bq", a.bq);
    f(prefix + ".wk", a.wk);
    f(prefix + ".bk", a.bk);
    f(prefix + ".wv", a.wv);
    f(prefix + ".bv", a.bv);
    f(prefix + ".wo", a.wo);
    f(prefix + ".bo", a.bo);
  };
  auto mlp = [&](const std::string& prefix, auto& m) {
    f(prefix + ".w1", m.w1);
    f(prefix + ".b1", m.b1);
    f(prefix + ".w2", m.w2);
    f(prefix + ".b2", m.b2);
  };
  f("encoder.patch.weight", p.patch_w);
  f("encoder.patch.bias", p.patch_b);
  f("encoder.image_pos", p.image_pos);
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    const std::string prefix = "encoder.layers." + std::to_string(i);
    norm(prefix + ".norm1", p.encoder[i].norm1);
    attention(prefix + ".attn", p.encoder[i].attn);
    norm(prefix + ".norm2", p.encoder[i].norm2);
    mlp(prefix + ".mlp", p.encoder[i].mlp);
  }
  norm("encoder.norm", p.encoder_norm);
  f("decoder.position_tokens", p.position_tokens);
  f("decoder.char_embed", p.char_embed);
  norm("decoder.norm_query", p.decoder.norm_query);
  norm("decoder.norm_context", p.decoder.norm_context);
  attention("decoder.context_attn", p.decoder.context_attn);
  norm("decoder.norm1", p.decoder.norm1);
  attention("decoder.image_attn", p.decoder.image_attn);
  norm("decoder.norm2", p.decoder.norm2);
  mlp("decoder.mlp", p.decoder.mlp);
  norm("decoder.norm_out", p.decoder.norm_out);
  f("head.weight", p.head_w);
  f("head.bias", p.head_b);
}

std::vector<int> iota_ids(std::size_t n, std::size_t repeats) {
  std::vector<int> ids(n * repeats);
  for (std::size_t r = 0; r < repeats; ++r) {
    for (std::size_t i = 0; i < n; ++i) ids[r * n + i] = static_cast<int>(i);
  }
  return ids;
}

// Cut each image into patch rows, patches in raster order, each patch
// flattened as (row, column, channel).
Tensor patchify(const Tensor& images, const ModelConfig& cfg, DType dtype) {
  num::Shape shape = images.shape();
  if (shape.size() == 3) {
    shape.insert(shape.begin(), 1);
  }
  const auto h = static_cast<std::size_t>(cfg.image_h);
  const auto w = static_cast<std::size_t>(cfg.image_w);
  const auto c = static_cast<std::size_t>(cfg.channels);
  if (shape.size() != 4 || shape[1] != h || shape[2] != w || shape[3] != c) {
    throw DimensionError("encode_image: expected images [batch x " + std::to_string(h) + " x " +
                         std::to_string(w) + " x " + std::to_string(c) + "], got " +
                         num::shape_string(images.shape()));
  }
  const std::size_t batch = shape[0];
  const auto ph = static_cast<std::size_t>(cfg.patch_h);
  const auto pw = static_cast<std::size_t>(cfg.patch_w);
  const std::size_t grid_w = w / pw;
  const std::size_t tokens = static_cast<std::size_t>(cfg.image_tokens());
  const std::size_t pdim = static_cast<std::size_t>(cfg.patch_dim());
  const std::vector<double> src = images.to_vector();
  std::vector<double> out(batch * tokens * pdim);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < tokens; ++t) {
      const std::size_t y0 = (t / grid_w) * ph;
      const std::size_t x0 = (t % grid_w) * pw;
      double* dst = &out[(b * tokens + t) * pdim];
      for (std::size_t y = 0; y < ph; ++y) {
        for (std::size_t x = 0; x < pw; ++x) {
          const double* px = &src[((b * h + y0 + y) * w + x0 + x) * c];
          std::copy_n(px, c, dst + (y * pw + x) * c);
        }
      }
    }
  }
  return Tensor::from_values({batch * tokens, pdim}, out, dtype);
}

}  // namespace

ModelConfig ModelConfig::from_preset(const std::string& name, int charset_size) {
  ModelConfig cfg;
  if (name == "tiny64") {
    cfg = ModelConfig{};
  } else if (name == "parseq-ti") {
    cfg.preset = name;
    cfg.image_w = 128;
    cfg.image_h = 32;
    cfg.channels = 3;
    cfg.patch_w = 8;
    cfg.patch_h = 4;
    cfg.d_model = 192;
    cfg.enc_depth = 12;
    cfg.enc_heads = 3;
    cfg.dec_heads = 6;
    cfg.d_mlp = 768;
    cfg.max_len = 25;
    cfg.dropout = 0.1;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected tiny64 or parseq-ti)");
  }
  cfg.charset_size = charset_size;
  cfg.validate();
  return cfg;
}

void ModelConfig::validate() const {
  require_positive("image_w", image_w);
  require_positive("image_h", image_h);
  require_positive("channels", channels);
  require_positive("patch_w", patch_w);
  require_positive("patch_h", patch_h);
  require_positive("d_model", d_model);
  require_positive("enc_depth", enc_depth);
  require_positive("enc_heads", enc_heads);
  require_positive("dec_heads", dec_heads);
  require_positive("d_mlp", d_mlp);
  require_positive("max_len", max_len);
  require_positive("charset_size", charset_size);
  if (image_w % patch_w != 0 || image_h % patch_h != 0) {
    throw ConfigError("patch " + std::to_string(patch_w) + "x" + std::to_string(patch_h) +
                      " does not divide image " + std::to_string(image_w) + "x" +
                      std::to_string(image_h));
  }
  if (d_model % enc_heads != 0 || d_model % dec_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by head counts");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("dropout must lie in [0, 1)");
  }
}

std::vector<optim::Parameter> ModelParams::parameters() const {
  std::vector<optim::Parameter> out;
  for_each_named(*this, [&](const std::string& name, const Tensor& t) { out.push_back({name, t}); });
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each_named(*this, [&](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

ModelParams init_params(const ModelConfig& cfg, num::Rng& rng, DType dtype) {
  cfg.validate();
  Initializer init(rng, dtype);
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto hidden = static_cast<std::size_t>(cfg.d_mlp);
  ModelParams p;
  p.config = cfg;
  p.patch_w = init.normal({static_cast<std::size_t>(cfg.patch_dim()), d});
  p.patch_b = init.zeros({d});
  p.image_pos = init.normal({static_cast<std::size_t>(cfg.image_tokens()), d});
  for (int i = 0; i < cfg.enc_depth; ++i) {
    EncoderLayer layer;
    layer.norm1 = init.norm(d);
    layer.attn = init.attention(d);
    layer.norm2 = init.norm(d);
    layer.mlp = init.mlp(d, hidden);
    p.encoder.push_back(std::move(layer));
  }
  p.encoder_norm = init.norm(d);
  p.position_tokens = init.normal({static_cast<std::size_t>(cfg.max_len + 1), d});
  p.char_embed = init.normal({static_cast<std::size_t>(cfg.vocab_size()), d});
  p.decoder.norm_query = init.norm(d);
  p.decoder.norm_context = init.norm(d);
  p.decoder.context_attn = init.attention(d);
  p.decoder.norm1 = init.norm(d);
  p.decoder.image_attn = init.attention(d);
  p.decoder.norm2 = init.norm(d);
  p.decoder.mlp = init.mlp(d, hidden);
  p.decoder.norm_out = init.norm(d);
  p.head_w = init.normal({d, static_cast<std::size_t>(cfg.num_classes())});
  p.head_b = init.zeros({static_cast<std::size_t>(cfg.num_classes())});
  return p;
}

ModelParams clone_params(const ModelParams& params, DType dtype) {
  ModelParams out = params;
  for_each_named(out, [&](const std::string&, Tensor& t) {
    t = t.to(dtype);
    t.set_requires_grad(false);
  });
  return out;
}

void set_requires_grad(const ModelParams& params, bool flag) {
  for (const auto& p : params.parameters()) {
    Tensor t = p.tensor;
    t.set_requires_grad(flag);
  }
}

Tensor project_queries(const AttentionParams& p, const Tensor& x) { return num::linear(x, p.wq, p.bq); }

KeyValues project_keys_values(const AttentionParams& p, const Tensor& source) {
  return {num::linear(source, p.wk, p.bk), num::linear(source, p.wv, p.bv)};
}

Tensor attend(const AttentionParams& p, const Tensor& queries, const KeyValues& kv,
              const num::AttentionShape& shape, std::span<const std::uint8_t> allowed) {
  const Tensor heads = num::attention(queries, kv.keys, kv.values, shape, allowed);
  return num::linear(heads, p.wo, p.bo);
}

Tensor mha(const AttentionParams& p, const Tensor& q, const Tensor& k, const Tensor& v,
           std::size_t heads, std::span<const std::uint8_t> allowed) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || k.dim(0) != v.dim(0)) {
    throw DimensionError("mha: expected q [n x d], k and v [m x d]");
  }
  if (heads == 0 || q.dim(1) % heads != 0) {
    throw ContractError("mha: width " + std::to_string(q.dim(1)) + " not divisible into " +
                        std::to_string(heads) + " heads");
  }
  const num::AttentionShape shape{1, heads, q.dim(0), k.dim(0)};
  return attend(p, project_queries(p, q),
                {num::linear(k, p.wk, p.bk), num::linear(v, p.wv, p.bv)}, shape, allowed);
}

Tensor mlp(const MlpParams& p, const Tensor& x) {
  return num::linear(num::gelu(num::linear(x, p.w1, p.b1)), p.w2, p.b2);
}

Tensor norm(const NormParams& p, const Tensor& x) { return num::layer_norm(x, p.gamma, p.beta, kNormEps); }

Tensor encode_image(const Tensor& images, const ModelParams& params) {
  const ModelConfig& cfg = params.config;
  const Tensor patches = patchify(images, cfg, params.dtype());
  const std::size_t tokens = static_cast<std::size_t>(cfg.image_tokens());
  const std::size_t batch = patches.dim(0) / tokens;
  Tensor x = num::linear(patches, params.patch_w, params.patch_b);
  x = num::add(x, num::gather_rows(params.image_pos, iota_ids(tokens, batch)));
  const num::AttentionShape shape{batch, static_cast<std::size_t>(cfg.enc_heads), tokens, tokens};
  for (const EncoderLayer& layer : params.encoder) {
    const Tensor h = norm(layer.norm1, x);
    x = num::add(x, attend(layer.attn, project_queries(layer.attn, h),
                           project_keys_values(layer.attn, h), shape, {}));
    x = num::add(x, mlp(layer.mlp, norm(layer.norm2, x)));
  }
  return norm(params.encoder_norm, x);
}

DecoderMemory prepare_memory(const ModelParams& params, const Tensor& z, std::size_t batch) {
  const auto d = static_cast<std::size_t>(params.config.d_model);
  if (z.rank() != 2 || z.dim(1) != d || batch == 0 || z.dim(0) % batch != 0) {
    throw DimensionError("prepare_memory: features " + num::shape_string(z.shape()) +
                         " do not split into " + std::to_string(batch) + " images of width " +
                         std::to_string(d));
  }
  return {project_keys_values(params.decoder.image_attn, z), batch, z.dim(0) / batch};
}

ContextStream prepare_context(const ModelParams& params, std::span<const int> ids, std::size_t batch,
                              std::size_t length) {
  const ModelConfig& cfg = params.config;
  if (length == 0 || length > static_cast<std::size_t>(cfg.max_len + 1) ||
      ids.size() != batch * length) {
    throw DimensionError("prepare_context: " + std::to_string(ids.size()) + " ids for " +
                         std::to_string(batch) + " contexts of length " + std::to_string(length) +
                         " (max " + std::to_string(cfg.max_len + 1) + ")");
  }
  // Slot j >= 1 carries position token j-1; [B] at slot 0 gets none. The
  // selection is a constant 0/1 matrix so the position table still gets
  // gradients through an ordinary matmul.
  const std::size_t positions = static_cast<std::size_t>(cfg.max_len + 1);
  std::vector<double> select(batch * length * positions, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 1; j < length; ++j) {
      select[(b * length + j) * positions + (j - 1)] = 1.0;
    }
  }
  const Tensor selector = Tensor::from_values({batch * length, positions}, select, params.dtype());
  const Tensor c = num::add(num::gather_rows(params.char_embed, ids),
                            num::matmul(selector, params.position_tokens));
  return {project_keys_values(params.decoder.context_attn, norm(params.decoder.norm_context, c)),
          batch, length};
}

Tensor decode_logits(const ModelParams& params, const DecoderMemory& memory, const ContextStream& context,
                     std::span<const int> query_positions, std::span<const std::uint8_t> allowed,
                     num::Rng* dropout_rng) {
  const ModelConfig& cfg = params.config;
  const DecoderParams& dec = params.decoder;
  if (memory.batch != context.batch) {
    throw DimensionError("decode_logits: memory batch " + std::to_string(memory.batch) +
                         " vs context batch " + std::to_string(context.batch));
  }
  const std::size_t batch = memory.batch;
  const std::size_t n = query_positions.size();
  if (n == 0) {
    throw ContractError("decode_logits: no queries");
  }

  // The query stream depends only on the position, so normalize and project
  // each distinct position once and replicate.
  std::vector<int> distinct(query_positions.begin(), query_positions.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<int> rows(batch * n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto slot = std::lower_bound(distinct.begin(), distinct.end(), query_positions[i]);
    for (std::size_t b = 0; b < batch; ++b) {
      rows[b * n + i] = static_cast<int>(slot - distinct.begin());
    }
  }
  const Tensor p = num::gather_rows(params.position_tokens, distinct);
  const Tensor q = project_queries(dec.context_attn, norm(dec.norm_query, p));
  const Tensor p_rows = num::gather_rows(p, rows);
  const Tensor q_rows = num::gather_rows(q, rows);

  const double drop = dropout_rng != nullptr ? cfg.dropout : 0.0;
  const auto heads = static_cast<std::size_t>(cfg.dec_heads);
  const Tensor ctx = attend(dec.context_attn, q_rows, context.kv, {batch, heads, n, context.length}, allowed);
  const Tensor h_c = num::add(p_rows, num::dropout(ctx, drop, dropout_rng));
  const Tensor img = attend(dec.image_attn, project_queries(dec.image_attn, norm(dec.norm1, h_c)),
                            memory.image, {batch, heads, n, memory.tokens}, {});
  const Tensor h_i = num::add(h_c, num::dropout(img, drop, dropout_rng));
  const Tensor h = num::add(h_i, num::dropout(mlp(dec.mlp, norm(dec.norm2, h_i)), drop, dropout_rng));
  return num::linear(norm(dec.norm_out, h), params.head_w, params.head_b);
}

Tensor decoder_forward(const Tensor& z, std::span<const int> context_ids, const perm::AttentionMask& mask,
                       const ModelParams& params, num::Rng* dropout_rng) {
  const std::size_t slots = static_cast<std::size_t>(params.config.max_len + 1);
  if (context_ids.size() != slots) {
    throw DimensionError("decoder_forward: context has " + std::to_string(context_ids.size()) +
                         " ids, expected " + std::to_string(slots));
  }
  if (static_cast<std::size_t>(mask.side()) != slots) {
    throw DimensionError("decoder_forward: mask side " + std::to_string(mask.side()) +
                         " does not match " + std::to_string(slots));
  }
  const DecoderMemory memory = prepare_memory(params, z, 1);
  const ContextStream context = prepare_context(params, context_ids, 1, slots);
  const std::vector<int> positions = iota_ids(slots, 1);
  return decode_logits(params, memory, context, positions, mask.bits(), dropout_rng);
}

}  // namespace permstr::model
