// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "permstr/errors.hpp"
#include "permstr/numerics/tape.hpp"
#include "permstr/pipeline/dataset.hpp"
#include "permstr/pipeline/decode.hpp"
#include "permstr/pipeline/eval.hpp"
#include "permstr/pipeline/image.hpp"
#include "permstr/pipeline/latency.hpp"
#include "permstr/pipeline/loss.hpp"
#include "permstr/pipeline/metrics.hpp"
#include "permstr/pipeline/synth.hpp"
#include "permstr/pipeline/train.hpp"

using namespace permstr;
using namespace permstr::pipeline;
using num::DType;
using num::Tensor;

namespace {

namespace fs = std::filesystem;

model::ModelConfig micro_config() {
  model::ModelConfig cfg;
  cfg.preset = "micro";
  cfg.image_w = 8;
  cfg.image_h = 4;
  cfg.patch_w = 4;
  cfg.patch_h = 2;
  cfg.d_model = 8;
  cfg.enc_depth = 1;
  cfg.enc_heads = 2;
  cfg.dec_heads = 2;
  cfg.d_mlp = 12;
  cfg.max_len = 4;
  cfg.charset_size = 5;
  cfg.dropout = 0.1;
  return cfg;
}

text::TokenCodec codec_for(const model::ModelConfig& cfg) {
  return text::TokenCodec(
      text::Charset(text::Charset::canonical94().substr(0, static_cast<std::size_t>(cfg.charset_size))),
      cfg.max_len);
}

Tensor random_images(const model::ModelConfig& cfg, std::size_t batch, num::Rng& rng, DType dtype) {
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> px(batch * static_cast<std::size_t>(cfg.image_h * cfg.image_w * cfg.channels));
  for (auto& v : px) v = u(rng);
  return Tensor::from_values({batch, std::size_t(cfg.image_h), std::size_t(cfg.image_w), std::size_t(cfg.channels)},
                             px, dtype);
}

std::string random_label(const text::TokenCodec& codec, int min_len, int max_len, num::Rng& rng) {
  std::uniform_int_distribution<int> len(min_len, max_len);
  std::uniform_int_distribution<int> ch(0, codec.charset_size() - 1);
  std::string s;
  const int n = len(rng);
  for (int i = 0; i < n; ++i) s += codec.charset().chars()[static_cast<std::size_t>(ch(rng))];
  return s;
}

std::vector<text::EncodedLabel> random_labels(const text::TokenCodec& codec, std::size_t n, num::Rng& rng) {
  std::vector<text::EncodedLabel> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(text::encode_label(random_label(codec, 1, codec.max_len(), rng), codec));
  return out;
}

// Left-to-right cross-entropy computed directly from the decoder: one pass
// under the restricted lookahead mask, [E] included in the loss.
Tensor reference_ar_loss(SequenceModel& model, const Encoded& encoded, std::span<const text::EncodedLabel> labels,
                         num::Rng* dropout_rng) {
  const model::ModelConfig& cfg = model.config();
  const auto len = static_cast<std::size_t>(longest_label(labels) + 1);
  const perm::AttentionMask causal = perm::lookahead_mask(static_cast<int>(len) - 1);
  std::vector<int> context;
  std::vector<std::uint8_t> allowed;
  std::vector<int> targets;
  for (const auto& l : labels) {
    const std::span<const int> ids = std::span(l.context_ids).first(len);
    context.insert(context.end(), ids.begin(), ids.end());
    const auto mask = perm::apply_context_restrictions(causal, ids, cfg.eos_id(), cfg.pad_id());
    allowed.insert(allowed.end(), mask.bits().begin(), mask.bits().end());
    targets.insert(targets.end(), l.target_ids.begin(), l.target_ids.begin() + static_cast<long>(len));
  }
  std::vector<int> positions(len);
  std::iota(positions.begin(), positions.end(), 0);
  const Tensor logits = model.decode(encoded, context, len, positions, allowed, dropout_rng);
  return num::masked_cross_entropy(logits, targets, cfg.pad_id());
}

std::vector<double> log_softmax_row(const std::vector<double>& logits, std::size_t row, std::size_t classes) {
  const auto first = logits.begin() + static_cast<long>(row * classes);
  const double top = *std::max_element(first, first + static_cast<long>(classes));
  double denom = 0.0;
  for (std::size_t c = 0; c < classes; ++c) denom += std::exp(first[static_cast<long>(c)] - top);
  std::vector<double> out(classes);
  for (std::size_t c = 0; c < classes; ++c) out[c] = first[static_cast<long>(c)] - top - std::log(denom);
  return out;
}

// Decoder whose logits are chosen by a callback on (sample, query position,
// visible context). Counts calls.
class StubModel final : public SequenceModel {
 public:
  using Rule = std::function<std::vector<double>(std::size_t sample, int position, std::span<const int> visible)>;

  StubModel(model::ModelConfig cfg, Rule rule) : cfg_(std::move(cfg)), rule_(std::move(rule)) {}

  const model::ModelConfig& config() const override { return cfg_; }

  Encoded encode(const Tensor& images) override {
    ++encode_calls;
    Encoded e;
    e.features = images;
    e.batch = images.dim(0);
    return e;
  }

  Tensor decode(const Encoded& encoded, std::span<const int> context_ids, std::size_t context_len,
                std::span<const int> query_positions, std::span<const std::uint8_t> allowed, num::Rng*) override {
    ++decode_calls;
    const std::size_t batch = encoded.batch;
    const std::size_t rows_per_sample = query_positions.size();
    std::vector<double> out;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t r = 0; r < rows_per_sample; ++r) {
        std::vector<int> visible;
        for (std::size_t j = 0; j < context_len; ++j) {
          bool ok = true;
          if (allowed.size() == rows_per_sample * context_len) ok = allowed[r * context_len + j] != 0;
          if (allowed.size() == batch * rows_per_sample * context_len) {
            ok = allowed[(b * rows_per_sample + r) * context_len + j] != 0;
          }
          visible.push_back(ok ? context_ids[b * context_len + j] : -1);
        }
        const auto row = rule_(b, query_positions[r % query_positions.size()], visible);
        out.insert(out.end(), row.begin(), row.end());
      }
    }
    return Tensor::from_values({out.size() / static_cast<std::size_t>(cfg_.num_classes()),
                                static_cast<std::size_t>(cfg_.num_classes())},
                               out, DType::f64);
  }

  int encode_calls = 0;
  int decode_calls = 0;

 private:
  model::ModelConfig cfg_;
  Rule rule_;
};

std::vector<double> one_hot(const model::ModelConfig& cfg, int id) {
  std::vector<double> v(static_cast<std::size_t>(cfg.num_classes()), 0.0);
  v[static_cast<std::size_t>(id)] = 5.0;
  return v;
}

// Forwards to a real model and counts encoder/decoder invocations.
class CountingModel final : public SequenceModel {
 public:
  explicit CountingModel(SequenceModel& inner) : inner_(inner) {}
  const model::ModelConfig& config() const override { return inner_.config(); }
  Encoded encode(const Tensor& images) override {
    ++encode_calls;
    return inner_.encode(images);
  }
  Tensor decode(const Encoded& encoded, std::span<const int> ids, std::size_t len, std::span<const int> q,
                std::span<const std::uint8_t> allowed, num::Rng* rng) override {
    ++decode_calls;
    return inner_.decode(encoded, ids, len, q, allowed, rng);
  }
  int encode_calls = 0;
  int decode_calls = 0;

 private:
  SequenceModel& inner_;
};

Dataset random_dataset(const model::ModelConfig& cfg, std::size_t n, num::Rng& rng) {
  const text::TokenCodec codec = codec_for(cfg);
  std::uniform_real_distribution<float> u(-1, 1);
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.pixels.resize(static_cast<std::size_t>(cfg.image_h * cfg.image_w * cfg.channels));
    for (auto& v : s.pixels) v = u(rng);
    s.label = random_label(codec, 1, cfg.max_len, rng);
    s.encoded = text::encode_label(s.label, codec);
    d.samples.push_back(std::move(s));
  }
  return d;
}

Dataset rendered_dataset(const model::ModelConfig& cfg, std::size_t n, std::uint64_t seed) {
  const text::TokenCodec codec = codec_for(cfg);
  std::mt19937_64 rng(seed);
  const auto labels = synth_labels(n, codec.charset(), LabelSource{2, cfg.max_len, 0}, rng);
  Dataset d;
  for (const auto& label : labels) {
    Sample s;
    s.pixels = to_model_input(render_label(label, cfg.image_w, cfg.image_h, rng), cfg.image_w, cfg.image_h,
                              cfg.channels);
    s.label = label;
    s.encoded = text::encode_label(label, codec);
    d.samples.push_back(std::move(s));
  }
  return d;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("permstr_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::size_t reference_levenshtein(const std::string& a, const std::string& b, std::size_t i, std::size_t j,
                                  std::map<std::pair<std::size_t, std::size_t>, std::size_t>& memo) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  const auto key = std::make_pair(i, j);
  if (const auto it = memo.find(key); it != memo.end()) return it->second;
  const std::size_t best = std::min({reference_levenshtein(a, b, i + 1, j, memo) + 1,
                                     reference_levenshtein(a, b, i, j + 1, memo) + 1,
                                     reference_levenshtein(a, b, i + 1, j + 1, memo) + (a[i] == b[j] ? 0 : 1)});
  memo[key] = best;
  return best;
}

}  // namespace

TEST_CASE("plm_loss with one permutation equals left-to-right cross-entropy") {
  const auto cfg = micro_config();
  const auto codec = codec_for(cfg);
  num::Rng rng(11);
  TransformerModel model(model::init_params(cfg, rng, DType::f64));
  for (int trial = 0; trial < 10; ++trial) {
    const auto labels = random_labels(codec, 3, rng);
    const Encoded enc = model.encode(random_images(cfg, 3, rng, DType::f64));
    std::vector<int> identity(static_cast<std::size_t>(longest_label(labels)));
    std::iota(identity.begin(), identity.end(), 1);
    const std::vector<perm::Permutation> perms{identity};
    num::Rng drop_a(trial), drop_b(trial);
    const double plm = plm_loss(model, enc, labels, perms, &drop_a).item();
    const double ref = reference_ar_loss(model, enc, labels, &drop_b).item();
    CHECK(plm == ref);
  }
}

TEST_CASE("plm_loss of a uniform decoder is ln(S+1)") {
  const auto cfg = micro_config();
  const auto codec = codec_for(cfg);
  StubModel stub(cfg, [&](std::size_t, int, std::span<const int>) {
    return std::vector<double>(static_cast<std::size_t>(cfg.num_classes()), 0.0);
  });
  num::Rng rng(2);
  const auto labels = random_labels(codec, 4, rng);
  const Encoded enc = stub.encode(random_images(cfg, 4, rng, DType::f64));
  const auto perms = perm::sample_permutations(6, longest_label(labels), rng);
  CHECK(plm_loss(stub, enc, labels, perms, nullptr).item() == doctest::Approx(std::log(cfg.num_classes())));
}

TEST_CASE("plm_loss with two permutations averages the per-permutation losses") {
  const auto cfg = micro_config();
  const auto codec = codec_for(cfg);
  num::Rng rng(5);
  TransformerModel model(model::init_params(cfg, rng, DType::f64));
  const auto labels = random_labels(codec, 2, rng);
  const Encoded enc = model.encode(random_images(cfg, 2, rng, DType::f64));
  const auto perms = perm::sample_permutations(2, longest_label(labels), rng);
  const double pair = plm_loss(model, enc, labels, perms, nullptr).item();

  // Each member of the pair scored on its own under the matching mask role.
  double sum = 0.0;
  const auto len = static_cast<std::size_t>(longest_label(labels) + 1);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto mask = perm::mask_from_permutation(perms[k], perm::role_for_index(k, 2));
    std::vector<int> context, targets;
    std::vector<std::uint8_t> allowed;
    for (const auto& l : labels) {
      const auto ids = std::span(l.context_ids).first(len);
      context.insert(context.end(), ids.begin(), ids.end());
      const auto r = perm::apply_context_restrictions(mask, ids, cfg.eos_id(), cfg.pad_id());
      allowed.insert(allowed.end(), r.bits().begin(), r.bits().end());
      targets.insert(targets.end(), l.target_ids.begin(), l.target_ids.begin() + static_cast<long>(len));
    }
    std::vector<int> positions(len);
    std::iota(positions.begin(), positions.end(), 0);
    const Tensor logits = model.decode(enc, context, len, positions, allowed, nullptr);
    sum += num::masked_cross_entropy(logits, targets, cfg.pad_id()).item();
  }
  CHECK(pair == doctest::Approx(sum / 2).epsilon(1e-12));
}

TEST_CASE("plm_loss rejects mismatched inputs") {
  const auto cfg = micro_config();
  const auto codec = codec_for(cfg);
  num::Rng rng(1);
  TransformerModel model(model::init_params(cfg, rng, DType::f64));
  const auto labels = random_labels(codec, 2, rng);
  const Encoded enc = model.encode(random_images(cfg, 2, rng, DType::f64));
  const std::vector<perm::Permutation> wrong{perm::Permutation(static_cast<std::size_t>(longest_label(labels) + 1))};
  CHECK_THROWS_AS(plm_loss(model, enc, labels, wrong, nullptr), DimensionError);
  CHECK_THROWS_AS(plm_loss(model, enc, std::span(labels).first(1), {}, nullptr), DimensionError);
}

TEST_CASE("sequential and single-pass factorized likelihoods agree") {
  auto cfg = micro_config();
  cfg.dropout = 0.0;
  const auto codec = codec_for(cfg);
  num::Rng rng(21);
  TransformerModel model(model::init_params(cfg, rng, DType::f64));
  const Encoded enc = model.encode(random_images(cfg, 1, rng, DType::f64));
  const auto label = text::encode_label("1302", codec);
  const std::size_t len = 5;
  const auto classes = static_cast<std::size_t>(cfg.num_classes());
  perm::Permutation order{1, 2, 3, 4};
  std::vector<int> positions{0, 1, 2, 3, 4};
  do {
    const auto mask = perm::mask_from_permutation(order, perm::MaskRole::ltr_pair_first);
    const auto full = model.decode(enc, label.context_ids, len, positions, mask.bits(), nullptr).to_vector();
    double single = 0.0;
    double sequential = 0.0;
    for (std::size_t t = 0; t < len; ++t) {
      single += log_softmax_row(full, t, classes)[static_cast<std::size_t>(label.target_ids[t])];
    }
    for (std::size_t t = 0; t < len; ++t) {
      // Query t alone, seeing [B] and the characters that precede it in the order.
      const int query = static_cast<int>(t);
      std::vector<std::uint8_t> row(len, 0);
      row[0] = 1;
      if (t == 4) {
        std::fill(row.begin(), row.end(), 1);
      } else {
        for (int z : order) {
          if (z == static_cast<int>(t) + 1) break;
          row[static_cast<std::size_t>(z)] = 1;
        }
      }
      const auto logits = model.decode(enc, label.context_ids, len, std::span(&query, 1), row, nullptr).to_vector();
      sequential += log_softmax_row(logits, 0, classes)[static_cast<std::size_t>(label.target_ids[t])];
    }
    CHECK(std::abs(single - sequential) < 1e-6);
  } while (std::next_permutation(order.begin(), order.end()));
}

TEST_CASE("training step encodes each image batch once") {
  const auto cfg = micro_config();
  num::Rng rng(4);
  TransformerModel real(model::init_params(cfg, rng, DType::f64));
  CountingModel counting(real);
  const Dataset data = random_dataset(cfg, 6, rng);
  TrainConfig tcfg;
  tcfg.k = 6;
  tcfg.total_steps = 10;
  TrainState state(tcfg, data.size());
  const auto params = real.params().parameters();
  model::set_requires_grad(real.params(), true);
  const auto batch = next_batch(state, 4);
  train_step(counting, params, tcfg, state, data, batch);
  CHECK(counting.encode_calls == 1);
  CHECK(counting.decode_calls == 1);
  CHECK(state.step == 1);
}

TEST_CASE("AR decoding of a stub that emits [E] immediately yields an empty string") {
  const auto cfg = micro_config();
  const auto codec = codec_for(cfg);
  StubModel stub(cfg, [&](std::size_t, int, std::span<const int>) { return one_hot(cfg, cfg.eos_id()); });
  num::Rng rng(0);
  const Encoded enc = stub.encode(random_images(cfg, 2, rng, DType::f64));
  const auto out = decode_ar(stub, enc, 0);
  REQUIRE(out.size() == 2);
  CHECK(to_text(out[0], codec).empty());
  CHECK(out[0].probs.size() == 1);
  CHECK(stub.decode_calls == 1);
}

TEST_CASE("AR decoding stops at max_len when [E] never wins") {
  const auto cfg = micro_config();
  const auto codec = codec_for(cfg);
  StubModel stub(cfg, [&](std::size_t, int, std::span<const int>) { return one_hot(cfg, 2); });
  num::Rng rng(0);
  const Encoded enc = stub.encode(random_images(cfg, 1, rng, DType::f64));
  const auto out = decode_ar(stub, enc, 0);
  CHECK(to_text(out[0], codec) == std::string(static_cast<std::size_t>(cfg.max_len), '2'));
  CHECK(stub.decode_calls == cfg.max_len + 1);
}

TEST_CASE("NAR decoding makes one pass plus one per refinement") {
  const auto cfg = micro_config();
  StubModel stub(cfg, [&](std::size_t, int pos, std::span<const int>) {
    return one_hot(cfg, pos < 2 ? 1 : cfg.eos_id());
  });
  num::Rng rng(0);
  const Encoded enc = stub.encode(random_images(cfg, 3, rng, DType::f64));
  for (int iters : {0, 1, 2}) {
    stub.decode_calls = 0;
    const auto out = decode_nar(stub, enc, iters);
    CHECK(stub.decode_calls == 1 + iters);
    CHECK(out[2].ids == std::vector<int>{1, 1});
  }
  DecodeConfig defaults;
  defaults.scheme = Scheme::nar;
  CHECK(defaults.effective_refine_iters() == 2);
  defaults.scheme = Scheme::ar;
  CHECK(defaults.effective_refine_iters() == 1);
}

TEST_CASE("NAR queries see only [B]") {
  const auto cfg = micro_config();
  bool only_bos = true;
  StubModel stub(cfg, [&](std::size_t, int, std::span<const int> visible) {
    only_bos = only_bos && visible.size() == 1 && visible[0] == cfg.bos_id();
    return one_hot(cfg, cfg.eos_id());
  });
  num::Rng rng(0);
  decode_nar(stub, stub.encode(random_images(cfg, 2, rng, DType::f64)), 0);
  CHECK(only_bos);
}

TEST_CASE("refinement queries never see their own slot") {
  const auto cfg = micro_config();
  bool leaked = false;
  StubModel stub(cfg, [&](std::size_t, int pos, std::span<const int> visible) {
    if (pos < cfg.max_len && visible[static_cast<std::size_t>(pos) + 1] != -1) leaked = true;
    return one_hot(cfg, pos < 3 ? 0 : cfg.eos_id());
  });
  num::Rng rng(0);
  const Encoded enc = stub.encode(random_images(cfg, 1, rng, DType::f64));
  const auto out = refine(stub, enc, DecodeResult{Prediction{{0, 1, 2}, {1, 1, 1, 1}}});
  CHECK_FALSE(leaked);
  CHECK(out[0].ids == std::vector<int>{0, 0, 0});
}

TEST_CASE("greedy AR decoding is idempotent under forced context") {
  auto cfg = micro_config();
  cfg.dropout = 0.0;
  num::Rng rng(8);
  TransformerModel model(model::init_params(cfg, rng, DType::f64));
  // Sharpen the head so predictions are decisive and varied.
  Tensor head = model.params().head_w;
  for (std::size_t i = 0; i < head.numel(); ++i) head.set_value(i, head.value(i) * 400.0);
  const Encoded enc = model.encode(random_images(cfg, 4, rng, DType::f64));
  const auto first = decode_ar(model, enc, 0);
  for (std::size_t b = 0; b < first.size(); ++b) {
    const auto& ids = first[b].ids;
    // Forced context: [B] then the decoded characters, lookahead mask.
    const std::size_t len = ids.size() + 1;
    std::vector<int> context{cfg.bos_id()};
    context.insert(context.end(), ids.begin(), ids.end());
    std::vector<int> positions(len);
    std::iota(positions.begin(), positions.end(), 0);
    const perm::AttentionMask causal = perm::lookahead_mask(static_cast<int>(len) - 1);
    // Reuse sample b's features by decoding the batch with identical contexts.
    std::vector<int> batch_context;
    for (std::size_t i = 0; i < enc.batch; ++i) batch_context.insert(batch_context.end(), context.begin(), context.end());
    const auto logits =
        model.decode(enc, batch_context, len, positions, causal.bits(), nullptr).to_vector();
    const auto classes = static_cast<std::size_t>(cfg.num_classes());
    std::vector<int> again;
    for (std::size_t t = 0; t < len; ++t) {
      const auto begin = logits.begin() + static_cast<long>((b * len + t) * classes);
      const int id = static_cast<int>(std::max_element(begin, begin + static_cast<long>(classes)) - begin);
      if (id == cfg.eos_id() || static_cast<int>(t) == cfg.max_len) break;
      again.push_back(id);
    }
    CHECK(again == ids);
  }
}

TEST_CASE("charset restriction never emits characters outside the active slice") {
  const auto cfg = micro_config();
  // Prefers the highest character id, then [E].
  StubModel stub(cfg, [&](std::size_t, int pos, std::span<const int>) {
    std::vector<double> v(static_cast<std::size_t>(cfg.num_classes()));
    for (int c = 0; c < cfg.charset_size; ++c) v[static_cast<std::size_t>(c)] = c;
    v[static_cast<std::size_t>(cfg.eos_id())] = pos >= 3 ? 100.0 : -1.0;
    return v;
  });
  num::Rng rng(0);
  const Encoded enc = stub.encode(random_images(cfg, 2, rng, DType::f64));
  for (Scheme scheme : {Scheme::ar, Scheme::nar}) {
    for (int active : {1, 2, 3}) {
      DecodeConfig d;
      d.scheme = scheme;
      d.active_charset = active;
      for (const auto& p : decode(stub, enc, d)) {
        CHECK(p.ids.size() == 3);
        for (int id : p.ids) CHECK(id == active - 1);
      }
    }
  }
}

TEST_CASE("confidence is the product of per-position probabilities including [E]") {
  Prediction p{{1, 2}, {0.5, 0.5, 0.8}};
  CHECK(p.confidence() == doctest::Approx(0.2));
}

TEST_CASE("metric examples") {
  CHECK(levenshtein("abc", "abd") == 1);
  CHECK(levenshtein("", "abc") == 3);
  CHECK(levenshtein("kitten", "sitting") == 3);
  const std::vector<std::string> preds{"abc", "abd", ""};
  const std::vector<std::string> gts{"abc", "abc", ""};
  const Metrics m = compute_metrics(preds, gts);
  CHECK(m.word_accuracy == doctest::Approx(2.0 / 3.0));
  CHECK(m.one_minus_ned == doctest::Approx((1.0 + 2.0 / 3.0 + 1.0) / 3.0));
  CHECK_THROWS_AS(compute_metrics(std::span(preds).first(2), gts), ContractError);
}

TEST_CASE("metrics match brute-force oracles on random pairs") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> len(0, 7);
  std::uniform_int_distribution<int> ch(0, 3);
  std::vector<std::string> preds, gts;
  for (int i = 0; i < 1000; ++i) {
    std::string a, b;
    for (int n = len(rng); n > 0; --n) a += static_cast<char>('a' + ch(rng));
    for (int n = len(rng); n > 0; --n) b += static_cast<char>('a' + ch(rng));
    preds.push_back(a);
    gts.push_back(b);
  }
  double exact = 0.0;
  double sim = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
    const std::size_t d = reference_levenshtein(preds[i], gts[i], 0, 0, memo);
    CHECK(levenshtein(preds[i], gts[i]) == d);
    const std::size_t longer = std::max(preds[i].size(), gts[i].size());
    exact += preds[i] == gts[i] ? 1.0 : 0.0;
    sim += longer == 0 ? 1.0 : 1.0 - static_cast<double>(d) / static_cast<double>(longer);
  }
  const Metrics m = compute_metrics(preds, gts);
  CHECK(m.word_accuracy == exact / 1000.0);
  CHECK(m.one_minus_ned == sim / 1000.0);
}

TEST_CASE("image conversion and resizing") {
  Image gray{4, 3, 1, std::vector<std::uint8_t>(12, 128)};
  const Image resized = resize_bilinear(gray, 7, 5);
  CHECK(resized.width == 7);
  CHECK(resized.height == 5);
  CHECK(std::all_of(resized.pixels.begin(), resized.pixels.end(), [](auto v) { return v == 128; }));

  Image one{1, 1, 1, {200}};
  const Image big = resize_bilinear(one, 3, 2);
  CHECK(std::all_of(big.pixels.begin(), big.pixels.end(), [](auto v) { return v == 200; }));

  Image extremes{2, 1, 1, {0, 255}};
  const auto in = to_model_input(extremes, 2, 1, 1);
  CHECK(in[0] == -1.0f);
  CHECK(in[1] == 1.0f);

  Image rgb{1, 1, 3, {255, 255, 255}};
  const auto as_gray = to_model_input(rgb, 1, 1, 1);
  CHECK(as_gray.size() == 1);
  CHECK(as_gray[0] == doctest::Approx(1.0));
  const auto as_rgb = to_model_input(Image{1, 1, 1, {0}}, 1, 1, 3);
  CHECK(as_rgb == std::vector<float>{-1.0f, -1.0f, -1.0f});
}

TEST_CASE("PNM read/write round trip and errors") {
  const fs::path dir = scratch_dir("pnm");
  Image gray{3, 2, 1, {0, 10, 20, 30, 40, 255}};
  write_pnm(dir / "g.pgm", gray);
  const Image g = read_pnm(dir / "g.pgm");
  CHECK(g.width == 3);
  CHECK(g.height == 2);
  CHECK(g.channels == 1);
  CHECK(g.pixels == gray.pixels);

  Image color{1, 2, 3, {1, 2, 3, 4, 5, 6}};
  write_pnm(dir / "c.ppm", color);
  CHECK(read_pnm(dir / "c.ppm").pixels == color.pixels);

  {
    std::ofstream out(dir / "comment.pgm", std::ios::binary);
    out << "P5\n# note\n2 1\n# another\n15\n";
    out.put(static_cast<char>(0));
    out.put(static_cast<char>(15));
  }
  const Image c = read_pnm(dir / "comment.pgm");
  CHECK(c.pixels == std::vector<std::uint8_t>{0, 255});

  {
    std::ofstream out(dir / "bad.pgm", std::ios::binary);
    out << "P2\n1 1\n255\n0\n";
  }
  CHECK_THROWS_AS(read_pnm(dir / "bad.pgm"), DataError);
  {
    std::ofstream out(dir / "short.pgm", std::ios::binary);
    out << "P5\n4 4\n255\n";
    out.put('x');
  }
  CHECK_THROWS_AS(read_pnm(dir / "short.pgm"), DataError);
  CHECK_THROWS_AS(read_pnm(dir / "missing.pgm"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("manifest round trip and dataset loading") {
  const fs::path dir = scratch_dir("manifest");
  fs::create_directories(dir / "img");
  const auto cfg = model::ModelConfig::from_preset("tiny64", 36);
  const text::TokenCodec codec(text::charset_slice(36), cfg.max_len);
  std::vector<ManifestRow> rows;
  const std::vector<std::string> labels{"Hello", "a b", "", "waytoolongforit", "Straße"};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const fs::path p = dir / "img" / ("s" + std::to_string(i) + ".pgm");
    write_pnm(p, Image{5, 3, 1, std::vector<std::uint8_t>(15, 100)});
    rows.push_back({p, labels[i]});
  }
  write_manifest(dir / "manifest.tsv", rows);
  const auto back = read_manifest(dir / "manifest.tsv");
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(fs::equivalent(back[i].image, rows[i].image));
    CHECK(back[i].label == rows[i].label);
  }
  const Dataset data = load_dataset(back, cfg, codec);
  CHECK(data.size() == 3);
  CHECK(data.rejected_empty == 1);
  CHECK(data.rejected_too_long == 1);
  CHECK(data.samples[0].label == "hello");
  CHECK(data.samples[1].label == "ab");
  CHECK(data.samples[2].label == "strae");
  CHECK(data.samples[0].pixels.size() == 64 * 16);

  const std::vector<std::size_t> pick{2, 0};
  const Tensor images = batch_images(data, pick, cfg, DType::f32);
  CHECK(images.shape() == num::Shape{2, 16, 64, 1});

  {
    std::ofstream out(dir / "broken.tsv");
    out << "img/nothere.pgm\tabc\n";
  }
  CHECK_THROWS_AS(read_manifest(dir / "broken.tsv"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("synthetic corpus is deterministic and renders valid labels") {
  const text::Charset cs = text::charset_slice(36);
  auto make = [&](const fs::path& dir) {
    std::mt19937_64 rng(17);
    const auto labels = synth_labels(20, cs, LabelSource{2, 8, 0}, rng);
    return std::make_pair(labels, render_synthetic(labels, rng, dir, 64, 16));
  };
  const fs::path a = scratch_dir("synth_a");
  const fs::path b = scratch_dir("synth_b");
  const auto [labels_a, rows_a] = make(a);
  const auto [labels_b, rows_b] = make(b);
  CHECK(labels_a == labels_b);
  CHECK(rows_a.size() == 20);
  CHECK(read_manifest(a / "manifest.tsv").size() == 20);
  auto bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  CHECK(bytes(a / "manifest.tsv") == bytes(b / "manifest.tsv"));
  for (std::size_t i = 0; i < rows_a.size(); ++i) {
    CHECK(bytes(rows_a[i].image) == bytes(rows_b[i].image));
    const auto outcome = text::preprocess_label(rows_a[i].label, cs, 8);
    CHECK(outcome.accepted());
    CHECK(outcome.label == rows_a[i].label);
    const Image img = read_pnm(rows_a[i].image);
    CHECK(img.width == 64);
    CHECK(img.height == 16);
  }

  std::mt19937_64 rng(3);
  const auto lex = synth_labels(200, cs, LabelSource{2, 8, 50}, rng);
  CHECK(std::set<std::string>(lex.begin(), lex.end()).size() <= 50);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("glyphs are distinct and unknown characters are rejected") {
  std::set<std::array<std::uint8_t, kGlyphWidth>> seen;
  for (char c = 0x21; c < 0x7f; ++c) {
    const auto* g = glyph(c);
    REQUIRE(g != nullptr);
    seen.insert(*g);
  }
  CHECK(seen.size() == 94);
  CHECK(glyph(' ') == nullptr);
  std::mt19937_64 rng(0);
  CHECK_THROWS_AS(render_label("a\x01", 64, 16, rng), DataError);
  const Image img = render_label("ab", 64, 16, rng);
  CHECK(img.pixels.size() == 64 * 16);
  CHECK(std::set<std::uint8_t>(img.pixels.begin(), img.pixels.end()).size() == 2);
}

TEST_CASE("a few hundred steps reduce the loss on a tiny corpus") {
  auto cfg = micro_config();
  cfg.dropout = 0.0;
  num::Rng rng(6);
  TransformerModel model(model::init_params(cfg, rng, DType::f32));
  const Dataset data = random_dataset(cfg, 8, rng);
  TrainConfig tcfg;
  tcfg.k = 6;
  tcfg.total_steps = 200;
  tcfg.max_lr = 3e-3;
  TrainState state(tcfg, data.size());
  const auto params = model.params().parameters();
  model::set_requires_grad(model.params(), true);
  double first = 0.0, last = 0.0;
  for (int s = 0; s < tcfg.total_steps; ++s) {
    const auto batch = next_batch(state, 8);
    const double loss = train_step(model, params, tcfg, state, data, batch);
    if (s < 10) first += loss / 10;
    if (s >= 190) last += loss / 10;
  }
  CHECK(last < 0.5 * first);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto cfg = model::ModelConfig::from_preset("tiny64", 36);
  const Dataset data = rendered_dataset(cfg, 8, 1);
  TrainConfig tcfg;
  tcfg.batch_size = 4;
  tcfg.total_steps = 8;
  tcfg.val_every = 4;
  tcfg.seed = 7;
  const auto run = [&] { return train_loop(tcfg, data, &data, nullptr); };
  const TrainResult a = run();
  const TrainResult b = run();
  const auto pa = a.params.parameters();
  const auto pb = b.params.parameters();
  REQUIRE(pa.size() == pb.size());
  bool identical = true;
  for (std::size_t i = 0; i < pa.size(); ++i) identical = identical && pa[i].tensor.to_vector() == pb[i].tensor.to_vector();
  CHECK(identical);
  CHECK(a.log.size() == 2);
  CHECK(a.log[0].loss == b.log[0].loss);
  // Snapshots at steps 6 and 7 (start ceil(0.75·8) = 6, final step).
  CHECK(a.swa_snapshots == 2);

  tcfg.seed = 8;
  const TrainResult c = train_loop(tcfg, data, nullptr, nullptr);
  CHECK(c.params.head_w.to_vector() != a.params.head_w.to_vector());
}

TEST_CASE("schedule switches to the constant SWA rate") {
  TrainConfig cfg;
  CHECK(cfg.swa_start_step() == 2250);
  cfg.total_steps = 10;
  CHECK(cfg.swa_start_step() == 8);
  TrainState state(cfg, 4);
  CHECK(lr_for_step(cfg, state, 8) == doctest::Approx(cfg.max_lr * 0.05));
  CHECK(lr_for_step(cfg, state, 9) == doctest::Approx(cfg.max_lr * 0.05));
  CHECK(lr_for_step(cfg, state, 7) != doctest::Approx(cfg.max_lr * 0.05));
  cfg.k = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("next_batch covers the whole set before repeating") {
  TrainConfig cfg;
  TrainState state(cfg, 10);
  std::vector<std::size_t> seen;
  for (int i = 0; i < 5; ++i) {
    const auto b = next_batch(state, 2);
    seen.insert(seen.end(), b.begin(), b.end());
  }
  std::sort(seen.begin(), seen.end());
  std::vector<std::size_t> all(10);
  std::iota(all.begin(), all.end(), std::size_t{0});
  CHECK(seen == all);
}

TEST_CASE("evaluation reports and cloze accuracy") {
  const auto cfg = micro_config();
  const auto codec = codec_for(cfg);
  num::Rng rng(3);
  Dataset data = random_dataset(cfg, 5, rng);
  // Always answers "01".
  StubModel stub(cfg, [&](std::size_t, int pos, std::span<const int>) {
    return one_hot(cfg, pos < 2 ? pos : cfg.eos_id());
  });
  data.samples[0].label = "01";
  data.samples[0].encoded = text::encode_label("01", codec);
  DecodeConfig d;
  d.scheme = Scheme::nar;
  const EvalReport report = evaluate(stub, data, d, 0, 2);
  CHECK(report.records.size() == 5);
  CHECK(report.records[0].prediction == "01");
  CHECK(report.word_accuracy >= 0.2);
  CHECK(report.scheme == "nar");
  CHECK(report.refine_iters == 2);
  std::ostringstream out;
  write_report(out, report);
  CHECK(out.str().find("record\t") != std::string::npos);
  CHECK(evaluate(stub, data, d, 2).records.size() == 2);
}

TEST_CASE("forced-length wrapper controls output length") {
  auto cfg = micro_config();
  cfg.dropout = 0.0;
  num::Rng rng(1);
  TransformerModel model(model::init_params(cfg, rng, DType::f32));
  const Tensor image = random_images(cfg, 1, rng, DType::f32);
  for (int length : {0, 2, 4}) {
    ForcedLengthModel forced(model, length);
    const Encoded enc = forced.encode(image);
    CHECK(decode_ar(forced, enc, 1)[0].ids.size() == static_cast<std::size_t>(length));
    CHECK(decode_nar(forced, enc, 2)[0].ids.size() == static_cast<std::size_t>(length));
  }
  const std::vector<int> lengths{1, 3};
  const auto rows = latency_bench(model, image, lengths, 2);
  CHECK(rows.size() == 4);
  std::ostringstream out;
  write_latency(out, rows);
  CHECK(out.str().find("latency 3 nar") != std::string::npos);
  const std::vector<int> bad{9};
  CHECK_THROWS_AS(latency_bench(model, image, bad, 1), ConfigError);

  const std::vector<double> x{1, 2, 3, 4};
  const std::vector<double> y{3, 5, 7, 9};
  const LineFit fit = fit_line(x, y);
  CHECK(fit.slope == doctest::Approx(2.0));
  CHECK(fit.intercept == doctest::Approx(1.0));
  CHECK(fit.r2 == doctest::Approx(1.0));
}
