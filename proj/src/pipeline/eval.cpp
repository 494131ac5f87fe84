// SPDX-License-Identifier: Apache-2.0
#include "permstr/pipeline/eval.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <ostream>

#include "permstr/numerics/tape.hpp"

namespace permstr::pipeline {

namespace {

using DecodeFn = std::function<DecodeResult(const Encoded&, std::span<const std::size_t>)>;

EvalReport run(SequenceModel& model, const Dataset& data, std::size_t limit, std::size_t batch_size,
               const DecodeFn& decode_batch) {
  const model::ModelConfig& cfg = model.config();
  const text::TokenCodec codec(
      text::Charset(text::Charset::canonical94().substr(0, static_cast<std::size_t>(cfg.charset_size))), cfg.max_len);
  const std::size_t n = limit == 0 ? data.size() : std::min(limit, data.size());
  num::NoGradScope no_grad;
  EvalReport report;
  std::vector<std::string> preds;
  std::vector<std::string> gts;
  for (std::size_t start = 0; start < n; start += batch_size) {
    std::vector<std::size_t> indices(std::min(batch_size, n - start));
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = start + i;
    const auto t0 = std::chrono::steady_clock::now();
    const Encoded encoded = model.encode(batch_images(data, indices, cfg, num::DType::f32));
    const DecodeResult result = decode_batch(encoded, indices);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    for (std::size_t i = 0; i < indices.size(); ++i) {
      SampleRecord rec;
      rec.prediction = to_text(result[i], codec);
      rec.ground_truth = data.samples[indices[i]].label;
      rec.confidence = result[i].confidence();
      rec.latency_ms = ms / static_cast<double>(indices.size());
      preds.push_back(rec.prediction);
      gts.push_back(rec.ground_truth);
      report.records.push_back(std::move(rec));
    }
  }
  const Metrics m = compute_metrics(preds, gts);
  report.word_accuracy = m.word_accuracy;
  report.one_minus_ned = m.one_minus_ned;
  return report;
}

}  // namespace

EvalReport evaluate(SequenceModel& model, const Dataset& data, const DecodeConfig& cfg, std::size_t limit,
                    std::size_t batch_size) {
  cfg.validate();
  EvalReport report = run(model, data, limit, batch_size, [&](const Encoded& enc, std::span<const std::size_t>) {
    return decode(model, enc, cfg);
  });
  report.charset_size = cfg.active_charset > 0 ? cfg.active_charset : model.config().charset_size;
  report.scheme = to_string(cfg.scheme);
  report.refine_iters = cfg.effective_refine_iters();
  return report;
}

EvalReport evaluate_cloze(SequenceModel& model, const Dataset& data, std::size_t limit, std::size_t batch_size) {
  EvalReport report =
      run(model, data, limit, batch_size, [&](const Encoded& enc, std::span<const std::size_t> indices) {
        DecodeResult truth;
        for (std::size_t i : indices) {
          const auto& e = data.samples[i].encoded;
          Prediction p;
          p.ids.assign(e.target_ids.begin(), e.target_ids.begin() + e.length);
          truth.push_back(std::move(p));
        }
        return refine(model, enc, truth);
      });
  report.charset_size = model.config().charset_size;
  report.scheme = "cloze";
  report.refine_iters = 1;
  return report;
}

void write_report(std::ostream& out, const EvalReport& report) {
  for (std::size_t i = 0; i < report.records.size(); ++i) {
    const auto& r = report.records[i];
    out << "record\t" << i << '\t' << r.prediction << '\t' << r.ground_truth << '\t' << r.confidence << '\t'
        << r.latency_ms << '\n';
  }
  out << "samples " << report.records.size() << '\n'
      << "charset " << report.charset_size << '\n'
      << "scheme " << report.scheme << '\n'
      << "refine_iters " << report.refine_iters << '\n'
      << "word_accuracy " << report.word_accuracy << '\n'
      << "one_minus_ned " << report.one_minus_ned << '\n';
}

}  // namespace permstr::pipeline
