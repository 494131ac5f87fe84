// SPDX-License-Identifier: Apache-2.0
#include "permstr/pipeline/latency.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "permstr/errors.hpp"
#include "permstr/numerics/tape.hpp"

namespace permstr::pipeline {

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 == 1 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

}  // namespace

num::Tensor ForcedLengthModel::decode(const Encoded& encoded, std::span<const int> context_ids,
                                      std::size_t context_len, std::span<const int> query_positions,
                                      std::span<const std::uint8_t> allowed, num::Rng* dropout_rng) {
  const num::Tensor real = inner_.decode(encoded, context_ids, context_len, query_positions, allowed, dropout_rng);
  const model::ModelConfig& cfg = config();
  const auto classes = static_cast<std::size_t>(cfg.num_classes());
  std::vector<double> forced(real.numel(), 0.0);
  const std::size_t n = query_positions.size();
  for (std::size_t r = 0; r < real.dim(0); ++r) {
    const int position = query_positions[r % n];
    const int winner = position < length_ ? 0 : cfg.eos_id();
    forced[r * classes + static_cast<std::size_t>(winner)] = 10.0;
  }
  return num::Tensor::from_values(real.shape(), forced, real.dtype());
}

std::vector<LatencyRow> latency_bench(SequenceModel& model, const num::Tensor& image, std::span<const int> lengths,
                                      int reps) {
  if (reps < 1) {
    throw ConfigError("latency reps must be positive");
  }
  for (int length : lengths) {
    if (length < 0 || length > model.config().max_len) {
      throw ConfigError("forced length " + std::to_string(length) + " outside [0, max_len]");
    }
  }
  num::NoGradScope no_grad;
  const std::array<Scheme, 2> schemes{Scheme::ar, Scheme::nar};
  const std::size_t cells = lengths.size() * schemes.size();
  std::vector<std::vector<double>> times(cells), totals(cells);
  // Each rep sweeps every cell once, so a slow stretch of wall-clock time
  // is shared across cells instead of landing on one.
  for (int r = 0; r < reps; ++r) {
    for (std::size_t li = 0; li < lengths.size(); ++li) {
      ForcedLengthModel forced(model, lengths[li]);
      for (std::size_t si = 0; si < schemes.size(); ++si) {
        DecodeConfig cfg;
        cfg.scheme = schemes[si];
        const auto t0 = std::chrono::steady_clock::now();
        const Encoded enc = forced.encode(image);
        const auto t1 = std::chrono::steady_clock::now();
        const DecodeResult out = pipeline::decode(forced, enc, cfg);
        const auto t2 = std::chrono::steady_clock::now();
        times[li * schemes.size() + si].push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
        totals[li * schemes.size() + si].push_back(std::chrono::duration<double, std::milli>(t2 - t0).count());
        if (out.front().ids.size() != static_cast<std::size_t>(lengths[li])) {
          throw Error("forced-length decode produced " + std::to_string(out.front().ids.size()) + " characters");
        }
      }
    }
  }
  std::vector<LatencyRow> rows;
  for (std::size_t c = 0; c < cells; ++c) {
    const double mean = std::accumulate(times[c].begin(), times[c].end(), 0.0) / static_cast<double>(reps);
    rows.push_back({lengths[c / schemes.size()], schemes[c % schemes.size()], median_of(times[c]), mean,
                    median_of(totals[c])});
  }
  return rows;
}

void write_latency(std::ostream& out, std::span<const LatencyRow> rows) {
  char line[128];
  std::snprintf(line, sizeof(line), "%8s %6s %12s %12s %16s\n", "length", "scheme", "median_ms", "mean_ms",
                "total_median_ms");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%8d %6s %12.4f %12.4f %16.4f\n", r.length, to_string(r.scheme).c_str(),
                  r.median_ms, r.mean_ms, r.total_median_ms);
    out << line;
  }
  for (const auto& r : rows) {
    out << "latency " << r.length << ' ' << to_string(r.scheme) << ' ' << r.median_ms << ' ' << r.mean_ms << ' '
        << r.total_median_ms << '\n';
  }
}

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ContractError("fit_line needs at least two paired points");
  }
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LineFit fit;
  fit.slope = sxx > 0 ? sxy / sxx : 0.0;
  fit.intercept = my - fit.slope * mx;
  fit.r2 = (sxx > 0 && syy > 0) ? (sxy * sxy) / (sxx * syy) : 0.0;
  return fit;
}

}  // namespace permstr::pipeline
