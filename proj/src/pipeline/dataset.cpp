// SPDX-License-Identifier: Apache-2.0
#include "permstr/pipeline/dataset.hpp"

#include <fstream>

#include "permstr/errors.hpp"
#include "permstr/pipeline/image.hpp"

namespace permstr::pipeline {

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open manifest " + path.string());
  }
  const std::filesystem::path base = path.parent_path();
  std::vector<ManifestRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 'path<TAB>label'");
    }
    ManifestRow row{base / line.substr(0, tab), line.substr(tab + 1)};
    if (!std::filesystem::exists(row.image)) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": missing image " + row.image.string());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw DataError("cannot write manifest " + path.string());
  }
  const std::filesystem::path base = path.parent_path();
  for (const auto& row : rows) {
    if (row.label.find_first_of("\t\n") != std::string::npos) {
      throw ContractError("manifest labels cannot contain tabs or newlines");
    }
    out << std::filesystem::relative(row.image, base.empty() ? "." : base).generic_string() << '\t' << row.label
        << '\n';
  }
}

std::optional<Sample> load_sample(const ManifestRow& row, const model::ModelConfig& cfg,
                                  const text::TokenCodec& codec, text::RejectReason* why) {
  const auto outcome = text::preprocess_label(row.label, codec.charset(), codec.max_len());
  if (!outcome.accepted()) {
    if (why != nullptr) *why = *outcome.rejected;
    return std::nullopt;
  }
  Sample s;
  s.pixels = to_model_input(read_pnm(row.image), cfg.image_w, cfg.image_h, cfg.channels);
  s.label = outcome.label;
  s.encoded = text::encode_label(s.label, codec);
  return s;
}

Dataset load_dataset(std::span<const ManifestRow> rows, const model::ModelConfig& cfg,
                     const text::TokenCodec& codec) {
  Dataset data;
  for (const auto& row : rows) {
    text::RejectReason why{};
    auto sample = load_sample(row, cfg, codec, &why);
    if (sample) {
      data.samples.push_back(std::move(*sample));
    } else if (why == text::RejectReason::empty) {
      ++data.rejected_empty;
    } else {
      ++data.rejected_too_long;
    }
  }
  return data;
}

num::Tensor batch_images(const Dataset& data, std::span<const std::size_t> indices, const model::ModelConfig& cfg,
                         num::DType dtype) {
  const std::size_t per = static_cast<std::size_t>(cfg.image_h) * cfg.image_w * cfg.channels;
  std::vector<double> values;
  values.reserve(indices.size() * per);
  for (std::size_t i : indices) {
    const auto& px = data.samples.at(i).pixels;
    if (px.size() != per) {
      throw DimensionError("sample image does not match the model's input extents");
    }
    values.insert(values.end(), px.begin(), px.end());
  }
  return num::Tensor::from_values({indices.size(), static_cast<std::size_t>(cfg.image_h),
                                   static_cast<std::size_t>(cfg.image_w), static_cast<std::size_t>(cfg.channels)},
                                  values, dtype);
}

}  // namespace permstr::pipeline
