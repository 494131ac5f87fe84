// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "permstr/model/model.hpp"
#include "permstr/textcodec/textcodec.hpp"

namespace permstr::pipeline {

// One manifest line: `relative/path<TAB>label`.
struct ManifestRow {
  std::filesystem::path image;  // resolved against the manifest's directory
  std::string label;
};

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);
// Writes paths relative to the manifest's directory.
void write_manifest(const std::filesystem::path& path, std::span<const ManifestRow> rows);

struct Sample {
  std::vector<float> pixels;  // H×W×C in [-1, 1]
  std::string label;          // preprocessed
  text::EncodedLabel encoded;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t rejected_empty = 0;
  std::size_t rejected_too_long = 0;

  std::size_t size() const { return samples.size(); }
  std::size_t rejected() const { return rejected_empty + rejected_too_long; }
};

// Reads, resizes and normalizes the image and preprocesses the label.
// Returns nullopt (and sets *why) when the label is rejected.
std::optional<Sample> load_sample(const ManifestRow& row, const model::ModelConfig& cfg,
                                  const text::TokenCodec& codec, text::RejectReason* why = nullptr);

Dataset load_dataset(std::span<const ManifestRow> rows, const model::ModelConfig& cfg, const text::TokenCodec& codec);

// [n × H × W × C] tensor for the chosen samples.
num::Tensor batch_images(const Dataset& data, std::span<const std::size_t> indices, const model::ModelConfig& cfg,
                         num::DType dtype);

}  // namespace permstr::pipeline
