// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "permstr/pipeline/dataset.hpp"
#include "permstr/pipeline/image.hpp"
#include "permstr/textcodec/textcodec.hpp"

namespace permstr::pipeline {

inline constexpr int kGlyphWidth = 5;
inline constexpr int kGlyphHeight = 7;

// Five column bytes, bit 0 at the top. Null for characters without a glyph.
const std::array<std::uint8_t, kGlyphWidth>* glyph(char c);

// Label drawn with the built-in font at a random integer scale that fits
// (1 or 2), random offset and random polarity.
Image render_label(const std::string& label, int canvas_w, int canvas_h, std::mt19937_64& rng);

struct LabelSource {
  int min_len = 2;
  int max_len = 8;
  // Draw labels from a fixed list of this many pronounceable pseudo-words
  // (0: independent uniform characters).
  int lexicon_size = 0;
};

std::vector<std::string> synth_labels(std::size_t count, const text::Charset& charset, const LabelSource& source,
                                      std::mt19937_64& rng);

// Renders every label to out_dir/images/NNNNNN.pgm and writes
// out_dir/manifest.tsv. Deterministic for a given rng state.
std::vector<ManifestRow> render_synthetic(const std::vector<std::string>& labels, std::mt19937_64& rng,
                                          const std::filesystem::path& out_dir, int canvas_w, int canvas_h);

}  // namespace permstr::pipeline
