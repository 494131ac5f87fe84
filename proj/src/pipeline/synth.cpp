// SPDX-License-Identifier: Apache-2.0
#include "permstr/pipeline/synth.hpp"

#include <cstdio>

#include "permstr/errors.hpp"

namespace permstr::pipeline {

namespace {

using Glyph = std::array<std::uint8_t, kGlyphWidth>;

// Printable ASCII 0x21..0x7e.
constexpr std::array<Glyph, 94> kFont{{
    {0x00, 0x00, 0x5F, 0x00, 0x00},  // !
    {0x00, 0x07, 0x00, 0x07, 0x00},  // "
    {0x14, 0x7F, 0x14, 0x7F, 0x14},  // #
    {0x24, 0x2A, 0x7F, 0x2A, 0x12},  // $
    {0x23, 0x13, 0x08, 0x64, 0x62},  // %
    {0x36, 0x49, 0x55, 0x22, 0x50},  // &
    {0x00, 0x05, 0x03, 0x00, 0x00},  // '
    {0x00, 0x1C, 0x22, 0x41, 0x00},  // (
    {0x00, 0x41, 0x22, 0x1C, 0x00},  // )
    {0x08, 0x2A, 0x1C, 0x2A, 0x08},  // *
    {0x08, 0x08, 0x3E, 0x08, 0x08},  // +
    {0x00, 0x50, 0x30, 0x00, 0x00},  // ,
    {0x08, 0x08, 0x08, 0x08, 0x08},  // -
    {0x00, 0x60, 0x60, 0x00, 0x00},  // .
    {0x20, 0x10, 0x08, 0x04, 0x02},  // /
    {0x3E, 0x51, 0x49, 0x45, 0x3E},  // 0
    {0x00, 0x42, 0x7F, 0x40, 0x00},  // 1
    {0x42, 0x61, 0x51, 0x49, 0x46},  // 2
    {0x21, 0x41, 0x45, 0x4B, 0x31},  // 3
    {0x18, 0x14, 0x12, 0x7F, 0x10},  // 4
    {0x27, 0x45, 0x45, 0x45, 0x39},  // 5
    {0x3C, 0x4A, 0x49, 0x49, 0x30},  // 6
    {0x01, 0x71, 0x09, 0x05, 0x03},  // 7
    {0x36, 0x49, 0x49, 0x49, 0x36},  // 8
    {0x06, 0x49, 0x49, 0x29, 0x1E},  // 9
    {0x00, 0x36, 0x36, 0x00, 0x00},  // :
    {0x00, 0x56, 0x36, 0x00, 0x00},  // ;
    {0x08, 0x14, 0x22, 0x41, 0x00},  // <
    {0x14, 0x14, 0x14, 0x14, 0x14},  // =
    {0x00, 0x41, 0x22, 0x14, 0x08},  // >
    {0x02, 0x01, 0x51, 0x09, 0x06},  // ?
    {0x32, 0x49, 0x79, 0x41, 0x3E},  // @
    {0x7E, 0x11, 0x11, 0x11, 0x7E},  // A
    {0x7F, 0x49, 0x49, 0x49, 0x36},  // B
    {0x3E, 0x41, 0x41, 0x41, 0x22},  // C
    {0x7F, 0x41, 0x41, 0x22, 0x1C},  // D
    {0x7F, 0x49, 0x49, 0x49, 0x41},  // E
    {0x7F, 0x09, 0x09, 0x09, 0x01},  // F
    {0x3E, 0x41, 0x49, 0x49, 0x7A},  // G
    {0x7F, 0x08, 0x08, 0x08, 0x7F},  // H
    {0x00, 0x41, 0x7F, 0x41, 0x00},  // I
    {0x20, 0x40, 0x41, 0x3F, 0x01},  // J
    {0x7F, 0x08, 0x14, 0x22, 0x41},  // K
    {0x7F, 0x40, 0x40, 0x40, 0x40},  // L
    {0x7F, 0x02, 0x0C, 0x02, 0x7F},  // M
    {0x7F, 0x04, 0x08, 0x10, 0x7F},  // N
    {0x3E, 0x41, 0x41, 0x41, 0x3E},  // O
    {0x7F, 0x09, 0x09, 0x09, 0x06},  // P
    {0x3E, 0x41, 0x51, 0x21, 0x5E},  // Q
    {0x7F, 0x09, 0x19, 0x29, 0x46},  // R
    {0x46, 0x49, 0x49, 0x49, 0x31},  // S
    {0x01, 0x01, 0x7F, 0x01, 0x01},  // T
    {0x3F, 0x40, 0x40, 0x40, 0x3F},  // U
    {0x1F, 0x20, 0x40, 0x20, 0x1F},  // V
    {0x3F, 0x40, 0x38, 0x40, 0x3F},  // W
    {0x63, 0x14, 0x08, 0x14, 0x63},  // X
    {0x07, 0x08, 0x70, 0x08, 0x07},  // Y
    {0x61, 0x51, 0x49, 0x45, 0x43},  // Z
    {0x00, 0x7F, 0x41, 0x41, 0x00},  // [
    {0x02, 0x04, 0x08, 0x10, 0x20},  // backslash
    {0x00, 0x41, 0x41, 0x7F, 0x00},  // ]
    {0x04, 0x02, 0x01, 0x02, 0x04},  // ^
    {0x40, 0x40, 0x40, 0x40, 0x40},  // _
    {0x00, 0x01, 0x02, 0x04, 0x00},  // `
    {0x20, 0x54, 0x54, 0x54, 0x78},  // a
    {0x7F, 0x48, 0x44, 0x44, 0x38},  // b
    {0x38, 0x44, 0x44, 0x44, 0x20},  // c
    {0x38, 0x44, 0x44, 0x48, 0x7F},  // d
    {0x38, 0x54, 0x54, 0x54, 0x18},  // e
    {0x08, 0x7E, 0x09, 0x01, 0x02},  // f
    {0x0C, 0x52, 0x52, 0x52, 0x3E},  // g
    {0x7F, 0x08, 0x04, 0x04, 0x78},  // h
    {0x00, 0x44, 0x7D, 0x40, 0x00},  // i
    {0x20, 0x40, 0x44, 0x3D, 0x00},  // j
    {0x7F, 0x10, 0x28, 0x44, 0x00},  // k
    {0x00, 0x41, 0x7F, 0x40, 0x00},  // l
    {0x7C, 0x04, 0x18, 0x04, 0x78},  // m
    {0x7C, 0x08, 0x04, 0x04, 0x78},  // n
    {0x38, 0x44, 0x44, 0x44, 0x38},  // o
    {0x7C, 0x14, 0x14, 0x14, 0x08},  // p
    {0x08, 0x14, 0x14, 0x18, 0x7C},  // q
    {0x7C, 0x08, 0x04, 0x04, 0x08},  // r
    {0x48, 0x54, 0x54, 0x54, 0x20},  // s
    {0x04, 0x3F, 0x44, 0x40, 0x20},  // t
    {0x3C, 0x40, 0x40, 0x20, 0x7C},  // u
    {0x1C, 0x20, 0x40, 0x20, 0x1C},  // v
    {0x3C, 0x40, 0x30, 0x40, 0x3C},  // w
    {0x44, 0x28, 0x10, 0x28, 0x44},  // x
    {0x0C, 0x50, 0x50, 0x50, 0x3C},  // y
    {0x44, 0x64, 0x54, 0x4C, 0x44},  // z
    {0x00, 0x08, 0x36, 0x41, 0x00},  // {
    {0x00, 0x00, 0x7F, 0x00, 0x00},  // |
    {0x00, 0x41, 0x36, 0x08, 0x00},  // }
    {0x08, 0x04, 0x08, 0x10, 0x08},  // ~
}};

constexpr std::string_view kVowels = "aeiou";
constexpr std::string_view kConsonants = "bcdfghjklmnprstvwz";

int span_width(std::size_t chars, int scale) {
  return static_cast<int>(chars) * (kGlyphWidth + 1) * scale - scale;
}

std::string pseudo_word(int length, const text::Charset& charset, std::mt19937_64& rng) {
  auto from = [&](std::string_view pool) {
    return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
  };
  std::string word;
  bool vowel = std::bernoulli_distribution(0.3)(rng);
  while (static_cast<int>(word.size()) < length) {
    word.push_back(from(vowel ? kVowels : kConsonants));
    // Mostly alternating, with occasional consonant clusters.
    vowel = vowel ? false : std::bernoulli_distribution(0.8)(rng);
  }
  const auto& chars = charset.chars();
  std::uniform_real_distribution<double> u(0, 1);
  if (charset.case_mode() == text::CaseMode::upper) {
    for (auto& c : word) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  } else if (charset.case_mode() == text::CaseMode::mixed && u(rng) < 0.3) {
    word[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(word[0])));
  }
  // Occasional digits (and punctuation when available) keep every class in play.
  if (length > 2 && u(rng) < 0.2) {
    word.back() = chars[std::uniform_int_distribution<std::size_t>(0, 9)(rng)];
  }
  if (chars.size() > 62 && length > 2 && u(rng) < 0.15) {
    word.back() = chars[std::uniform_int_distribution<std::size_t>(62, chars.size() - 1)(rng)];
  }
  return word;
}

}  // namespace

const std::array<std::uint8_t, kGlyphWidth>* glyph(char c) {
  const auto u = static_cast<unsigned char>(c);
  if (u < 0x21 || u > 0x7e) {
    return nullptr;
  }
  return &kFont[u - 0x21];
}

Image render_label(const std::string& label, int canvas_w, int canvas_h, std::mt19937_64& rng) {
  if (label.empty()) {
    throw ContractError("render_label: empty label");
  }
  for (char c : label) {
    if (glyph(c) == nullptr) {
      throw DataError(std::string("render_label: no glyph for character '") + c + "'");
    }
  }
  std::vector<int> scales;
  for (int s : {1, 2}) {
    if (span_width(label.size(), s) <= canvas_w && kGlyphHeight * s <= canvas_h) scales.push_back(s);
  }
  if (scales.empty()) {
    throw DataError("render_label: '" + label + "' does not fit a " + std::to_string(canvas_w) + "x" +
                    std::to_string(canvas_h) + " canvas");
  }
  const int scale = scales[std::uniform_int_distribution<std::size_t>(0, scales.size() - 1)(rng)];
  const int x0 = std::uniform_int_distribution<int>(0, canvas_w - span_width(label.size(), scale))(rng);
  const int y0 = std::uniform_int_distribution<int>(0, canvas_h - kGlyphHeight * scale)(rng);
  const bool dark_on_light = std::bernoulli_distribution(0.5)(rng);
  const std::uint8_t ink = dark_on_light ? 0 : 255;
  Image img{canvas_w, canvas_h, 1,
            std::vector<std::uint8_t>(static_cast<std::size_t>(canvas_w) * canvas_h, dark_on_light ? 255 : 0)};
  for (std::size_t i = 0; i < label.size(); ++i) {
    const Glyph& g = *glyph(label[i]);
    const int left = x0 + static_cast<int>(i) * (kGlyphWidth + 1) * scale;
    for (int col = 0; col < kGlyphWidth; ++col) {
      for (int r = 0; r < kGlyphHeight; ++r) {
        if (((g[static_cast<std::size_t>(col)] >> r) & 1) == 0) continue;
        for (int dy = 0; dy < scale; ++dy) {
          for (int dx = 0; dx < scale; ++dx) {
            const int x = left + col * scale + dx;
            const int y = y0 + r * scale + dy;
            img.pixels[static_cast<std::size_t>(y) * canvas_w + x] = ink;
          }
        }
      }
    }
  }
  return img;
}

std::vector<std::string> synth_labels(std::size_t count, const text::Charset& charset, const LabelSource& source,
                                      std::mt19937_64& rng) {
  if (source.min_len < 1 || source.max_len < source.min_len) {
    throw ConfigError("synthetic label lengths must satisfy 1 <= min <= max");
  }
  std::uniform_int_distribution<int> length(source.min_len, source.max_len);
  std::vector<std::string> out;
  out.reserve(count);
  if (source.lexicon_size > 0) {
    std::vector<std::string> lexicon;
    for (int i = 0; i < source.lexicon_size; ++i) lexicon.push_back(pseudo_word(length(rng), charset, rng));
    std::uniform_int_distribution<std::size_t> pick(0, lexicon.size() - 1);
    for (std::size_t i = 0; i < count; ++i) out.push_back(lexicon[pick(rng)]);
    return out;
  }
  std::uniform_int_distribution<std::size_t> ch(0, charset.size() - 1);
  for (std::size_t i = 0; i < count; ++i) {
    std::string s;
    for (int n = length(rng); n > 0; --n) s.push_back(charset.chars()[ch(rng)]);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<ManifestRow> render_synthetic(const std::vector<std::string>& labels, std::mt19937_64& rng,
                                          const std::filesystem::path& out_dir, int canvas_w, int canvas_h) {
  std::filesystem::create_directories(out_dir / "images");
  std::vector<ManifestRow> rows;
  rows.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.pgm", i);
    const auto path = out_dir / "images" / name;
    write_pnm(path, render_label(labels[i], canvas_w, canvas_h, rng));
    rows.push_back({path, labels[i]});
  }
  write_manifest(out_dir / "manifest.tsv", rows);
  return rows;
}

}  // namespace permstr::pipeline
