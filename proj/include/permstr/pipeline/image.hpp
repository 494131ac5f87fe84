// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace permstr::pipeline {

// 8-bit raster, rows top to bottom, channels interleaved.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

// Binary PGM (P5) or PPM (P6) with maxval <= 255; smaller maxvals are
// rescaled to 255.
Image read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Image& image);

// Bilinear resize with half-pixel centres, aspect ratio ignored.
Image resize_bilinear(const Image& image, int width, int height);

// Resize, convert channels (luma for RGB to gray, replication for gray to
// RGB) and map byte 0..255 linearly onto -1..1. Output is H×W×C floats.
std::vector<float> to_model_input(const Image& image, int width, int height, int channels);

}  // namespace permstr::pipeline
