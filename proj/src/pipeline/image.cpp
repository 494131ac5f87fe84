// SPDX-License-Identifier: Apache-2.0
#include "permstr/pipeline/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

#include "permstr/errors.hpp"

namespace permstr::pipeline {

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in, const std::filesystem::path& path) {
  std::string token;
  int ch = 0;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(ch));
  }
  if (token.empty()) {
    throw DataError("truncated image header in " + path.string());
  }
  return token;
}

int header_int(std::istream& in, const std::filesystem::path& path) {
  const std::string token = header_token(in, path);
  try {
    std::size_t used = 0;
    const int v = std::stoi(token, &used);
    if (used != token.size() || v <= 0) throw std::invalid_argument(token);
    return v;
  } catch (const std::exception&) {
    throw DataError("bad image header field '" + token + "' in " + path.string());
  }
}

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("cannot open image " + path.string());
  }
  const std::string magic = header_token(in, path);
  Image img;
  if (magic == "P5") {
    img.channels = 1;
  } else if (magic == "P6") {
    img.channels = 3;
  } else {
    throw DataError("unsupported image format '" + magic + "' in " + path.string() +
                    " (expected binary PGM or PPM)");
  }
  img.width = header_int(in, path);
  img.height = header_int(in, path);
  const int maxval = header_int(in, path);
  if (maxval > 255) {
    throw DataError("16-bit images are not supported: " + path.string());
  }
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw DataError("truncated pixel data in " + path.string());
  }
  if (maxval != 255) {
    for (auto& p : img.pixels) {
      p = static_cast<std::uint8_t>(std::lround(std::min(p, static_cast<std::uint8_t>(maxval)) * 255.0 / maxval));
    }
  }
  return img;
}

void write_pnm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw ContractError("write_pnm: only 1 or 3 channels");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw DataError("cannot write image " + path.string());
  }
  out << (image.channels == 1 ? "P5" : "P6") << '\n' << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) {
    throw DataError("failed writing image " + path.string());
  }
}

namespace {

struct Tap {
  int lo = 0;
  int hi = 0;
  double t = 0.0;
};

std::vector<Tap> taps(int in, int out) {
  std::vector<Tap> result(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    const double src = std::clamp((i + 0.5) * ratio - 0.5, 0.0, static_cast<double>(in - 1));
    Tap& tap = result[static_cast<std::size_t>(i)];
    tap.lo = static_cast<int>(std::floor(src));
    tap.hi = std::min(tap.lo + 1, in - 1);
    tap.t = src - tap.lo;
  }
  return result;
}

// a + (b - a)·t, exact when a == b.
double lerp(double a, double b, double t) { return a + (b - a) * t; }

std::vector<double> resize_values(const Image& image, int width, int height) {
  if (image.width <= 0 || image.height <= 0 || width <= 0 || height <= 0) {
    throw ContractError("resize: extents must be positive");
  }
  const auto xs = taps(image.width, width);
  const auto ys = taps(image.height, height);
  const int c = image.channels;
  std::vector<double> out(static_cast<std::size_t>(width) * height * c);
  for (int y = 0; y < height; ++y) {
    const Tap& ty = ys[static_cast<std::size_t>(y)];
    for (int x = 0; x < width; ++x) {
      const Tap& tx = xs[static_cast<std::size_t>(x)];
      for (int ch = 0; ch < c; ++ch) {
        const double top = lerp(image.at(tx.lo, ty.lo, ch), image.at(tx.hi, ty.lo, ch), tx.t);
        const double bottom = lerp(image.at(tx.lo, ty.hi, ch), image.at(tx.hi, ty.hi, ch), tx.t);
        out[(static_cast<std::size_t>(y) * width + x) * c + ch] = lerp(top, bottom, ty.t);
      }
    }
  }
  return out;
}

}  // namespace

Image resize_bilinear(const Image& image, int width, int height) {
  const auto values = resize_values(image, width, height);
  Image out{width, height, image.channels, std::vector<std::uint8_t>(values.size())};
  for (std::size_t i = 0; i < values.size(); ++i) {
    out.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(values[i]), 0L, 255L));
  }
  return out;
}

std::vector<float> to_model_input(const Image& image, int width, int height, int channels) {
  if (channels != 1 && channels != 3) {
    throw ContractError("to_model_input: channels must be 1 or 3");
  }
  const auto values = resize_values(image, width, height);
  const std::size_t n = static_cast<std::size_t>(width) * height;
  std::vector<float> out(n * static_cast<std::size_t>(channels));
  auto normalize = [](double v) { return static_cast<float>(2.0 * v / 255.0 - 1.0); };
  for (std::size_t i = 0; i < n; ++i) {
    if (image.channels == channels) {
      for (int c = 0; c < channels; ++c) out[i * channels + c] = normalize(values[i * channels + c]);
    } else if (channels == 1) {
      const double* rgb = &values[i * 3];
      out[i] = normalize(0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]);
    } else {
      for (int c = 0; c < 3; ++c) out[i * 3 + c] = normalize(values[i]);
    }
  }
  return out;
}

}  // namespace permstr::pipeline
