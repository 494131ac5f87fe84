// SPDX-License-Identifier: Apache-2.0
// Layout:
//   permstr-checkpoint 1
//   config <key> <value>          one per ModelConfig field
//   meta <key> <value>            free-form, value runs to end of line
//   tensor <name> <d0>x<d1>.. <offset> <nbytes>
//   end
// followed by the payload: little-endian f32 values, tensors back to back,
// offsets counted from the first payload byte.
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "permstr/errors.hpp"
#include "permstr/model/model.hpp"

namespace permstr::model {

namespace {

constexpr const char* kMagic = "permstr-checkpoint";
constexpr int kVersion = 1;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<std::pair<std::string, std::string>> config_entries(const ModelConfig& c) {
  return {{"preset", c.preset},
          {"image_w", std::to_string(c.image_w)},
          {"image_h", std::to_string(c.image_h)},
          {"channels", std::to_string(c.channels)},
          {"patch_w", std::to_string(c.patch_w)},
          {"patch_h", std::to_string(c.patch_h)},
          {"d_model", std::to_string(c.d_model)},
          {"enc_depth", std::to_string(c.enc_depth)},
          {"enc_heads", std::to_string(c.enc_heads)},
          {"dec_heads", std::to_string(c.dec_heads)},
          {"d_mlp", std::to_string(c.d_mlp)},
          {"max_len", std::to_string(c.max_len)},
          {"charset_size", std::to_string(c.charset_size)},
          {"dropout", format_double(c.dropout)}};
}

int parse_int(const std::string& key, const std::string& value) {
  int out = 0;
  const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc{} || res.ptr != value.data() + value.size()) {
    throw DataError("checkpoint: bad integer for " + key + ": '" + value + "'");
  }
  return out;
}

ModelConfig config_from_entries(const std::map<std::string, std::string>& kv) {
  auto get = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) {
      throw DataError("checkpoint: missing config key " + key);
    }
    return it->second;
  };
  ModelConfig c;
  c.preset = get("preset");
  c.image_w = parse_int("image_w", get("image_w"));
  c.image_h = parse_int("image_h", get("image_h"));
  c.channels = parse_int("channels", get("channels"));
  c.patch_w = parse_int("patch_w", get("patch_w"));
  c.patch_h = parse_int("patch_h", get("patch_h"));
  c.d_model = parse_int("d_model", get("d_model"));
  c.enc_depth = parse_int("enc_depth", get("enc_depth"));
  c.enc_heads = parse_int("enc_heads", get("enc_heads"));
  c.dec_heads = parse_int("dec_heads", get("dec_heads"));
  c.d_mlp = parse_int("d_mlp", get("d_mlp"));
  c.max_len = parse_int("max_len", get("max_len"));
  c.charset_size = parse_int("charset_size", get("charset_size"));
  const std::string& drop = get("dropout");
  const auto res = std::from_chars(drop.data(), drop.data() + drop.size(), c.dropout);
  if (res.ec != std::errc{}) {
    throw DataError("checkpoint: bad dropout '" + drop + "'");
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: invalid config: ") + e.what());
  }
  return c;
}

std::string shape_token(const num::Shape& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

void append_le_f32(std::string& out, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>(bits & 0xffu));
    bits >>= 8;
  }
}

float read_le_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<float>(bits);
}

bool valid_meta(const std::string& s) { return s.find('\n') == std::string::npos; }

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const std::map<std::string, std::string>& metadata) {
  std::string header = std::string(kMagic) + " " + std::to_string(kVersion) + "\n";
  for (const auto& [k, v] : config_entries(params.config)) header += "config " + k + " " + v + "\n";
  for (const auto& [k, v] : metadata) {
    if (k.empty() || k.find(' ') != std::string::npos || !valid_meta(k) || !valid_meta(v)) {
      throw ContractError("checkpoint metadata key/value must be single-line, key without spaces: " + k);
    }
    header += "meta " + k + " " + v + "\n";
  }
  std::string payload;
  for (const auto& p : params.parameters()) {
    const std::size_t offset = payload.size();
    for (double v : p.tensor.to_vector()) append_le_f32(payload, static_cast<float>(v));
    header += "tensor " + p.name + " " + shape_token(p.tensor.shape()) + " " + std::to_string(offset) +
              " " + std::to_string(payload.size() - offset) + "\n";
  }
  header += "end\n";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw DataError("cannot write checkpoint " + path.string());
  }
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) {
    throw DataError("failed writing checkpoint " + path.string());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("cannot open checkpoint " + path.string());
  }
  const std::string where = "checkpoint " + path.string() + ": ";
  std::string line;
  if (!std::getline(in, line) || line != std::string(kMagic) + " " + std::to_string(kVersion)) {
    throw DataError(where + "not a version " + std::to_string(kVersion) + " checkpoint");
  }
  struct Entry {
    num::Shape shape;
    std::size_t offset = 0;
    std::size_t nbytes = 0;
  };
  std::map<std::string, std::string> config;
  Checkpoint ckpt;
  std::map<std::string, Entry> index;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    const auto space = line.find(' ');
    const std::string kind = line.substr(0, space);
    const std::string rest = space == std::string::npos ? "" : line.substr(space + 1);
    const auto split = rest.find(' ');
    const std::string key = rest.substr(0, split);
    const std::string value = split == std::string::npos ? "" : rest.substr(split + 1);
    if (kind == "config") {
      config[key] = value;
    } else if (kind == "meta") {
      ckpt.metadata[key] = value;
    } else if (kind == "tensor") {
      std::istringstream fields(value);
      std::string shape;
      Entry e;
      if (!(fields >> shape >> e.offset >> e.nbytes)) {
        throw DataError(where + "malformed tensor line '" + line + "'");
      }
      std::size_t start = 0;
      while (start <= shape.size()) {
        const auto x = shape.find('x', start);
        e.shape.push_back(static_cast<std::size_t>(
            parse_int(key, shape.substr(start, x == std::string::npos ? std::string::npos : x - start))));
        if (x == std::string::npos) break;
        start = x + 1;
      }
      index[key] = e;
    } else {
      throw DataError(where + "unexpected header line '" + line + "'");
    }
  }
  if (!ended) {
    throw DataError(where + "header not terminated");
  }
  const std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  num::Rng rng(0);
  ckpt.params = init_params(config_from_entries(config), rng, num::DType::f32);
  std::size_t used = 0;
  for (auto& p : ckpt.params.parameters()) {
    const auto it = index.find(p.name);
    if (it == index.end()) {
      throw DataError(where + "missing tensor " + p.name);
    }
    const Entry& e = it->second;
    if (e.shape != p.tensor.shape() || e.nbytes != 4 * p.tensor.numel() ||
        e.offset + e.nbytes > payload.size()) {
      throw DataError(where + "tensor " + p.name + " has shape " + num::shape_string(e.shape) +
                      ", expected " + num::shape_string(p.tensor.shape()) + " within the payload");
    }
    auto dst = p.tensor.data<float>();
    const auto* src = reinterpret_cast<const unsigned char*>(payload.data() + e.offset);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = read_le_f32(src + 4 * i);
    ++used;
  }
  if (used != index.size()) {
    throw DataError(where + "contains tensors this configuration does not define");
  }
  return ckpt;
}

}  // namespace permstr::model
