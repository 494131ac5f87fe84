// SPDX-License-Identifier: Apache-2.0
#include <charconv>
#include <fstream>
#include <sstream>

#include "permstr/cli/cli.hpp"
#include "permstr/errors.hpp"

namespace permstr::cli {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc{} || res.ptr != value.data() + value.size()) {
    throw UsageError("key '" + key + "' expects a number, got '" + value + "'");
  }
  return out;
}

}  // namespace

CliConfig::CliConfig(std::vector<KeySpec> keys) : keys_(std::move(keys)) {
  for (const auto& k : keys_) values_.push_back(k.default_value);
}

std::size_t CliConfig::index_of(std::string_view key) const {
  for (std::size_t i = 0; i < keys_.size(); ++i) {
    if (keys_[i].name == key) return i;
  }
  std::string valid;
  for (const auto& k : keys_) valid += (valid.empty() ? "" : ", ") + k.name;
  throw UsageError("unknown key '" + std::string(key) + "' (valid keys: " + valid + ")");
}

bool CliConfig::has_key(std::string_view key) const {
  for (const auto& k : keys_) {
    if (k.name == key) return true;
  }
  return false;
}

void CliConfig::set(const std::string& key, const std::string& value) {
  if (value.find('\n') != std::string::npos) {
    throw UsageError("value for '" + key + "' must be a single line");
  }
  values_[index_of(key)] = value;
}

void CliConfig::load_text(std::string_view text, const std::string& origin) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw UsageError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    }
    set(std::string(trim(body.substr(0, eq))), std::string(trim(body.substr(eq + 1))));
  }
}

void CliConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw UsageError("cannot read config file " + path.string());
  }
  std::ostringstream text;
  text << in.rdbuf();
  load_text(text.str(), path.string());
}

const std::string& CliConfig::get(const std::string& key) const { return values_[index_of(key)]; }

int CliConfig::get_int(const std::string& key) const { return parse_number<int>(key, get(key)); }

std::uint64_t CliConfig::get_u64(const std::string& key) const {
  return parse_number<std::uint64_t>(key, get(key));
}

double CliConfig::get_double(const std::string& key) const { return parse_number<double>(key, get(key)); }

bool CliConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError("key '" + key + "' expects true or false, got '" + v + "'");
}

std::vector<int> CliConfig::get_int_list(const std::string& key) const {
  const std::string& v = get(key);
  std::vector<int> out;
  if (v.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = v.find(',', start);
    const std::string item(trim(std::string_view(v).substr(start, comma == std::string::npos ? v.npos : comma - start)));
    out.push_back(parse_number<int>(key, item));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

void CliConfig::check_required() const {
  for (std::size_t i = 0; i < keys_.size(); ++i) {
    if (keys_[i].required && values_[i].empty()) {
      throw UsageError("missing required --" + keys_[i].name);
    }
  }
}

std::string CliConfig::echo() const {
  std::string out;
  for (std::size_t i = 0; i < keys_.size(); ++i) out += keys_[i].name + "=" + values_[i] + "\n";
  return out;
}

}  // namespace permstr::cli
