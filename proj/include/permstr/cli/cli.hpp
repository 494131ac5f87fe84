// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace permstr::cli {

struct KeySpec {
  std::string name;
  std::string default_value;
  std::string help;
  bool required = false;
};

// Flat key=value configuration for one subcommand. Defaults are applied at
// construction; a file and then flags override them.
class CliConfig {
 public:
  explicit CliConfig(std::vector<KeySpec> keys);

  const std::vector<KeySpec>& keys() const { return keys_; }
  bool has_key(std::string_view key) const;

  // Unknown keys throw UsageError.
  void set(const std::string& key, const std::string& value);
  void load_text(std::string_view text, const std::string& origin);
  void load_file(const std::filesystem::path& path);

  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  // Throws UsageError naming the first required key left empty.
  void check_required() const;

  // One `key=value` line per key in table order; parses back to the same
  // configuration.
  std::string echo() const;

 private:
  std::vector<KeySpec> keys_;
  std::vector<std::string> values_;
  std::size_t index_of(std::string_view key) const;
};

// Subcommand names in display order.
const std::vector<std::string>& command_names();

// Key table for a subcommand; throws UsageError for an unknown name.
std::vector<KeySpec> command_keys(const std::string& command);

// Runs `permstr <args...>`. Returns 0 on success, 1 on usage errors and 2
// on data or model errors.
int run_command(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace permstr::cli
