// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace permstr::text {

using TokenId = int;

enum class CaseMode { lower, upper, mixed };

// Ordered character alphabet. Ids are positions in `chars()`.
class Charset {
 public:
  // digits, lowercase, uppercase, then ASCII punctuation in codepoint order.
  static const std::string& canonical94();

  explicit Charset(std::string chars);

  const std::string& chars() const { return chars_; }
  std::size_t size() const { return chars_.size(); }
  CaseMode case_mode() const { return case_mode_; }
  std::optional<TokenId> id_of(char c) const;
  bool contains(char c) const { return id_of(c).has_value(); }

 private:
  std::string chars_;
  CaseMode case_mode_;
  std::vector<int> lookup_;  // byte -> id or -1
};

// Prefix slice of the canonical ordering; size must be 36, 62 or 94.
Charset charset_slice(int size);

class TokenCodec {
 public:
  TokenCodec(Charset charset, int max_len);

  const Charset& charset() const { return charset_; }
  int max_len() const { return max_len_; }
  int charset_size() const { return static_cast<int>(charset_.size()); }
  TokenId eos_id() const { return charset_size(); }
  TokenId bos_id() const { return charset_size() + 1; }
  TokenId pad_id() const { return charset_size() + 2; }
  // Output head width: characters plus [E].
  int num_classes() const { return charset_size() + 1; }
  // Embedding table rows: characters plus [E], [B], [P].
  int vocab_size() const { return charset_size() + 3; }

 private:
  Charset charset_;
  int max_len_;
};

struct EncodedLabel {
  std::vector<TokenId> context_ids;  // [B] y1..yL [P]...   length T+1
  std::vector<TokenId> target_ids;   // y1..yL [E] [P]...   length T+1
  int length = 0;
};

enum class RejectReason { empty, too_long };

std::string to_string(RejectReason reason);

struct LabelOutcome {
  std::string label;
  std::optional<RejectReason> rejected;

  bool accepted() const { return !rejected.has_value(); }
};

// Whitespace removal, NFKD with non-ASCII code points dropped, case folding
// per charset, removal of characters outside the charset, then length
// filtering. Input is UTF-8.
LabelOutcome preprocess_label(std::string_view raw, const Charset& charset, int max_len);

EncodedLabel encode_label(std::string_view label, const TokenCodec& codec);

// Characters up to (not including) the first [E]; all ids if none.
std::string decode_ids(std::span<const TokenId> ids, const TokenCodec& codec);

}  // namespace permstr::text
