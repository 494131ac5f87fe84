// SPDX-License-Identifier: Apache-2.0
#include "permstr/textcodec/textcodec.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <cctype>

#include "permstr/errors.hpp"

namespace permstr::text {

namespace {

CaseMode derive_case_mode(const std::string& chars) {
  const bool has_lower =
      std::any_of(chars.begin(), chars.end(), [](char c) { return std::islower(c) != 0; });
  const bool has_upper =
      std::any_of(chars.begin(), chars.end(), [](char c) { return std::isupper(c) != 0; });
  if (has_lower && !has_upper) {
    return CaseMode::lower;
  }
  if (has_upper && !has_lower) {
    return CaseMode::upper;
  }
  return CaseMode::mixed;
}

// Whitespace removal, NFKD, and ASCII reduction.
std::string normalize_to_ascii(std::string_view raw) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfkd = icu::Normalizer2::getNFKDInstance(status);
  if (U_FAILURE(status)) {
    throw Error(std::string("ICU NFKD normalizer unavailable: ") + u_errorName(status));
  }
  const icu::UnicodeString input =
      icu::UnicodeString::fromUTF8(icu::StringPiece(raw.data(), static_cast<int32_t>(raw.size())));
  icu::UnicodeString stripped;
  for (int32_t i = 0; i < input.length();) {
    const UChar32 cp = input.char32At(i);
    if (!u_isUWhiteSpace(cp)) {
      stripped.append(cp);
    }
    i += U16_LENGTH(cp);
  }
  const icu::UnicodeString decomposed = nfkd->normalize(stripped, status);
  if (U_FAILURE(status)) {
    throw Error(std::string("NFKD normalization failed: ") + u_errorName(status));
  }
  std::string out;
  for (int32_t i = 0; i < decomposed.length();) {
    const UChar32 cp = decomposed.char32At(i);
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    }
    i += U16_LENGTH(cp);
  }
  return out;
}

}  // namespace

const std::string& Charset::canonical94() {
  static const std::string chars = [] {
    std::string s = "0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";
    for (int c = 0x21; c < 0x7f; ++c) {
      if (std::ispunct(c) != 0) {
        s.push_back(static_cast<char>(c));
      }
    }
    return s;
  }();
  return chars;
}

Charset::Charset(std::string chars)
    : chars_(std::move(chars)), case_mode_(derive_case_mode(chars_)), lookup_(256, -1) {
  for (std::size_t i = 0; i < chars_.size(); ++i) {
    auto& slot = lookup_[static_cast<unsigned char>(chars_[i])];
    if (slot != -1) {
      throw ConfigError(std::string("charset contains '") + chars_[i] + "' twice");
    }
    slot = static_cast<int>(i);
  }
}

std::optional<TokenId> Charset::id_of(char c) const {
  const int id = lookup_[static_cast<unsigned char>(c)];
  if (id < 0) {
    return std::nullopt;
  }
  return id;
}

Charset charset_slice(int size) {
  if (size != 36 && size != 62 && size != 94) {
    throw ConfigError("unsupported charset size " + std::to_string(size) +
                      " (expected 36, 62 or 94)");
  }
  return Charset(Charset::canonical94().substr(0, static_cast<std::size_t>(size)));
}

TokenCodec::TokenCodec(Charset charset, int max_len) : charset_(std::move(charset)), max_len_(max_len) {
  if (max_len_ < 1) {
    throw ConfigError("max label length must be positive");
  }
}

std::string to_string(RejectReason reason) {
  return reason == RejectReason::empty ? "empty" : "too-long";
}

LabelOutcome preprocess_label(std::string_view raw, const Charset& charset, int max_len) {
  std::string ascii = normalize_to_ascii(raw);
  switch (charset.case_mode()) {
    case CaseMode::lower:
      std::transform(ascii.begin(), ascii.end(), ascii.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      break;
    case CaseMode::upper:
      std::transform(ascii.begin(), ascii.end(), ascii.begin(),
                     [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
      break;
    case CaseMode::mixed:
      break;
  }
  std::string label;
  std::copy_if(ascii.begin(), ascii.end(), std::back_inserter(label),
               [&](char c) { return charset.contains(c); });
  LabelOutcome outcome;
  if (label.empty()) {
    outcome.rejected = RejectReason::empty;
  } else if (static_cast<int>(label.size()) > max_len) {
    outcome.rejected = RejectReason::too_long;
  }
  outcome.label = std::move(label);
  return outcome;
}

EncodedLabel encode_label(std::string_view label, const TokenCodec& codec) {
  const int t = codec.max_len();
  if (label.empty() || static_cast<int>(label.size()) > t) {
    throw ContractError("encode_label: label length " + std::to_string(label.size()) +
                        " outside [1, " + std::to_string(t) + "]");
  }
  EncodedLabel enc;
  enc.length = static_cast<int>(label.size());
  enc.context_ids.assign(static_cast<std::size_t>(t + 1), codec.pad_id());
  enc.target_ids.assign(static_cast<std::size_t>(t + 1), codec.pad_id());
  enc.context_ids[0] = codec.bos_id();
  for (std::size_t i = 0; i < label.size(); ++i) {
    const auto id = codec.charset().id_of(label[i]);
    if (!id) {
      throw ContractError(std::string("encode_label: character '") + label[i] +
                          "' is not in the charset");
    }
    enc.context_ids[i + 1] = *id;
    enc.target_ids[i] = *id;
  }
  enc.target_ids[label.size()] = codec.eos_id();
  return enc;
}

std::string decode_ids(std::span<const TokenId> ids, const TokenCodec& codec) {
  std::string out;
  for (TokenId id : ids) {
    if (id == codec.eos_id()) {
      break;
    }
    if (id < 0 || id >= codec.charset_size()) {
      throw DataError("decode_ids: malformed sequence, id " + std::to_string(id) +
                      " before [E]");
    }
    out.push_back(codec.charset().chars()[static_cast<std::size_t>(id)]);
  }
  return out;
}

}  // namespace permstr::text
