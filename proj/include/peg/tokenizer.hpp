#pragma once

#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "peg/error.hpp"

namespace peg {

using TokenId = std::int32_t;

/// Token ids into a vocabulary. Must be nonempty and in range to be encoded.
struct TokenSequence {
  std::vector<TokenId> tokens;

  std::size_t size() const noexcept { return tokens.size(); }
  bool empty() const noexcept { return tokens.empty(); }
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kMaskId = 1;
inline constexpr TokenId kUnknownId = 2;

/// Lowercased whitespace-delimited words with leading and trailing ASCII
/// punctuation stripped. Words made only of punctuation are dropped.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t b = i, e = j;
    while (b < e && std::ispunct(static_cast<unsigned char>(text[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(text[e - 1]))) --e;
    if (b < e) {
      std::string w(text.substr(b, e - b));
      for (char& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      words.push_back(std::move(w));
    }
    i = j;
  }
  return words;
}

/// Word vocabulary with reserved ids PAD=0, MASK=1, UNK=2.
class Vocabulary {
 public:
  Vocabulary() : tokens_{"<pad>", "<mask>", "<unk>"} {
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<TokenId>(i);
  }

  /// Builds a vocabulary from texts in first-seen order, so the result is
  /// deterministic for a fixed corpus order.
  static Vocabulary build(const std::vector<std::string>& texts, std::size_t max_size = 0) {
    Vocabulary v;
    for (const auto& t : texts) {
      for (auto& w : split_words(t)) {
        if (max_size != 0 && v.size() >= max_size) return v;
        v.add(w);
      }
    }
    return v;
  }

  static Vocabulary from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < 3 || tokens[0] != "<pad>" || tokens[1] != "<mask>" || tokens[2] != "<unk>") {
      throw ValidationError("vocabulary must start with <pad>, <mask>, <unk>");
    }
    Vocabulary v;
    v.tokens_.clear();
    v.index_.clear();
    for (auto& t : tokens) {
      if (v.index_.count(t)) throw ValidationError("duplicate vocabulary entry '" + t + "'");
      v.index_[t] = static_cast<TokenId>(v.tokens_.size());
      v.tokens_.push_back(std::move(t));
    }
    return v;
  }

  TokenId add(const std::string& word) {
    auto it = index_.find(word);
    if (it != index_.end()) return it->second;
    const auto id = static_cast<TokenId>(tokens_.size());
    tokens_.push_back(word);
    index_.emplace(word, id);
    return id;
  }

  TokenId id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnknownId : it->second;
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  /// Truncates to max_len tokens (0 = unlimited).
  TokenSequence encode(std::string_view text, std::size_t max_len = 0) const {
    TokenSequence seq;
    for (const auto& w : split_words(text)) {
      if (max_len != 0 && seq.size() >= max_len) break;
      seq.tokens.push_back(id(w));
    }
    return seq;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace peg
