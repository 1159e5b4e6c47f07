#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "degcg/core.hpp"

namespace degcg {

/// Greedy longest-match tokenizer over a fixed string vocabulary.
///
/// Decoding concatenates token strings. Encoding scans left to right and takes
/// the longest vocabulary entry matching at the cursor; characters that start
/// no entry are dropped. For vocabularies whose entries all share one length
/// (both bundled toy tokenizers) decode(encode(s)) == s for every s built from
/// vocabulary symbols.
class Tokenizer {
 public:
  Tokenizer(std::string id, std::vector<std::string> vocab,
            std::set<TokenId> special_ids = {});

  /// Single-character vocabulary "!abcdef..." truncated to `vocab_size`.
  static Tokenizer toy_chars(std::size_t vocab_size);
  /// Two-character vocabulary: every ordered pair over "!abc...", truncated to
  /// `vocab_size`. Disjoint from toy_chars and segments shared text
  /// differently.
  static Tokenizer toy_pairs(std::size_t vocab_size);

  const std::string& id() const noexcept { return id_; }
  std::size_t size() const noexcept { return vocab_.size(); }
  const std::vector<std::string>& vocab() const noexcept { return vocab_; }
  const std::set<TokenId>& special_ids() const noexcept { return special_; }

  bool contains(TokenId id) const noexcept {
    return id >= 0 && static_cast<std::size_t>(id) < vocab_.size();
  }
  std::optional<TokenId> find(std::string_view symbol) const;

  TokenSeq encode(std::string_view text) const;
  std::string decode(const TokenSeq& tokens) const;

  /// Throws kInput if any id is outside the vocabulary.
  void check_ids(const TokenSeq& tokens, std::string_view what) const;

  /// "!" if present, else token 0.
  TokenId default_init_token() const;

 private:
  std::string id_;
  std::vector<std::string> vocab_;
  std::set<TokenId> special_;
  std::unordered_map<std::string, TokenId> index_;
  std::size_t max_symbol_len_ = 0;
};

}  // namespace degcg
