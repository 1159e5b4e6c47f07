#include "degcg/tokenizer.hpp"

#include <algorithm>

#include <fmt/core.h>

namespace degcg {

namespace {

constexpr std::string_view kToyAlphabet =
    "!abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

}  // namespace

Tokenizer::Tokenizer(std::string id, std::vector<std::string> vocab,
                     std::set<TokenId> special_ids)
    : id_(std::move(id)), vocab_(std::move(vocab)), special_(std::move(special_ids)) {
  if (vocab_.empty()) throw Error(ErrorKind::kInput, "tokenizer vocabulary is empty");
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    const auto& sym = vocab_[i];
    if (sym.empty()) {
      throw Error(ErrorKind::kInput, fmt::format("vocabulary entry {} is empty", i));
    }
    if (!index_.emplace(sym, static_cast<TokenId>(i)).second) {
      throw Error(ErrorKind::kInput, fmt::format("duplicate vocabulary entry '{}'", sym));
    }
    max_symbol_len_ = std::max(max_symbol_len_, sym.size());
  }
  for (TokenId s : special_) {
    if (!contains(s)) {
      throw Error(ErrorKind::kInput, fmt::format("special id {} outside vocabulary", s));
    }
  }
}

Tokenizer Tokenizer::toy_chars(std::size_t vocab_size) {
  if (vocab_size == 0 || vocab_size > kToyAlphabet.size()) {
    throw Error(ErrorKind::kInput,
                fmt::format("toy_chars supports 1..{} symbols", kToyAlphabet.size()));
  }
  std::vector<std::string> vocab;
  for (std::size_t i = 0; i < vocab_size; ++i) vocab.emplace_back(1, kToyAlphabet[i]);
  return Tokenizer(fmt::format("toy-chars-{}", vocab_size), std::move(vocab));
}

Tokenizer Tokenizer::toy_pairs(std::size_t vocab_size) {
  std::size_t side = 1;
  while (side * side < vocab_size) ++side;
  if (vocab_size == 0 || side > kToyAlphabet.size()) {
    throw Error(ErrorKind::kInput, "toy_pairs vocabulary size out of range");
  }
  std::vector<std::string> vocab;
  for (std::size_t a = 0; a < side && vocab.size() < vocab_size; ++a) {
    for (std::size_t b = 0; b < side && vocab.size() < vocab_size; ++b) {
      vocab.push_back(std::string{kToyAlphabet[a], kToyAlphabet[b]});
    }
  }
  return Tokenizer(fmt::format("toy-pairs-{}", vocab_size), std::move(vocab));
}

std::optional<TokenId> Tokenizer::find(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenSeq Tokenizer::encode(std::string_view text) const {
  TokenSeq out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t longest = std::min(max_symbol_len_, text.size() - pos);
    bool matched = false;
    for (std::size_t len = longest; len >= 1; --len) {
      auto it = index_.find(std::string(text.substr(pos, len)));
      if (it != index_.end()) {
        out.push_back(it->second);
        pos += len;
        matched = true;
        break;
      }
    }
    if (!matched) ++pos;
  }
  return out;
}

std::string Tokenizer::decode(const TokenSeq& tokens) const {
  check_ids(tokens, "decode input");
  std::string out;
  for (TokenId t : tokens) out += vocab_[static_cast<std::size_t>(t)];
  return out;
}

void Tokenizer::check_ids(const TokenSeq& tokens, std::string_view what) const {
  for (TokenId t : tokens) {
    if (!contains(t)) {
      throw Error(ErrorKind::kInput,
                  fmt::format("{}: token id {} outside vocabulary of size {} ({})",
                              what, t, vocab_.size(), id_));
    }
  }
}

TokenId Tokenizer::default_init_token() const {
  return find("!").value_or(0);
}

}  // namespace degcg
