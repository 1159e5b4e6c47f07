#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "degcg/core.hpp"
#include "degcg/victim.hpp"

namespace degcg {

enum class ToyTokenizerKind { kChars, kPairs };

/// kTrap: content-helper tokens are worth more per slot than a lone refusal
/// suppressor, so full-sequence search from scratch settles on helpers and
/// never clears the refusal. kReachable: a single helper suffices and the
/// full-sequence threshold is attainable.
enum class InstanceProfile { kTrap, kReachable };

struct RefusalInstanceOptions {
  std::uint64_t seed = 0;
  std::size_t vocab_size = 16;
  std::size_t suffix_length = 4;
  ToyTokenizerKind tokenizer = ToyTokenizerKind::kChars;
  InstanceProfile profile = InstanceProfile::kTrap;
  std::size_t num_behaviors = 6;
  bool zero_logit_matrix = false;  // M = 0: suffixes cannot move the loss
};

/// Token ids playing each part in the constructed victim.
struct RefusalRoles {
  TokenId init = 0;
  TokenId affirmative = 0;
  TokenId refusal = 0;      // designated refusal token (argmax under init)
  TokenId refusal_alt = 0;  // second refusal token
  std::vector<TokenId> triggers;
  std::vector<TokenId> helpers;                 // one per content group
  std::vector<std::vector<TokenId>> content;    // per group
  std::vector<TokenId> prompt;
};

struct RefusalInstance {
  AnalyticVictim victim;
  std::vector<Behavior> behaviors;
  RefusalRoles roles;
  /// Worst first-token NLL over behaviors under the default init suffix.
  double init_first_token_nll = 0.0;
  /// Best (over suffixes) worst-case first-token NLL found by the certificate.
  double best_first_token_nll = 0.0;
  Suffix certificate;
  bool exhaustive = false;  // certificate found by full enumeration
};

/// Largest multiset count the feasibility check enumerates exhaustively.
inline constexpr std::size_t kExhaustiveLimit = 200000;

/// Builds a victim and behavior set where the default init suffix makes every
/// behavior open with the designated refusal token, while some suffix of the
/// requested length drives every first-token NLL below 0.2. Feasibility is
/// checked by enumerating all suffix multisets (the victim is order-free) when
/// that is small enough, else by an explicit certificate. Throws
/// kConstruction if either property fails.
RefusalInstance build_refusal_instance(const RefusalInstanceOptions& options);

/// Behaviors with random prompt/target tokens for generic victims.
std::vector<Behavior> random_behaviors(std::uint64_t seed, const Tokenizer& tokenizer,
                                       std::size_t count, std::size_t prompt_length,
                                       std::size_t target_length);

/// Calls `visit` with every multiset of size `length` over `alphabet`, as a
/// non-decreasing token sequence.
template <typename Visit>
void for_each_multiset(const std::vector<TokenId>& alphabet, std::size_t length, Visit&& visit) {
  if (alphabet.empty()) return;
  std::vector<std::size_t> idx(length, 0);
  TokenSeq seq(length);
  while (true) {
    for (std::size_t i = 0; i < length; ++i) seq[i] = alphabet[idx[i]];
    visit(seq);
    std::size_t i = length;
    while (i > 0 && idx[i - 1] + 1 == alphabet.size()) --i;
    if (i == 0) return;
    const std::size_t next = idx[i - 1] + 1;
    for (std::size_t k = i - 1; k < length; ++k) idx[k] = next;
  }
}

/// C(n + k - 1, k), saturating at SIZE_MAX.
std::size_t multiset_count(std::size_t n, std::size_t k);

}  // namespace degcg
