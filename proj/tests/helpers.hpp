#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "degcg/core.hpp"
#include "degcg/tokenizer.hpp"
#include "degcg/victim.hpp"

namespace degcg::testing {

inline Behavior make_behavior(const Tokenizer& tok, std::string id, TokenSeq prompt,
                              TokenSeq target, Split split = Split::kValid,
                              Category category = Category::kIllegal) {
  Behavior b;
  b.id = std::move(id);
  b.prompt = {prompt, tok.decode(prompt)};
  b.target = {target, tok.decode(target)};
  b.category = category;
  b.split = split;
  b.tokenizer_id = tok.id();
  return b;
}

inline Suffix random_suffix(std::uint64_t seed, const Tokenizer& tok, std::size_t length) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> pick(0, static_cast<TokenId>(tok.size() - 1));
  TokenSeq t(length);
  for (auto& x : t) x = pick(rng);
  return Suffix(t, tok.id());
}

/// Plain-loop teacher-forced NLL for a bag-of-tokens victim, written without
/// Eigen so it shares no code with the library.
inline std::vector<double> oracle_nll(const AnalyticVictim& v, TokenSeq context,
                                      const TokenSeq& targets) {
  const auto n = static_cast<int>(v.vocab_size());
  std::vector<double> out;
  for (TokenId y : targets) {
    std::vector<double> logits(n);
    for (int w = 0; w < n; ++w) {
      double z = v.bias()(w);
      for (TokenId t : context) z += v.logit_matrix()(t, w);
      logits[w] = z;
    }
    double mx = logits[0];
    for (double z : logits) mx = std::max(mx, z);
    double s = 0.0;
    for (double z : logits) s += std::exp(z - mx);
    out.push_back(-(logits[y] - mx - std::log(s)));
    context.push_back(y);
  }
  return out;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("degcg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace degcg::testing
