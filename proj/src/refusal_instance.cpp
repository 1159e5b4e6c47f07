#include "degcg/refusal_instance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <fmt/core.h>

namespace degcg {

namespace {

struct ProfileParams {
  double refusal_bias;      // bias of both refusal tokens
  double suppression;       // trigger penalty on the refusal tokens it targets
  double affirm_boost;      // trigger boost on the affirmative token
  double content_bias;      // bias of content tokens (negative)
  double content_context;   // boost of content once the affirmative is in context
  double helper_boost;      // helper boost on its group's content tokens
  std::size_t max_groups;
  std::size_t content_per_group;
};

ProfileParams params_for(InstanceProfile profile) {
  switch (profile) {
    case InstanceProfile::kTrap:
      return {11.0, 12.0, 2.2, -6.5, 0.0, 1.3, 2, 2};
    case InstanceProfile::kReachable:
      return {11.0, 12.0, 2.6, -4.0, 6.0, 5.0, 1, 1};
  }
  return params_for(InstanceProfile::kTrap);
}

constexpr double kNoise = 0.15;
constexpr double kRefusalMargin = 1.5;  // designated refusal over the alternate
constexpr double kFirstTokenGoal = 0.2;

double worst_first_token(const AnalyticVictim& victim, const std::vector<Behavior>& behaviors,
                         const TokenSeq& suffix) {
  double worst = 0.0;
  for (const auto& b : behaviors) {
    const TokenSeq ctx = concat(b.prompt.tokens, suffix);
    const TokenSeq first{b.target.tokens.front()};
    worst = std::max(worst, victim.nll(ctx, first).first_token());
  }
  return worst;
}

}  // namespace

std::size_t multiset_count(std::size_t n, std::size_t k) {
  // C(n + k - 1, k) computed incrementally; each partial product is exact.
  long double acc = 1.0L;
  for (std::size_t i = 1; i <= k; ++i) {
    acc = acc * static_cast<long double>(n + i - 1) / static_cast<long double>(i);
    if (acc > static_cast<long double>(std::numeric_limits<std::size_t>::max() / 2)) {
      return std::numeric_limits<std::size_t>::max();
    }
  }
  return static_cast<std::size_t>(std::llround(acc));
}

RefusalInstance build_refusal_instance(const RefusalInstanceOptions& options) {
  const std::size_t v = options.vocab_size;
  if (v < 8) {
    throw Error(ErrorKind::kConstruction,
                fmt::format("refusal instance needs a vocabulary of at least 8, got {}", v));
  }
  if (options.suffix_length < 1) {
    throw Error(ErrorKind::kConstruction, "suffix length must be >= 1");
  }
  if (options.num_behaviors < 1) {
    throw Error(ErrorKind::kConstruction, "need at least one behavior");
  }
  Tokenizer tokenizer = options.tokenizer == ToyTokenizerKind::kChars
                            ? Tokenizer::toy_chars(v)
                            : Tokenizer::toy_pairs(v);
  const ProfileParams p = params_for(options.profile);
  std::mt19937_64 rng(options.seed);

  // ---- roles --------------------------------------------------------------
  RefusalRoles roles;
  roles.init = tokenizer.default_init_token();
  // Triggers are fixed symbols so that suffix text keeps its meaning across
  // the two toy tokenizers: "a" and "b" for characters, every pair over {a, b}
  // for pairs.
  std::vector<std::vector<int>> suppresses;  // per trigger: 0 = refusal, 1 = alt
  if (options.tokenizer == ToyTokenizerKind::kChars) {
    for (auto [sym, target] : {std::pair{"a", 0}, std::pair{"b", 1}}) {
      auto id = tokenizer.find(sym);
      if (!id) throw Error(ErrorKind::kConstruction, "vocabulary lacks trigger symbols");
      roles.triggers.push_back(*id);
      suppresses.push_back({target});
    }
  } else {
    for (const char* sym : {"aa", "ab", "ba", "bb"}) {
      auto id = tokenizer.find(sym);
      if (!id) throw Error(ErrorKind::kConstruction, "vocabulary lacks trigger symbols");
      roles.triggers.push_back(*id);
      suppresses.push_back({0, 1});
    }
  }

  std::vector<TokenId> pool;
  for (std::size_t w = 0; w < v; ++w) {
    const auto id = static_cast<TokenId>(w);
    if (id == roles.init) continue;
    if (std::find(roles.triggers.begin(), roles.triggers.end(), id) != roles.triggers.end()) continue;
    pool.push_back(id);
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  if (pool.size() < 5) {
    throw Error(ErrorKind::kConstruction, "vocabulary too small to assign every role");
  }
  auto take = [&pool]() {
    TokenId id = pool.back();
    pool.pop_back();
    return id;
  };
  roles.affirmative = take();
  roles.refusal = take();
  roles.refusal_alt = take();
  const std::size_t groups = std::min(p.max_groups, pool.size() >= 6 ? std::size_t{2} : std::size_t{1});
  const std::size_t per_group =
      std::min(p.content_per_group, std::max<std::size_t>(1, (pool.size() - groups) / groups));
  for (std::size_t g = 0; g < groups; ++g) roles.helpers.push_back(take());
  roles.content.resize(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t k = 0; k < per_group && !pool.empty(); ++k) roles.content[g].push_back(take());
  }
  roles.prompt = pool;
  std::sort(roles.prompt.begin(), roles.prompt.end());

  // ---- parameters ---------------------------------------------------------
  const auto n = static_cast<Eigen::Index>(v);
  std::normal_distribution<double> noise(0.0, kNoise);
  std::uniform_real_distribution<double> jitter(-0.5, 0.5);
  Eigen::MatrixXd m(n, n);
  Eigen::VectorXd c(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index k = 0; k < n; ++k) m(r, k) = noise(rng);
  }
  for (Eigen::Index k = 0; k < n; ++k) c(k) = noise(rng);
  // The init token is neutral so its repetition count does not move the logits.
  m.row(roles.init).setZero();

  const double refusal_bias = p.refusal_bias + jitter(rng);
  c(roles.refusal) += refusal_bias + kRefusalMargin;
  c(roles.refusal_alt) += refusal_bias;
  const TokenId refusals[2] = {roles.refusal, roles.refusal_alt};
  for (std::size_t t = 0; t < roles.triggers.size(); ++t) {
    const TokenId g = roles.triggers[t];
    m(g, roles.affirmative) += p.affirm_boost;
    for (int target : suppresses[t]) m(g, refusals[target]) -= p.suppression;
  }
  // Once the affirmative token is in context the model no longer refuses.
  m(roles.affirmative, roles.refusal) -= refusal_bias + 6.0;
  m(roles.affirmative, roles.refusal_alt) -= refusal_bias + 6.0;
  m(roles.affirmative, roles.affirmative) -= 6.0;
  for (std::size_t g = 0; g < groups; ++g) {
    for (TokenId tok : roles.content[g]) {
      c(tok) += p.content_bias;
      m(roles.affirmative, tok) += p.content_context;
      m(roles.helpers[g], tok) += p.helper_boost;
    }
  }
  if (options.zero_logit_matrix) m.setZero();

  AnalyticVictim victim(tokenizer, m, c);

  // ---- behaviors ----------------------------------------------------------
  std::vector<Behavior> behaviors;
  const std::size_t valid_count = (2 * options.num_behaviors + 2) / 3;
  for (std::size_t j = 0; j < options.num_behaviors; ++j) {
    Behavior b;
    b.id = fmt::format("toy-{:02}", j);
    b.category = kAllCategories[j % std::size(kAllCategories)];
    b.split = j < valid_count ? Split::kValid : Split::kTest;
    if (roles.prompt.empty()) {
      b.prompt.tokens = {roles.init};
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, roles.prompt.size() - 1);
      b.prompt.tokens = {roles.prompt[pick(rng)], roles.prompt[pick(rng)]};
    }
    const auto& group = roles.content[j % groups];
    b.target.tokens = {roles.affirmative};
    for (std::size_t k = 0; k < 3; ++k) b.target.tokens.push_back(group[k % group.size()]);
    b.prompt.text = tokenizer.decode(b.prompt.tokens);
    b.target.text = tokenizer.decode(b.target.tokens);
    b.tokenizer_id = tokenizer.id();
    behaviors.push_back(std::move(b));
  }

  // ---- verification -------------------------------------------------------
  const TokenSeq init_suffix(options.suffix_length, roles.init);
  for (const auto& b : behaviors) {
    const auto first = greedy_decode(victim, concat(b.prompt.tokens, init_suffix), 1);
    if (first.front() != roles.refusal) {
      throw Error(ErrorKind::kConstruction,
                  fmt::format("behavior '{}' opens with token {} instead of refusal token {}",
                              b.id, first.front(), roles.refusal));
    }
  }

  RefusalInstance out{std::move(victim), std::move(behaviors), roles, 0.0, 0.0,
                      Suffix(init_suffix, tokenizer.id()), false};
  out.init_first_token_nll = worst_first_token(out.victim, out.behaviors, init_suffix);

  std::vector<TokenId> alphabet;
  for (std::size_t w = 0; w < v; ++w) {
    if (!tokenizer.special_ids().count(static_cast<TokenId>(w))) {
      alphabet.push_back(static_cast<TokenId>(w));
    }
  }
  double best = std::numeric_limits<double>::infinity();
  TokenSeq best_seq;
  if (multiset_count(alphabet.size(), options.suffix_length) <= kExhaustiveLimit) {
    out.exhaustive = true;
    for_each_multiset(alphabet, options.suffix_length, [&](const TokenSeq& seq) {
      const double worst = worst_first_token(out.victim, out.behaviors, seq);
      if (worst < best) {
        best = worst;
        best_seq = seq;
      }
    });
  } else {
    TokenSeq seq(options.suffix_length);
    for (std::size_t i = 0; i < seq.size(); ++i) seq[i] = roles.triggers[i % roles.triggers.size()];
    best = worst_first_token(out.victim, out.behaviors, seq);
    best_seq = seq;
  }
  if (!(best < kFirstTokenGoal)) {
    throw Error(ErrorKind::kConstruction,
                fmt::format("no suffix of length {} drives first-token NLL below {} "
                            "(best {:.4f}, {} check)",
                            options.suffix_length, kFirstTokenGoal, best,
                            out.exhaustive ? "exhaustive" : "certificate"));
  }
  out.best_first_token_nll = best;
  out.certificate = Suffix(best_seq, tokenizer.id());
  return out;
}

std::vector<Behavior> random_behaviors(std::uint64_t seed, const Tokenizer& tokenizer,
                                       std::size_t count, std::size_t prompt_length,
                                       std::size_t target_length) {
  if (prompt_length < 1 || target_length < 1) {
    throw Error(ErrorKind::kInput, "prompt and target lengths must be >= 1");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> pick(0, static_cast<TokenId>(tokenizer.size() - 1));
  std::vector<Behavior> out;
  for (std::size_t j = 0; j < count; ++j) {
    Behavior b;
    b.id = fmt::format("rand-{:02}", j);
    b.category = kAllCategories[j % std::size(kAllCategories)];
    b.split = Split::kValid;
    for (std::size_t k = 0; k < prompt_length; ++k) b.prompt.tokens.push_back(pick(rng));
    for (std::size_t k = 0; k < target_length; ++k) b.target.tokens.push_back(pick(rng));
    b.prompt.text = tokenizer.decode(b.prompt.tokens);
    b.target.text = tokenizer.decode(b.target.tokens);
    b.tokenizer_id = tokenizer.id();
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace degcg
