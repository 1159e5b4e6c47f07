#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace degcg {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

class Tokenizer;

// ============================================================================
// Errors
// ============================================================================

enum class ErrorKind {
  kSchema,        // malformed or incomplete behavior record
  kInput,         // precondition violated by a caller
  kCapability,    // victim lacks a required capability
  kConfig,        // invalid search or run configuration
  kTransfer,      // cross-tokenizer transfer failed
  kLoad,          // checkpoint / victim file could not be loaded
  kConstruction,  // instance builder could not satisfy its constraints
  kFormat,        // CSV or other output-file format problem
  kData,          // dataset-level problem (duplicates, bad lines)
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// ============================================================================
// Enums
// ============================================================================

// The six semantic categories of the HarmBench standard subset.
enum class Category {
  kChemicalBiological,
  kMisinformation,
  kIllegal,
  kCybercrime,
  kHarmful,
  kHarassmentBullying,
};

enum class Split { kValid, kTest };

enum class Objective { kFts, kCas };

enum class SearchMode { kGcgM, kFts, kCas, kDegcg, kIdegcg };

inline constexpr Category kAllCategories[] = {
    Category::kChemicalBiological, Category::kMisinformation,
    Category::kIllegal,            Category::kCybercrime,
    Category::kHarmful,            Category::kHarassmentBullying,
};

std::string_view to_string(Category category);
std::string_view to_string(Split split);
std::string_view to_string(Objective objective);
std::string_view to_string(SearchMode mode);

std::optional<Category> parse_category(std::string_view text);
std::optional<Split> parse_split(std::string_view text);
std::optional<Objective> parse_objective(std::string_view text);
std::optional<SearchMode> parse_search_mode(std::string_view text);

// ============================================================================
// Domain values
// ============================================================================

struct TokenText {
  TokenSeq tokens;
  std::string text;
};

struct Behavior {
  std::string id;
  TokenText prompt;
  TokenText target;
  Category category = Category::kIllegal;
  Split split = Split::kValid;
  std::string tokenizer_id;
};

/// Fixed-length token sequence searched by the engine. The tokenizer tag makes
/// cross-tokenizer misuse detectable; the text is always re-derived.
class Suffix {
 public:
  Suffix(TokenSeq tokens, std::string tokenizer_id);

  static Suffix repeated(TokenId token, std::size_t length,
                         std::string tokenizer_id);

  const TokenSeq& tokens() const noexcept { return tokens_; }
  std::size_t size() const noexcept { return tokens_.size(); }
  TokenId operator[](std::size_t i) const { return tokens_.at(i); }
  const std::string& tokenizer_id() const noexcept { return tokenizer_id_; }

  /// Copy with position `pos` replaced by `token`.
  Suffix with_replacement(std::size_t pos, TokenId token) const;

  /// Decode under `tokenizer`; throws kInput if the tokenizer tag differs.
  std::string text(const Tokenizer& tokenizer) const;

  friend bool operator==(const Suffix&, const Suffix&) = default;

 private:
  TokenSeq tokens_;
  std::string tokenizer_id_;
};

/// Number of positions at which two equal-length suffixes differ.
std::size_t hamming_distance(const Suffix& a, const Suffix& b);

class LossBreakdown {
 public:
  LossBreakdown() = default;
  explicit LossBreakdown(std::vector<double> per_token_nll);

  const std::vector<double>& per_token_nll() const noexcept { return nll_; }
  std::size_t size() const noexcept { return nll_.size(); }
  double first_token() const;
  double sequence_sum() const;
  double sequence_mean() const;

 private:
  std::vector<double> nll_;
};

struct SearchConfig {
  int suffix_length = 20;
  int topk = 8;
  int batch_size = 64;
  int total_steps = 500;
  int fts_max_steps = 200;
  double eps_fts = 0.2;
  double eps_cas = 0.2;
  int stage_max_fts = 20;
  int stage_max_cas = 30;
  std::optional<TokenId> init_token;
  std::uint64_t seed = 0;
  SearchMode mode = SearchMode::kDegcg;

  /// Throws kConfig naming the first violated invariant. Run drivers accept a
  /// zero step budget (a no-op run); config files do not.
  void validate(bool allow_zero_steps = false) const;

  nlohmann::json to_json() const;
  /// Reads known keys from `j`; absent keys keep their defaults.
  static SearchConfig from_json(const nlohmann::json& j);
};

enum class StageFlag : int { kFts = 0, kCas = 1 };

inline Objective objective_for(StageFlag flag) {
  return flag == StageFlag::kFts ? Objective::kFts : Objective::kCas;
}

/// Controller state carried between engine steps.
struct SchedulerState {
  SchedulerState(Suffix initial, std::uint64_t seed)
      : incumbent(std::move(initial)), rng(seed) {}

  StageFlag stage_flag = StageFlag::kFts;
  int t_ac = 0;
  std::size_t m_j = 1;
  Suffix incumbent;
  int step = 0;
  std::mt19937_64 rng;
};

/// Builds a Behavior from a JSON record with fields id, prompt, target,
/// category and split, tokenizing text with `tokenizer`.
Behavior validate_behavior(const nlohmann::json& record,
                           const Tokenizer& tokenizer);

}  // namespace degcg
