#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "degcg/core.hpp"
#include "degcg/eval.hpp"
#include "degcg/tokenizer.hpp"

namespace degcg {

// ============================================================================
// Behavior files
// ============================================================================

struct BehaviorSet {
  std::vector<Behavior> behaviors;  // file order
  std::map<Category, std::size_t> counts;
};

/// Reads a JSONL file with one behavior record per line; blank lines are
/// skipped. Malformed lines fail with their line number (kData for bad JSON,
/// the validator's kind otherwise); a repeated id anywhere in the file is
/// kData. Filters apply after validation.
BehaviorSet load_behaviors(const std::filesystem::path& path, const Tokenizer& tokenizer,
                           std::optional<Split> split = std::nullopt,
                           std::optional<Category> category = std::nullopt);

/// Subset of `behaviors` matching both filters, order preserved.
std::vector<Behavior> filter_behaviors(const std::vector<Behavior>& behaviors,
                                       std::optional<Split> split,
                                       std::optional<Category> category);

/// Maps a HarmBench SemanticCategory label onto the closed category set.
std::optional<Category> harmbench_category(std::string_view native);

// ============================================================================
// Run configuration files
// ============================================================================

struct JudgeSpec {
  std::optional<int> prefix_k;
  std::vector<std::string> keywords;

  std::unique_ptr<Judge> make() const;
  nlohmann::json to_json() const;
};

struct RunConfigFile {
  SearchConfig search;
  bool suffix_length_given = false;
  std::filesystem::path victim_path;
  std::filesystem::path behaviors_path;
  std::optional<Split> split = Split::kValid;  // training behaviors
  std::optional<Category> category;
  std::filesystem::path output_dir = "out";
  JudgeSpec judge{1, {}};
  int max_gen_len = 64;
  /// Symbol (string) or id (integer) in the target tokenizer.
  std::optional<nlohmann::json> filler_token;
  std::vector<Split> asr_splits{Split::kValid, Split::kTest};

  /// Unknown keys and SearchConfig violations are kConfig. Relative paths
  /// resolve against `base_dir`.
  static RunConfigFile from_json(const nlohmann::json& j,
                                 const std::filesystem::path& base_dir = {});
  static RunConfigFile load(const std::filesystem::path& path);

  /// DEGCG_OUTPUT_DIR and DEGCG_SEED, when set, replace the file values.
  void apply_env_overrides();

  nlohmann::json to_json() const;
  /// SHA-256 of the canonical JSON of every field except output_dir.
  std::string digest() const;

  std::optional<TokenId> resolve_filler(const Tokenizer& tokenizer) const;
};

// ============================================================================
// Entry point
// ============================================================================

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitRuntime = 4;

int exit_code_for(ErrorKind kind);

/// Parses arguments and runs one subcommand: run, transfer, repeat, eval,
/// plot, check-grad, make-toy, convert-harmbench. Returns the exit code.
int run_cli(int argc, const char* const* argv);

}  // namespace degcg
