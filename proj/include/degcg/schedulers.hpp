#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "degcg/core.hpp"
#include "degcg/engine.hpp"
#include "degcg/victim.hpp"

namespace degcg {

// ============================================================================
// Search drivers
// ============================================================================

/// Two-stage search. Stage 1 optimizes the first-token objective; whenever
/// every active behavior is below eps_fts the active set grows, and the stage
/// ends once all behaviors are active and below eps_fts, or after
/// fts_max_steps. Stage 2 optimizes the full-sequence objective for the rest
/// of the budget, so the run takes exactly total_steps steps.
RunResult run_degcg(StepEngine& engine, SchedulerState state, const SearchConfig& config);
RunResult run_degcg(const Victim& victim, std::span<const Behavior> behaviors,
                    const SearchConfig& config);

/// Interleaved search. Each step optimizes the objective selected by the
/// stage flag. After the step the flag flips and t_ac resets when every active
/// behavior is within that stage's threshold or t_ac has reached the stage
/// cap; otherwise t_ac increments. The active set grows by one when every
/// active behavior is within both thresholds.
RunResult run_idegcg(StepEngine& engine, SchedulerState state, const SearchConfig& config);
RunResult run_idegcg(const Victim& victim, std::span<const Behavior> behaviors,
                     const SearchConfig& config);

/// Dispatches on config.mode from `initial` (or the default init suffix).
RunResult run_search(const Victim& victim, std::span<const Behavior> behaviors,
                     const SearchConfig& config, std::optional<Suffix> initial = std::nullopt);

// ============================================================================
// Initialization and transfer
// ============================================================================

/// `times` back-to-back copies of `base`. target_length must equal
/// base.size() * times.
Suffix self_repeat_init(const Suffix& base, int times, std::size_t target_length);

/// Encodes `source_text` with `target`, truncating the tail or right-padding
/// with `filler` to exactly `length` tokens.
Suffix retokenize_transfer(std::string_view source_text, const Tokenizer& target,
                           std::size_t length, TokenId filler);

// ============================================================================
// Checkpoints
// ============================================================================

struct Checkpoint {
  TokenSeq suffix_ids;
  std::string suffix_text;
  std::string tokenizer_id;
  std::string mode;
  int step = 0;
  std::size_t m_j = 1;
  int stage_flag = 0;
  double loss_fts = 0.0;
  double loss_cas = 0.0;
  std::string config_digest;
  std::uint64_t seed = 0;
  /// Digests of the checkpoints this suffix descends from, oldest first.
  std::vector<std::string> lineage;

  Suffix suffix() const { return Suffix(suffix_ids, tokenizer_id); }

  nlohmann::json to_json() const;
  static Checkpoint from_json(const nlohmann::json& j);
};

/// Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// SHA-256 of the checkpoint file bytes.
std::string checkpoint_digest(const std::filesystem::path& path);

/// Fresh controller state initialized from a checkpoint suffix. A checkpoint
/// from another tokenizer is moved over through its text; that requires
/// `filler`. Step counters, stage flag and active set start over.
SchedulerState resume_from_checkpoint(const std::filesystem::path& path, const Victim& target,
                                      const SearchConfig& config,
                                      std::optional<TokenId> filler = std::nullopt);
SchedulerState resume_from_checkpoint(const Checkpoint& checkpoint, const Victim& target,
                                      const SearchConfig& config,
                                      std::optional<TokenId> filler = std::nullopt);

}  // namespace degcg
