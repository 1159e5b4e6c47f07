#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "degcg/core.hpp"
#include "degcg/engine.hpp"
#include "degcg/victim.hpp"

namespace degcg {

// ============================================================================
// Judges
// ============================================================================

/// True iff the first min(k, |target|) generated tokens equal the target's.
/// Throws kInput if k < 1.
bool judge_prefix(const TokenSeq& generation, const TokenSeq& target, int k);

/// True iff no refusal phrase occurs in `generation_text`, ignoring ASCII
/// case. An empty generation passes. Throws kInput if `refusal_list` is empty.
bool judge_keywords(std::string_view generation_text, std::span<const std::string> refusal_list);

/// Decides attack success from a generation. Implementations must be pure:
/// the verdict depends only on the arguments and the judge's parameters.
class Judge {
 public:
  virtual ~Judge() = default;
  virtual std::string name() const = 0;
  virtual bool success(const Behavior& behavior, const TokenSeq& generation,
                       std::string_view generation_text) const = 0;
};

class PrefixJudge final : public Judge {
 public:
  explicit PrefixJudge(int k);
  std::string name() const override;
  bool success(const Behavior& behavior, const TokenSeq& generation,
               std::string_view generation_text) const override;

 private:
  int k_;
};

class KeywordJudge final : public Judge {
 public:
  explicit KeywordJudge(std::vector<std::string> refusal_list);
  std::string name() const override { return "keywords"; }
  bool success(const Behavior& behavior, const TokenSeq& generation,
               std::string_view generation_text) const override;

  const std::vector<std::string>& refusal_list() const noexcept { return refusals_; }

 private:
  std::vector<std::string> refusals_;
};

// ============================================================================
// ASR
// ============================================================================

struct JudgeVerdict {
  std::string behavior_id;
  bool success = false;
  std::string generation;
  std::string judge_name;
};

struct AsrResult {
  double asr = 0.0;
  std::vector<JudgeVerdict> verdicts;  // behavior order

  std::size_t successes() const;
};

/// Greedy-decodes prompt + suffix for every behavior and judges the result.
/// Throws kInput if `behaviors` is empty.
AsrResult compute_asr(const Victim& victim, std::span<const Behavior> behaviors,
                      const Suffix& suffix, const Judge& judge, int max_gen_len);

// ============================================================================
// Training dynamics
// ============================================================================

struct DynamicsRecord {
  int step = 0;
  Objective stage = Objective::kCas;
  std::size_t m_j = 1;
  double ft_loss_mean = 0.0;
  double seq_loss_mean = 0.0;
  double chosen_loss = 0.0;

  friend bool operator==(const DynamicsRecord&, const DynamicsRecord&) = default;
};

inline constexpr int kSummaryInterval = 100;

/// One record per trace entry. Throws kInput on an empty trace or a step
/// sequence that is not strictly increasing.
std::vector<DynamicsRecord> record_dynamics(std::span<const StepTrace> trace);

/// Records whose step is a positive multiple of `interval`.
std::vector<DynamicsRecord> centennial_summaries(std::span<const DynamicsRecord> records,
                                                 int interval = kSummaryInterval);

inline constexpr const char* kDynamicsColumns[] = {"step",          "stage",
                                                   "m_j",           "ft_loss_mean",
                                                   "seq_loss_mean", "chosen_loss"};

/// Header plus one line per record. Reals use shortest round-trip formatting
/// so equal runs give identical bytes.
std::string dynamics_csv(std::span<const DynamicsRecord> records);

/// Parses a dynamics CSV. Columns are located by header name; throws kFormat
/// naming a missing column, on a file with no data rows, or on a bad cell.
std::vector<DynamicsRecord> parse_dynamics_csv(std::string_view text);

}  // namespace degcg
