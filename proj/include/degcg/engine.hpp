#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <vector>

#include "degcg/core.hpp"
#include "degcg/objectives.hpp"
#include "degcg/victim.hpp"

namespace degcg {

/// Per-position shortlist of replacement tokens, best score first.
using TopkTable = std::vector<std::vector<TokenId>>;

struct Replacement {
  std::size_t position = 0;
  TokenId token = 0;

  friend bool operator==(const Replacement&, const Replacement&) = default;
};

struct CandidateBatch {
  std::vector<Suffix> candidates;
  std::vector<Replacement> provenance;  // parallel to candidates
};

struct StepTrace {
  int step = 0;
  Objective stage = Objective::kCas;
  std::size_t m_j = 1;
  double chosen_loss = 0.0;       // aggregate objective loss of the new incumbent
  double first_token_mean = 0.0;  // mean first-token NLL over active behaviors
  double sequence_mean = 0.0;     // mean per-token NLL over active behaviors
  double max_active_loss = 0.0;   // worst per-behavior objective loss
  std::optional<Replacement> chosen;  // nullopt: incumbent kept
};

/// The K highest-scoring non-excluded tokens per suffix position. Ties go to
/// the lower token id. Throws kConfig if fewer than K tokens remain.
TopkTable topk_table(const GradientTable& grad, int k, const std::set<TokenId>& excluded);

/// B single-replacement candidates: uniform position, then a uniform token
/// from that position's shortlist. Sampling is with replacement.
CandidateBatch sample_candidates(const Suffix& incumbent, const TopkTable& table,
                                 int batch_size, std::mt19937_64& rng);

struct Selection {
  Suffix best;
  AggregateReport report;
  std::optional<std::size_t> chosen_index;  // nullopt: incumbent kept
};

/// Greedy argmin over the batch plus the incumbent. Ties keep the incumbent,
/// then prefer the earlier candidate.
Selection select(const Victim& victim, std::span<const Behavior> behaviors,
                 const Suffix& incumbent, const CandidateBatch& batch, Objective objective);

struct StepResult {
  SchedulerState state;
  StepTrace trace;
  AggregateReport report;
};

/// One GCG iteration over the first state.m_j behaviors: aggregated gradient,
/// top-K shortlist, candidate batch, greedy selection.
StepResult gcg_step(const Victim& victim, std::span<const Behavior> behaviors,
                    SchedulerState state, Objective objective, const SearchConfig& config);

/// Something that advances a search by one step. The GCG engine is the real
/// implementation; tests drive schedulers with scripted engines.
class StepEngine {
 public:
  struct Outcome {
    StepTrace trace;
    AggregateReport report;  // per_behavior covers the active behaviors
  };

  virtual ~StepEngine() = default;
  virtual Outcome step(SchedulerState& state, Objective objective) = 0;
  virtual std::size_t behavior_count() const = 0;
};

class GcgEngine final : public StepEngine {
 public:
  GcgEngine(const Victim& victim, std::span<const Behavior> behaviors, SearchConfig config);

  Outcome step(SchedulerState& state, Objective objective) override;
  std::size_t behavior_count() const override { return behaviors_.size(); }

 private:
  const Victim& victim_;
  std::span<const Behavior> behaviors_;
  SearchConfig config_;
};

/// Controller variables after a step: stage flag, accumulated stage steps and
/// active behavior count.
struct ControllerSnapshot {
  StageFlag stage_flag = StageFlag::kFts;
  int t_ac = 0;
  std::size_t m_j = 1;

  friend bool operator==(const ControllerSnapshot&, const ControllerSnapshot&) = default;
};

struct RunResult {
  SchedulerState state;  // incumbent holds the final suffix
  std::vector<StepTrace> trace;
  std::vector<ControllerSnapshot> controller;  // parallel to trace

  const Suffix& suffix() const { return state.incumbent; }
};

/// init_token (or the tokenizer default) repeated suffix_length times.
Suffix initial_suffix(const Tokenizer& tokenizer, const SearchConfig& config);

/// `steps` engine steps under one objective. After each step, when every
/// active behavior is strictly below `eps`, the active set grows by one.
RunResult run_single_objective(StepEngine& engine, SchedulerState state, Objective objective,
                               double eps, int steps);

/// Multi-behavior GCG baseline: full-sequence objective for T steps with
/// curriculum growth at eps_cas.
RunResult run_gcg_m(const Victim& victim, std::span<const Behavior> behaviors,
                    const SearchConfig& config);

}  // namespace degcg
