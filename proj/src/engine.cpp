#include "degcg/engine.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/core.h>

namespace degcg {

TopkTable topk_table(const GradientTable& grad, int k, const std::set<TokenId>& excluded) {
  const std::size_t vocab = grad.cols();
  std::size_t allowed = 0;
  for (std::size_t w = 0; w < vocab; ++w) {
    allowed += excluded.count(static_cast<TokenId>(w)) ? 0 : 1;
  }
  if (k < 1 || static_cast<std::size_t>(k) > allowed) {
    throw Error(ErrorKind::kConfig,
                fmt::format("topk {} not in [1, {}] after excluding {} tokens", k, allowed,
                            vocab - allowed));
  }
  TopkTable table(grad.rows());
  std::vector<TokenId> ids;
  for (std::size_t i = 0; i < grad.rows(); ++i) {
    ids.clear();
    for (std::size_t w = 0; w < vocab; ++w) {
      if (!excluded.count(static_cast<TokenId>(w))) ids.push_back(static_cast<TokenId>(w));
    }
    const auto row = static_cast<Eigen::Index>(i);
    std::partial_sort(ids.begin(), ids.begin() + k, ids.end(), [&](TokenId a, TokenId b) {
      const double sa = grad.scores(row, a);
      const double sb = grad.scores(row, b);
      return sa != sb ? sa > sb : a < b;
    });
    table[i].assign(ids.begin(), ids.begin() + k);
  }
  return table;
}

CandidateBatch sample_candidates(const Suffix& incumbent, const TopkTable& table,
                                 int batch_size, std::mt19937_64& rng) {
  if (batch_size < 1) throw Error(ErrorKind::kInput, "batch size must be >= 1");
  if (table.size() != incumbent.size()) {
    throw Error(ErrorKind::kInput, "top-k table does not cover every suffix position");
  }
  std::uniform_int_distribution<std::size_t> pick_pos(0, incumbent.size() - 1);
  CandidateBatch batch;
  batch.candidates.reserve(static_cast<std::size_t>(batch_size));
  batch.provenance.reserve(static_cast<std::size_t>(batch_size));
  for (int b = 0; b < batch_size; ++b) {
    const std::size_t pos = pick_pos(rng);
    const auto& options = table[pos];
    if (options.empty()) throw Error(ErrorKind::kInput, "empty top-k row");
    std::uniform_int_distribution<std::size_t> pick_tok(0, options.size() - 1);
    const TokenId tok = options[pick_tok(rng)];
    batch.candidates.push_back(incumbent.with_replacement(pos, tok));
    batch.provenance.push_back({pos, tok});
  }
  return batch;
}

Selection select(const Victim& victim, std::span<const Behavior> behaviors,
                 const Suffix& incumbent, const CandidateBatch& batch, Objective objective) {
  if (batch.candidates.empty()) throw Error(ErrorKind::kInput, "select: empty batch");
  double best_loss = aggregate_loss(victim, behaviors, incumbent, objective).total_loss;
  std::optional<std::size_t> best_index;
  for (std::size_t i = 0; i < batch.candidates.size(); ++i) {
    const double loss = aggregate_loss(victim, behaviors, batch.candidates[i], objective).total_loss;
    if (loss < best_loss) {
      best_loss = loss;
      best_index = i;
    }
  }
  const Suffix& best = best_index ? batch.candidates[*best_index] : incumbent;
  return {best, aggregate(victim, behaviors, best, objective), best_index};
}

StepResult gcg_step(const Victim& victim, std::span<const Behavior> behaviors,
                    SchedulerState state, Objective objective, const SearchConfig& config) {
  if (state.m_j < 1 || state.m_j > behaviors.size()) {
    throw Error(ErrorKind::kInput,
                fmt::format("active behavior count {} outside [1, {}]", state.m_j,
                            behaviors.size()));
  }
  const auto active = behaviors.first(state.m_j);
  const std::size_t length = state.incumbent.size();

  const AggregateReport current = aggregate(victim, active, state.incumbent, objective);
  const TopkTable table =
      topk_table(current.grad, config.topk, victim.tokenizer().special_ids());
  const CandidateBatch batch = sample_candidates(state.incumbent, table, config.batch_size, state.rng);
  Selection chosen = select(victim, active, state.incumbent, batch, objective);

  if (chosen.best.size() != length) {
    throw Error(ErrorKind::kInput, "suffix length changed during a step");
  }

  StepTrace trace;
  trace.step = ++state.step;
  trace.stage = objective;
  trace.m_j = state.m_j;
  trace.chosen_loss = chosen.report.total_loss;
  trace.first_token_mean = chosen.report.first_token_mean();
  trace.sequence_mean = chosen.report.sequence_mean();
  trace.max_active_loss = chosen.report.max_loss(objective);
  if (chosen.chosen_index) trace.chosen = batch.provenance[*chosen.chosen_index];

  state.incumbent = std::move(chosen.best);
  return {std::move(state), trace, std::move(chosen.report)};
}

GcgEngine::GcgEngine(const Victim& victim, std::span<const Behavior> behaviors,
                     SearchConfig config)
    : victim_(victim), behaviors_(behaviors), config_(std::move(config)) {
  if (behaviors_.empty()) throw Error(ErrorKind::kInput, "engine needs at least one behavior");
}

StepEngine::Outcome GcgEngine::step(SchedulerState& state, Objective objective) {
  StepResult r = gcg_step(victim_, behaviors_, std::move(state), objective, config_);
  state = std::move(r.state);
  return {r.trace, std::move(r.report)};
}

Suffix initial_suffix(const Tokenizer& tokenizer, const SearchConfig& config) {
  const TokenId token = config.init_token.value_or(tokenizer.default_init_token());
  if (!tokenizer.contains(token)) {
    throw Error(ErrorKind::kConfig,
                fmt::format("init_token {} outside vocabulary of size {}", token, tokenizer.size()));
  }
  return Suffix::repeated(token, static_cast<std::size_t>(config.suffix_length), tokenizer.id());
}

RunResult run_single_objective(StepEngine& engine, SchedulerState state, Objective objective,
                               double eps, int steps) {
  RunResult result{std::move(state), {}, {}};
  result.state.stage_flag = objective == Objective::kFts ? StageFlag::kFts : StageFlag::kCas;
  result.trace.reserve(static_cast<std::size_t>(std::max(steps, 0)));
  const std::size_t total = engine.behavior_count();
  for (int t = 0; t < steps; ++t) {
    auto outcome = engine.step(result.state, objective);
    result.trace.push_back(outcome.trace);
    if (outcome.report.all_within(objective, eps, /*strict=*/true) && result.state.m_j < total) {
      ++result.state.m_j;
    }
    result.controller.push_back(
        {result.state.stage_flag, result.state.t_ac, result.state.m_j});
  }
  return result;
}

RunResult run_gcg_m(const Victim& victim, std::span<const Behavior> behaviors,
                    const SearchConfig& config) {
  config.validate(/*allow_zero_steps=*/true);
  if (config.mode != SearchMode::kGcgM) {
    throw Error(ErrorKind::kConfig,
                fmt::format("run_gcg_m called with mode '{}'", to_string(config.mode)));
  }
  GcgEngine engine(victim, behaviors, config);
  SchedulerState state(initial_suffix(victim.tokenizer(), config), config.seed);
  return run_single_objective(engine, std::move(state), Objective::kCas, config.eps_cas,
                              config.total_steps);
}

}  // namespace degcg
