#include "degcg/objectives.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/core.h>

namespace degcg {

double fts_objective(std::span<const double> per_token_nll) {
  if (per_token_nll.empty()) throw Error(ErrorKind::kInput, "fts objective: empty target");
  return per_token_nll.front();
}

double cas_objective(std::span<const double> per_token_nll) {
  if (per_token_nll.empty()) throw Error(ErrorKind::kInput, "cas objective: empty target");
  return std::accumulate(per_token_nll.begin(), per_token_nll.end(), 0.0);
}

double objective_loss(const LossBreakdown& breakdown, Objective objective) {
  const auto& nll = breakdown.per_token_nll();
  return objective == Objective::kFts ? fts_objective(nll) : cas_objective(nll);
}

bool AggregateReport::all_within(Objective objective, double eps, bool strict) const {
  return std::all_of(per_behavior.begin(), per_behavior.end(), [&](const LossBreakdown& b) {
    const double v = objective_loss(b, objective);
    return strict ? v < eps : v <= eps;
  });
}

double AggregateReport::max_loss(Objective objective) const {
  double worst = 0.0;
  for (const auto& b : per_behavior) worst = std::max(worst, objective_loss(b, objective));
  return worst;
}

double AggregateReport::first_token_mean() const {
  if (per_behavior.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& b : per_behavior) sum += b.first_token();
  return sum / static_cast<double>(per_behavior.size());
}

double AggregateReport::sequence_mean() const {
  if (per_behavior.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& b : per_behavior) sum += b.sequence_mean();
  return sum / static_cast<double>(per_behavior.size());
}

namespace {

void check_set(const Victim& victim, std::span<const Behavior> behaviors) {
  if (behaviors.empty()) throw Error(ErrorKind::kInput, "aggregate: no active behaviors");
  for (const auto& b : behaviors) {
    if (!b.tokenizer_id.empty() && b.tokenizer_id != victim.tokenizer().id()) {
      throw Error(ErrorKind::kInput,
                  fmt::format("behavior '{}' tokenized with '{}', victim uses '{}'", b.id,
                              b.tokenizer_id, victim.tokenizer().id()));
    }
  }
}

}  // namespace

AggregateReport aggregate(const Victim& victim, std::span<const Behavior> behaviors,
                          const Suffix& suffix, Objective objective) {
  check_set(victim, behaviors);
  AggregateReport report;
  report.per_behavior.reserve(behaviors.size());
  report.grad.scores = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(suffix.size()),
                                             static_cast<Eigen::Index>(victim.vocab_size()));
  for (const auto& b : behaviors) {
    auto [loss, grad] = loss_and_grad(victim, b, suffix, objective);
    report.total_loss += objective_loss(loss, objective);
    report.grad.scores += grad.scores;
    report.per_behavior.push_back(std::move(loss));
  }
  return report;
}

AggregateReport aggregate_loss(const Victim& victim, std::span<const Behavior> behaviors,
                               const Suffix& suffix, Objective objective) {
  check_set(victim, behaviors);
  if (suffix.tokenizer_id() != victim.tokenizer().id()) {
    throw Error(ErrorKind::kInput, "suffix tokenizer differs from victim tokenizer");
  }
  AggregateReport report;
  report.per_behavior.reserve(behaviors.size());
  for (const auto& b : behaviors) {
    auto loss = forward_nll(victim, concat(b.prompt.tokens, suffix.tokens()), b.target.tokens);
    report.total_loss += objective_loss(loss, objective);
    report.per_behavior.push_back(std::move(loss));
  }
  return report;
}

}  // namespace degcg
