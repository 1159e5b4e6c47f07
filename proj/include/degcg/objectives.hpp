#pragma once

#include <span>
#include <vector>

#include "degcg/core.hpp"
#include "degcg/victim.hpp"

namespace degcg {

/// First-token NLL: the pre-search objective.
double fts_objective(std::span<const double> per_token_nll);

/// Full-target NLL sum: the content-aware objective. Includes the first token.
double cas_objective(std::span<const double> per_token_nll);

double objective_loss(const LossBreakdown& breakdown, Objective objective);

struct AggregateReport {
  double total_loss = 0.0;
  std::vector<LossBreakdown> per_behavior;
  GradientTable grad;

  /// Objective-restricted loss of behavior j.
  double behavior_loss(std::size_t j, Objective objective) const {
    return objective_loss(per_behavior.at(j), objective);
  }
  /// True when every behavior's objective loss is <= eps (or < eps if strict).
  bool all_within(Objective objective, double eps, bool strict) const;
  double max_loss(Objective objective) const;
  double first_token_mean() const;
  /// Mean over behaviors of the per-token mean NLL.
  double sequence_mean() const;
};

/// Unweighted sum of per-behavior losses and gradients at a shared suffix.
/// Reduction order is the input order.
AggregateReport aggregate(const Victim& victim, std::span<const Behavior> behaviors,
                          const Suffix& suffix, Objective objective);

/// Loss-only evaluation used for candidate ranking; no gradient table.
AggregateReport aggregate_loss(const Victim& victim, std::span<const Behavior> behaviors,
                               const Suffix& suffix, Objective objective);

}  // namespace degcg
