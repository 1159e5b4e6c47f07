#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "degcg/core.hpp"
#include "degcg/tokenizer.hpp"

namespace degcg {

/// Row i holds, for every vocabulary token w, the negative gradient of the
/// active loss with respect to the one-hot coordinate e_{s_i}[w].
struct GradientTable {
  Eigen::MatrixXd scores;  // suffix_length x vocab_size

  std::size_t rows() const { return static_cast<std::size_t>(scores.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(scores.cols()); }
  bool all_finite() const { return scores.allFinite(); }
};

struct Capabilities {
  bool supports_gradient = false;
  bool supports_decode = false;
};

/// A differentiable victim model. Implementations must be pure and reentrant:
/// one handle may serve many concurrent evaluations.
///
/// An adapter for a real model provides teacher-forced NLL, next-token logits
/// for decoding and, when it supports gradients, the loss and its gradient in
/// the one-hot relaxation of the suffix. Prompt and suffix are concatenated
/// as-is; chat templates are the adapter's concern.
class Victim {
 public:
  virtual ~Victim() = default;

  virtual const Tokenizer& tokenizer() const = 0;
  virtual Capabilities capabilities() const = 0;

  std::size_t vocab_size() const { return tokenizer().size(); }

  /// per_token_nll[k] = -log p(target[k] | context, target[0..k)).
  virtual LossBreakdown nll(const TokenSeq& context,
                            const TokenSeq& targets) const = 0;

  /// Logits of the next token after `context`.
  virtual Eigen::VectorXd next_logits(const TokenSeq& context) const = 0;

  /// Objective-restricted loss of prompt + relaxed suffix. `relaxed` is
  /// suffix_length x vocab_size; a one-hot matrix reproduces the discrete
  /// loss.
  virtual double relaxed_loss(const Behavior& behavior,
                              const Eigen::MatrixXd& relaxed,
                              Objective objective) const;

  /// Loss breakdown and gradient table at a discrete suffix.
  virtual std::pair<LossBreakdown, GradientTable> discrete_loss_and_grad(
      const Behavior& behavior, const Suffix& suffix,
      Objective objective) const;
};

/// Bag-of-tokens victim: the next-token distribution after context t_1..t_k is
/// softmax(c + sum_i M[t_i]). Order-free by construction, with closed-form
/// gradients.
class AnalyticVictim final : public Victim {
 public:
  AnalyticVictim(Tokenizer tokenizer, Eigen::MatrixXd logit_matrix,
                 Eigen::VectorXd bias);

  /// Entries of M and c drawn i.i.d. N(0, scale^2).
  static AnalyticVictim random(std::uint64_t seed, std::size_t vocab_size,
                               double scale = 1.0);

  static AnalyticVictim from_json(const nlohmann::json& j);
  static AnalyticVictim load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  const Tokenizer& tokenizer() const override { return tokenizer_; }
  Capabilities capabilities() const override { return {true, true}; }

  const Eigen::MatrixXd& logit_matrix() const noexcept { return m_; }
  const Eigen::VectorXd& bias() const noexcept { return c_; }

  LossBreakdown nll(const TokenSeq& context,
                    const TokenSeq& targets) const override;
  Eigen::VectorXd next_logits(const TokenSeq& context) const override;
  double relaxed_loss(const Behavior& behavior, const Eigen::MatrixXd& relaxed,
                      Objective objective) const override;
  std::pair<LossBreakdown, GradientTable> discrete_loss_and_grad(
      const Behavior& behavior, const Suffix& suffix,
      Objective objective) const override;

  /// Per-position predicted distributions under teacher forcing.
  std::vector<Eigen::VectorXd> predicted_distributions(
      const TokenSeq& context, const TokenSeq& targets) const;

 private:
  Eigen::VectorXd counts(const TokenSeq& tokens) const;
  /// Teacher-forced NLLs from a context weight vector; optionally accumulates
  /// the residual sum of (p - y) over the scored positions.
  std::vector<double> nll_from_weights(Eigen::VectorXd weights,
                                       const TokenSeq& targets,
                                       std::size_t scored,
                                       Eigen::VectorXd* residual) const;

  Tokenizer tokenizer_;
  Eigen::MatrixXd m_;
  Eigen::VectorXd c_;
};

// ============================================================================
// Free operations over any Victim
// ============================================================================

TokenSeq concat(const TokenSeq& a, const TokenSeq& b);

/// Teacher-forced NLL of `targets` after `context`.
LossBreakdown forward_nll(const Victim& victim, const TokenSeq& context,
                          const TokenSeq& targets);

/// Number of target positions scored by an objective.
std::size_t scored_positions(Objective objective, std::size_t target_length);

/// Objective-restricted loss and its one-hot gradient for prompt + suffix.
/// The returned breakdown always covers every target position.
std::pair<LossBreakdown, GradientTable> loss_and_grad(const Victim& victim,
                                                      const Behavior& behavior,
                                                      const Suffix& suffix,
                                                      Objective objective);

/// Max over (i, w) of |analytic - central difference| / max(1, |analytic|).
double finite_diff_check(const Victim& victim, const Behavior& behavior,
                         const Suffix& suffix, Objective objective, double h);

/// Argmax decoding; ties go to the lowest token id.
TokenSeq greedy_decode(const Victim& victim, const TokenSeq& context,
                       int max_len);

}  // namespace degcg
