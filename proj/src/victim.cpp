#include "degcg/victim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <fmt/core.h>

namespace degcg {

// ============================================================================
// Victim defaults
// ============================================================================

double Victim::relaxed_loss(const Behavior&, const Eigen::MatrixXd&,
                            Objective) const {
  throw Error(ErrorKind::kCapability, "victim does not support gradients");
}

std::pair<LossBreakdown, GradientTable> Victim::discrete_loss_and_grad(
    const Behavior&, const Suffix&, Objective) const {
  throw Error(ErrorKind::kCapability, "victim does not support gradients");
}

// ============================================================================
// AnalyticVictim
// ============================================================================

AnalyticVictim::AnalyticVictim(Tokenizer tokenizer, Eigen::MatrixXd logit_matrix,
                               Eigen::VectorXd bias)
    : tokenizer_(std::move(tokenizer)), m_(std::move(logit_matrix)), c_(std::move(bias)) {
  const auto v = static_cast<Eigen::Index>(tokenizer_.size());
  if (m_.rows() != v || m_.cols() != v) {
    throw Error(ErrorKind::kInput,
                fmt::format("logit matrix must be {}x{}, got {}x{}", v, v, m_.rows(),
                            m_.cols()));
  }
  if (c_.size() != v) {
    throw Error(ErrorKind::kInput,
                fmt::format("bias must have length {}, got {}", v, c_.size()));
  }
  if (!m_.allFinite() || !c_.allFinite()) {
    throw Error(ErrorKind::kInput, "victim parameters must be finite");
  }
}

AnalyticVictim AnalyticVictim::random(std::uint64_t seed, std::size_t vocab_size,
                                      double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  const auto v = static_cast<Eigen::Index>(vocab_size);
  Eigen::MatrixXd m(v, v);
  Eigen::VectorXd c(v);
  for (Eigen::Index r = 0; r < v; ++r) {
    for (Eigen::Index k = 0; k < v; ++k) m(r, k) = normal(rng);
  }
  for (Eigen::Index k = 0; k < v; ++k) c(k) = normal(rng);
  return AnalyticVictim(Tokenizer::toy_chars(vocab_size), std::move(m), std::move(c));
}

AnalyticVictim AnalyticVictim::from_json(const nlohmann::json& j) {
  auto require = [&](const char* name) -> const nlohmann::json& {
    if (!j.contains(name)) {
      throw Error(ErrorKind::kLoad, fmt::format("victim: missing field '{}'", name));
    }
    return j.at(name);
  };
  try {
    auto vocab = require("vocab").get<std::vector<std::string>>();
    auto flat = require("M").get<std::vector<double>>();
    auto bias = require("c").get<std::vector<double>>();
    std::set<TokenId> special;
    if (j.contains("special_ids")) {
      for (auto id : j.at("special_ids").get<std::vector<TokenId>>()) special.insert(id);
    }
    const std::size_t v = vocab.size();
    if (flat.size() != v * v) {
      throw Error(ErrorKind::kLoad,
                  fmt::format("victim: field 'M' has {} entries, expected {}", flat.size(),
                              v * v));
    }
    if (bias.size() != v) {
      throw Error(ErrorKind::kLoad,
                  fmt::format("victim: field 'c' has {} entries, expected {}", bias.size(), v));
    }
    std::string id;
    if (j.contains("tokenizer_id")) {
      id = j.at("tokenizer_id").get<std::string>();
    } else {
      id = fmt::format("vocab-{}", v);
    }
    const auto n = static_cast<Eigen::Index>(v);
    Eigen::MatrixXd m(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index k = 0; k < n; ++k) m(r, k) = flat[static_cast<std::size_t>(r * n + k)];
    }
    Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(bias.data(), n);
    return AnalyticVictim(Tokenizer(std::move(id), std::move(vocab), std::move(special)),
                          std::move(m), std::move(c));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kLoad, fmt::format("victim: {}", e.what()));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kLoad) throw;
    throw Error(ErrorKind::kLoad, fmt::format("victim: {}", e.what()));
  }
}

AnalyticVictim AnalyticVictim::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kLoad, fmt::format("cannot open victim '{}'", path.string()));
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kLoad, fmt::format("victim '{}': {}", path.string(), e.what()));
  }
  return from_json(j);
}

nlohmann::json AnalyticVictim::to_json() const {
  const auto n = m_.rows();
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(n * n));
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index k = 0; k < n; ++k) flat.push_back(m_(r, k));
  }
  std::vector<double> bias(c_.data(), c_.data() + c_.size());
  std::vector<TokenId> special(tokenizer_.special_ids().begin(),
                               tokenizer_.special_ids().end());
  return {{"tokenizer_id", tokenizer_.id()},
          {"vocab", tokenizer_.vocab()},
          {"M", flat},
          {"c", bias},
          {"special_ids", special}};
}

Eigen::VectorXd AnalyticVictim::counts(const TokenSeq& tokens) const {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(m_.rows());
  for (TokenId t : tokens) w(t) += 1.0;
  return w;
}

std::vector<double> AnalyticVictim::nll_from_weights(Eigen::VectorXd weights,
                                                     const TokenSeq& targets,
                                                     std::size_t scored,
                                                     Eigen::VectorXd* residual) const {
  std::vector<double> out;
  out.reserve(targets.size());
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const Eigen::VectorXd logits = c_ + m_.transpose() * weights;
    const double mx = logits.maxCoeff();
    const Eigen::ArrayXd shifted = (logits.array() - mx).exp();
    const double sum = shifted.sum();
    const TokenId y = targets[k];
    // (mx - logit_y) >= 0 and sum >= 1, so the result is never negative.
    out.push_back((mx - logits(y)) + std::log(sum));
    if (residual != nullptr && k < scored) {
      *residual += (shifted / sum).matrix();
      (*residual)(y) -= 1.0;
    }
    weights(y) += 1.0;
  }
  return out;
}

LossBreakdown AnalyticVictim::nll(const TokenSeq& context, const TokenSeq& targets) const {
  return LossBreakdown(nll_from_weights(counts(context), targets, 0, nullptr));
}

Eigen::VectorXd AnalyticVictim::next_logits(const TokenSeq& context) const {
  return c_ + m_.transpose() * counts(context);
}

std::vector<Eigen::VectorXd> AnalyticVictim::predicted_distributions(
    const TokenSeq& context, const TokenSeq& targets) const {
  std::vector<Eigen::VectorXd> out;
  Eigen::VectorXd w = counts(context);
  for (TokenId y : targets) {
    const Eigen::VectorXd logits = c_ + m_.transpose() * w;
    const Eigen::ArrayXd e = (logits.array() - logits.maxCoeff()).exp();
    out.emplace_back((e / e.sum()).matrix());
    w(y) += 1.0;
  }
  return out;
}

double AnalyticVictim::relaxed_loss(const Behavior& behavior, const Eigen::MatrixXd& relaxed,
                                    Objective objective) const {
  if (relaxed.cols() != m_.rows()) {
    throw Error(ErrorKind::kInput, "relaxed suffix width differs from vocabulary size");
  }
  Eigen::VectorXd w = counts(behavior.prompt.tokens);
  w += relaxed.colwise().sum().transpose();
  const auto nll = nll_from_weights(std::move(w), behavior.target.tokens, 0, nullptr);
  const std::size_t scored = scored_positions(objective, nll.size());
  double loss = 0.0;
  for (std::size_t k = 0; k < scored; ++k) loss += nll[k];
  return loss;
}

std::pair<LossBreakdown, GradientTable> AnalyticVictim::discrete_loss_and_grad(
    const Behavior& behavior, const Suffix& suffix, Objective objective) const {
  const std::size_t scored = scored_positions(objective, behavior.target.tokens.size());
  Eigen::VectorXd w = counts(behavior.prompt.tokens) + counts(suffix.tokens());
  Eigen::VectorXd residual = Eigen::VectorXd::Zero(m_.rows());
  auto nll = nll_from_weights(std::move(w), behavior.target.tokens, scored, &residual);

  // d loss / d x_i[w] = M[w] . sum_k (p_k - y_k), identical for every position i.
  const Eigen::VectorXd grad = m_ * residual;
  GradientTable table;
  table.scores.resize(static_cast<Eigen::Index>(suffix.size()), m_.rows());
  for (Eigen::Index i = 0; i < table.scores.rows(); ++i) {
    table.scores.row(i) = -grad.transpose();
  }
  return {LossBreakdown(std::move(nll)), std::move(table)};
}

// ============================================================================
// Free operations
// ============================================================================

TokenSeq concat(const TokenSeq& a, const TokenSeq& b) {
  TokenSeq out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

LossBreakdown forward_nll(const Victim& victim, const TokenSeq& context,
                          const TokenSeq& targets) {
  if (context.empty()) throw Error(ErrorKind::kInput, "forward_nll: empty context");
  if (targets.empty()) throw Error(ErrorKind::kInput, "forward_nll: empty targets");
  victim.tokenizer().check_ids(context, "forward_nll context");
  victim.tokenizer().check_ids(targets, "forward_nll targets");
  return victim.nll(context, targets);
}

std::size_t scored_positions(Objective objective, std::size_t target_length) {
  if (target_length == 0) throw Error(ErrorKind::kInput, "empty target");
  return objective == Objective::kFts ? 1 : target_length;
}

namespace {

void check_pairing(const Victim& victim, const Behavior& behavior, const Suffix& suffix) {
  const auto& tok = victim.tokenizer();
  if (suffix.tokenizer_id() != tok.id()) {
    throw Error(ErrorKind::kInput,
                fmt::format("suffix tokenizer '{}' differs from victim tokenizer '{}'",
                            suffix.tokenizer_id(), tok.id()));
  }
  if (!behavior.tokenizer_id.empty() && behavior.tokenizer_id != tok.id()) {
    throw Error(ErrorKind::kInput,
                fmt::format("behavior '{}' tokenized with '{}', victim uses '{}'",
                            behavior.id, behavior.tokenizer_id, tok.id()));
  }
  if (behavior.prompt.tokens.empty()) {
    throw Error(ErrorKind::kInput, fmt::format("behavior '{}' has an empty prompt", behavior.id));
  }
  if (behavior.target.tokens.empty()) {
    throw Error(ErrorKind::kInput, fmt::format("behavior '{}' has an empty target", behavior.id));
  }
  tok.check_ids(behavior.prompt.tokens, "prompt");
  tok.check_ids(behavior.target.tokens, "target");
  tok.check_ids(suffix.tokens(), "suffix");
}

}  // namespace

std::pair<LossBreakdown, GradientTable> loss_and_grad(const Victim& victim,
                                                      const Behavior& behavior,
                                                      const Suffix& suffix,
                                                      Objective objective) {
  if (!victim.capabilities().supports_gradient) {
    throw Error(ErrorKind::kCapability, "victim does not support gradients");
  }
  check_pairing(victim, behavior, suffix);
  return victim.discrete_loss_and_grad(behavior, suffix, objective);
}

double finite_diff_check(const Victim& victim, const Behavior& behavior,
                         const Suffix& suffix, Objective objective, double h) {
  if (!(h > 0.0)) throw Error(ErrorKind::kInput, "finite difference step must be > 0");
  auto [loss, table] = loss_and_grad(victim, behavior, suffix, objective);

  const auto v = static_cast<Eigen::Index>(victim.vocab_size());
  const auto n = static_cast<Eigen::Index>(suffix.size());
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, v);
  for (Eigen::Index i = 0; i < n; ++i) x(i, suffix[static_cast<std::size_t>(i)]) = 1.0;

  double worst = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index w = 0; w < v; ++w) {
      const double saved = x(i, w);
      x(i, w) = saved + h;
      const double up = victim.relaxed_loss(behavior, x, objective);
      x(i, w) = saved - h;
      const double down = victim.relaxed_loss(behavior, x, objective);
      x(i, w) = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = -table.scores(i, w);
      worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic)));
    }
  }
  return worst;
}

TokenSeq greedy_decode(const Victim& victim, const TokenSeq& context, int max_len) {
  if (max_len < 1) throw Error(ErrorKind::kInput, "greedy_decode: max_len must be >= 1");
  if (!victim.capabilities().supports_decode) {
    throw Error(ErrorKind::kCapability, "victim does not support decoding");
  }
  victim.tokenizer().check_ids(context, "greedy_decode context");
  TokenSeq ctx = context;
  TokenSeq out;
  for (int step = 0; step < max_len; ++step) {
    const Eigen::VectorXd logits = victim.next_logits(ctx);
    Eigen::Index best = 0;
    for (Eigen::Index w = 1; w < logits.size(); ++w) {
      if (logits(w) > logits(best)) best = w;
    }
    out.push_back(static_cast<TokenId>(best));
    ctx.push_back(static_cast<TokenId>(best));
  }
  return out;
}

}  // namespace degcg
