#include "degcg/schedulers.hpp"

#include <fmt/core.h>

#include "degcg/util.hpp"

namespace degcg {

namespace {

void record(RunResult& r, const StepEngine::Outcome& outcome) {
  r.trace.push_back(outcome.trace);
  r.controller.push_back({r.state.stage_flag, r.state.t_ac, r.state.m_j});
}

void require_mode(const SearchConfig& config, SearchMode mode, std::string_view caller) {
  if (config.mode != mode) {
    throw Error(ErrorKind::kConfig,
                fmt::format("{} called with mode '{}'", caller, to_string(config.mode)));
  }
}

}  // namespace

RunResult run_degcg(StepEngine& engine, SchedulerState state, const SearchConfig& config) {
  config.validate(/*allow_zero_steps=*/true);
  RunResult r{std::move(state), {}, {}};
  const std::size_t total = engine.behavior_count();

  r.state.stage_flag = StageFlag::kFts;
  int fts_steps = 0;
  while (fts_steps < config.fts_max_steps && fts_steps < config.total_steps) {
    auto outcome = engine.step(r.state, Objective::kFts);
    ++fts_steps;
    bool finished = false;
    if (outcome.report.all_within(Objective::kFts, config.eps_fts, /*strict=*/true)) {
      if (r.state.m_j < total) {
        ++r.state.m_j;
      } else {
        finished = true;
      }
    }
    record(r, outcome);
    if (finished) break;
  }

  r.state.stage_flag = StageFlag::kCas;
  for (int t = fts_steps; t < config.total_steps; ++t) {
    auto outcome = engine.step(r.state, Objective::kCas);
    if (outcome.report.all_within(Objective::kCas, config.eps_cas, /*strict=*/true) &&
        r.state.m_j < total) {
      ++r.state.m_j;
    }
    record(r, outcome);
  }
  return r;
}

RunResult run_degcg(const Victim& victim, std::span<const Behavior> behaviors,
                    const SearchConfig& config) {
  require_mode(config, SearchMode::kDegcg, "run_degcg");
  return run_search(victim, behaviors, config);
}

RunResult run_idegcg(StepEngine& engine, SchedulerState state, const SearchConfig& config) {
  config.validate(/*allow_zero_steps=*/true);
  RunResult r{std::move(state), {}, {}};
  const std::size_t total = engine.behavior_count();
  r.state.t_ac = 0;
  r.state.m_j = std::max<std::size_t>(r.state.m_j, 1);

  for (int t = 0; t < config.total_steps; ++t) {
    const bool fts = r.state.stage_flag == StageFlag::kFts;
    const Objective objective = fts ? Objective::kFts : Objective::kCas;
    const double eps = fts ? config.eps_fts : config.eps_cas;
    const int cap = fts ? config.stage_max_fts : config.stage_max_cas;

    auto outcome = engine.step(r.state, objective);
    const auto& report = outcome.report;

    if (report.all_within(objective, eps, /*strict=*/false) || r.state.t_ac >= cap) {
      r.state.stage_flag = fts ? StageFlag::kCas : StageFlag::kFts;
      r.state.t_ac = 0;
    } else {
      ++r.state.t_ac;
    }

    if (report.all_within(Objective::kFts, config.eps_fts, /*strict=*/false) &&
        report.all_within(Objective::kCas, config.eps_cas, /*strict=*/false) &&
        r.state.m_j < total) {
      ++r.state.m_j;
    }
    record(r, outcome);
  }
  return r;
}

RunResult run_idegcg(const Victim& victim, std::span<const Behavior> behaviors,
                     const SearchConfig& config) {
  require_mode(config, SearchMode::kIdegcg, "run_idegcg");
  return run_search(victim, behaviors, config);
}

RunResult run_search(const Victim& victim, std::span<const Behavior> behaviors,
                     const SearchConfig& config, std::optional<Suffix> initial) {
  config.validate(/*allow_zero_steps=*/true);
  Suffix start = initial ? std::move(*initial) : initial_suffix(victim.tokenizer(), config);
  if (start.size() != static_cast<std::size_t>(config.suffix_length)) {
    throw Error(ErrorKind::kConfig,
                fmt::format("initial suffix has length {}, config expects {}", start.size(),
                            config.suffix_length));
  }
  if (start.tokenizer_id() != victim.tokenizer().id()) {
    throw Error(ErrorKind::kInput,
                fmt::format("initial suffix tokenizer '{}' differs from victim tokenizer '{}'",
                            start.tokenizer_id(), victim.tokenizer().id()));
  }
  GcgEngine engine(victim, behaviors, config);
  SchedulerState state(std::move(start), config.seed);
  switch (config.mode) {
    case SearchMode::kGcgM:
    case SearchMode::kCas:
      return run_single_objective(engine, std::move(state), Objective::kCas, config.eps_cas,
                                  config.total_steps);
    case SearchMode::kFts:
      return run_single_objective(engine, std::move(state), Objective::kFts, config.eps_fts,
                                  config.total_steps);
    case SearchMode::kDegcg:
      return run_degcg(engine, std::move(state), config);
    case SearchMode::kIdegcg:
      return run_idegcg(engine, std::move(state), config);
  }
  throw Error(ErrorKind::kConfig, "unknown search mode");
}

// ---------------------------------------------------------------------------
// Initialization and transfer
// ---------------------------------------------------------------------------

Suffix self_repeat_init(const Suffix& base, int times, std::size_t target_length) {
  if (times < 1) throw Error(ErrorKind::kInput, "self-repetition count must be >= 1");
  const std::size_t expected = base.size() * static_cast<std::size_t>(times);
  if (target_length != expected) {
    throw Error(ErrorKind::kInput,
                fmt::format("target length {} is not {} x {} = {}", target_length, base.size(),
                            times, expected));
  }
  TokenSeq tokens;
  tokens.reserve(expected);
  for (int t = 0; t < times; ++t) {
    tokens.insert(tokens.end(), base.tokens().begin(), base.tokens().end());
  }
  return Suffix(std::move(tokens), base.tokenizer_id());
}

Suffix retokenize_transfer(std::string_view source_text, const Tokenizer& target,
                           std::size_t length, TokenId filler) {
  if (!target.contains(filler)) {
    throw Error(ErrorKind::kInput,
                fmt::format("filler {} outside target vocabulary of size {}", filler, target.size()));
  }
  if (length < 1) throw Error(ErrorKind::kInput, "transfer length must be >= 1");
  TokenSeq tokens = target.encode(source_text);
  if (tokens.empty()) {
    throw Error(ErrorKind::kTransfer,
                fmt::format("'{}' encodes to no tokens under '{}'", source_text, target.id()));
  }
  tokens.resize(length, filler);
  return Suffix(std::move(tokens), target.id());
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

nlohmann::json Checkpoint::to_json() const {
  nlohmann::json j = {
      {"suffix_ids", suffix_ids},
      {"suffix_text", suffix_text},
      {"tokenizer_id", tokenizer_id},
      {"mode", mode},
      {"step", step},
      {"m_j", m_j},
      {"stage_flag", stage_flag},
      {"losses", {{"fts", loss_fts}, {"cas", loss_cas}}},
      {"config_digest", config_digest},
      {"seed", seed},
  };
  if (!lineage.empty()) j["lineage"] = lineage;
  return j;
}

Checkpoint Checkpoint::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorKind::kLoad, "checkpoint is not a JSON object");
  Checkpoint cp;
  const char* current = "";
  auto at = [&](const char* name) -> const nlohmann::json& {
    current = name;
    if (!j.contains(name)) {
      throw Error(ErrorKind::kLoad, fmt::format("checkpoint: missing field '{}'", name));
    }
    return j.at(name);
  };
  try {
    cp.suffix_ids = at("suffix_ids").get<TokenSeq>();
    cp.suffix_text = at("suffix_text").get<std::string>();
    cp.tokenizer_id = at("tokenizer_id").get<std::string>();
    cp.mode = at("mode").get<std::string>();
    cp.step = at("step").get<int>();
    cp.m_j = at("m_j").get<std::size_t>();
    cp.stage_flag = at("stage_flag").get<int>();
    const auto& losses = at("losses");
    current = "losses";
    cp.loss_fts = losses.at("fts").get<double>();
    cp.loss_cas = losses.at("cas").get<double>();
    cp.config_digest = at("config_digest").get<std::string>();
    cp.seed = at("seed").get<std::uint64_t>();
    if (j.contains("lineage")) {
      current = "lineage";
      cp.lineage = j.at("lineage").get<std::vector<std::string>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kLoad, fmt::format("checkpoint: field '{}': {}", current, e.what()));
  }
  if (cp.suffix_ids.empty()) throw Error(ErrorKind::kLoad, "checkpoint: field 'suffix_ids' is empty");
  for (TokenId t : cp.suffix_ids) {
    if (t < 0) throw Error(ErrorKind::kLoad, "checkpoint: field 'suffix_ids' has a negative id");
  }
  if (cp.stage_flag != 0 && cp.stage_flag != 1) {
    throw Error(ErrorKind::kLoad, "checkpoint: field 'stage_flag' must be 0 or 1");
  }
  return cp;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_file_atomic(path, checkpoint.to_json().dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kLoad, fmt::format("checkpoint '{}': {}", path.string(), e.what()));
  }
  return Checkpoint::from_json(j);
}

std::string checkpoint_digest(const std::filesystem::path& path) {
  return sha256_hex(read_file(path));
}

SchedulerState resume_from_checkpoint(const Checkpoint& checkpoint, const Victim& target,
                                      const SearchConfig& config, std::optional<TokenId> filler) {
  const auto& tok = target.tokenizer();
  const auto length = static_cast<std::size_t>(config.suffix_length);
  if (checkpoint.tokenizer_id == tok.id()) {
    tok.check_ids(checkpoint.suffix_ids, "checkpoint suffix");
    if (checkpoint.suffix_ids.size() != length) {
      throw Error(ErrorKind::kConfig,
                  fmt::format("checkpoint suffix has length {}, config expects {}",
                              checkpoint.suffix_ids.size(), length));
    }
    return SchedulerState(checkpoint.suffix(), config.seed);
  }
  if (!filler) {
    throw Error(ErrorKind::kTransfer,
                fmt::format("checkpoint tokenizer '{}' differs from '{}' and no filler token is "
                            "configured",
                            checkpoint.tokenizer_id, tok.id()));
  }
  return SchedulerState(retokenize_transfer(checkpoint.suffix_text, tok, length, *filler),
                        config.seed);
}

SchedulerState resume_from_checkpoint(const std::filesystem::path& path, const Victim& target,
                                      const SearchConfig& config, std::optional<TokenId> filler) {
  return resume_from_checkpoint(load_checkpoint(path), target, config, filler);
}

}  // namespace degcg
