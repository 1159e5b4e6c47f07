#include "degcg/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <iostream>
#include <random>
#include <set>

#include <fmt/core.h>

#include "CLI11.hpp"
#include "degcg/refusal_instance.hpp"
#include "degcg/schedulers.hpp"
#include "degcg/util.hpp"
#include "degcg/victim.hpp"

namespace degcg {

namespace fs = std::filesystem;
using nlohmann::json;

// ============================================================================
// Behavior files
// ============================================================================

BehaviorSet load_behaviors(const fs::path& path, const Tokenizer& tokenizer,
                           std::optional<Split> split, std::optional<Category> category) {
  const std::string text = read_file(path);
  std::vector<Behavior> all;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string::npos) nl = text.size();
    std::string_view line(text.data() + start, nl - start);
    start = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kData,
                  fmt::format("{}:{}: malformed JSON: {}", path.string(), line_no, e.what()));
    }
    Behavior b;
    try {
      b = validate_behavior(record, tokenizer);
    } catch (const Error& e) {
      throw Error(e.kind(), fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    }
    if (!seen.insert(b.id).second) {
      throw Error(ErrorKind::kData,
                  fmt::format("{}:{}: duplicate behavior id '{}'", path.string(), line_no, b.id));
    }
    all.push_back(std::move(b));
  }
  BehaviorSet out;
  out.behaviors = filter_behaviors(all, split, category);
  for (const auto& b : out.behaviors) ++out.counts[b.category];
  return out;
}

std::vector<Behavior> filter_behaviors(const std::vector<Behavior>& behaviors,
                                       std::optional<Split> split,
                                       std::optional<Category> category) {
  std::vector<Behavior> out;
  for (const auto& b : behaviors) {
    if (split && b.split != *split) continue;
    if (category && b.category != *category) continue;
    out.push_back(b);
  }
  return out;
}

std::optional<Category> harmbench_category(std::string_view native) {
  static const std::pair<std::string_view, Category> kMap[] = {
      {"chemical_biological", Category::kChemicalBiological},
      {"misinformation_disinformation", Category::kMisinformation},
      {"illegal", Category::kIllegal},
      {"cybercrime_intrusion", Category::kCybercrime},
      {"harmful", Category::kHarmful},
      {"harassment_bullying", Category::kHarassmentBullying},
  };
  for (const auto& [name, cat] : kMap) {
    if (name == native) return cat;
  }
  return parse_category(native);
}

// ============================================================================
// Run configuration files
// ============================================================================

std::unique_ptr<Judge> JudgeSpec::make() const {
  if (prefix_k) return std::make_unique<PrefixJudge>(*prefix_k);
  return std::make_unique<KeywordJudge>(keywords);
}

json JudgeSpec::to_json() const {
  if (prefix_k) return {{"prefix_k", *prefix_k}};
  return {{"keywords", keywords}};
}

namespace {

const std::set<std::string>& search_keys() {
  static const std::set<std::string> keys = {
      "suffix_length", "topk",          "batch_size",    "total_steps",
      "fts_max_steps", "eps_fts",       "eps_cas",       "stage_max_fts",
      "stage_max_cas", "init_token",    "seed",          "mode"};
  return keys;
}

const std::set<std::string>& file_keys() {
  static const std::set<std::string> keys = {
      "victim_path", "behaviors_path", "split",        "category",  "output_dir",
      "judge",       "max_gen_len",    "filler_token", "asr_splits"};
  return keys;
}

[[noreturn]] void config_error(const std::string& message) {
  throw Error(ErrorKind::kConfig, message);
}

JudgeSpec judge_from_json(const json& j) {
  if (!j.is_object()) config_error("field 'judge' must be an object");
  JudgeSpec parsed{std::nullopt, {}};
  for (const auto& [key, value] : j.items()) {
    if (key != "prefix_k" && key != "keywords") {
      config_error(fmt::format("field 'judge': unknown key '{}'", key));
    }
  }
  if (j.contains("prefix_k") == j.contains("keywords")) {
    config_error("field 'judge' needs exactly one of 'prefix_k' or 'keywords'");
  }
  try {
    if (j.contains("prefix_k")) {
      parsed.prefix_k = j.at("prefix_k").get<int>();
      if (*parsed.prefix_k < 1) config_error("field 'judge.prefix_k' must be >= 1");
    } else {
      parsed.keywords = j.at("keywords").get<std::vector<std::string>>();
      if (parsed.keywords.empty()) config_error("field 'judge.keywords' must be nonempty");
    }
  } catch (const json::exception& e) {
    config_error(fmt::format("field 'judge': {}", e.what()));
  }
  return parsed;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  if (path.is_relative() && !base.empty()) path = base / path;
  return path.lexically_normal();
}

}  // namespace

RunConfigFile RunConfigFile::from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) config_error("run config must be a JSON object");
  json search = json::object();
  for (const auto& [key, value] : j.items()) {
    if (search_keys().count(key)) {
      search[key] = value;
    } else if (!file_keys().count(key)) {
      config_error(fmt::format("unknown config key '{}'", key));
    }
  }
  RunConfigFile cfg;
  cfg.search = SearchConfig::from_json(search);
  cfg.search.validate();
  cfg.suffix_length_given = j.contains("suffix_length");

  const char* field = "";
  try {
    field = "victim_path";
    if (!j.contains(field)) config_error("missing config key 'victim_path'");
    cfg.victim_path = resolve(base_dir, j.at(field).get<std::string>());
    field = "behaviors_path";
    if (!j.contains(field)) config_error("missing config key 'behaviors_path'");
    cfg.behaviors_path = resolve(base_dir, j.at(field).get<std::string>());
    field = "output_dir";
    if (j.contains(field)) cfg.output_dir = resolve(base_dir, j.at(field).get<std::string>());
    field = "split";
    if (j.contains(field)) {
      if (j.at(field).is_null()) {
        cfg.split.reset();
      } else {
        const auto s = j.at(field).get<std::string>();
        cfg.split = parse_split(s);
        if (!cfg.split) config_error(fmt::format("field 'split': unknown split '{}'", s));
      }
    }
    field = "category";
    if (j.contains(field) && !j.at(field).is_null()) {
      const auto s = j.at(field).get<std::string>();
      cfg.category = parse_category(s);
      if (!cfg.category) config_error(fmt::format("field 'category': unknown category '{}'", s));
    }
    field = "judge";
    if (j.contains(field)) cfg.judge = judge_from_json(j.at(field));
    field = "max_gen_len";
    if (j.contains(field)) {
      cfg.max_gen_len = j.at(field).get<int>();
      if (cfg.max_gen_len < 1) config_error("field 'max_gen_len' must be >= 1");
    }
    field = "filler_token";
    if (j.contains(field) && !j.at(field).is_null()) {
      const auto& f = j.at(field);
      if (!f.is_string() && !f.is_number_integer()) {
        config_error("field 'filler_token' must be a symbol string or a token id");
      }
      cfg.filler_token = f;
    }
    field = "asr_splits";
    if (j.contains(field)) {
      cfg.asr_splits.clear();
      for (const auto& s : j.at(field).get<std::vector<std::string>>()) {
        auto parsed = parse_split(s);
        if (!parsed) config_error(fmt::format("field 'asr_splits': unknown split '{}'", s));
        cfg.asr_splits.push_back(*parsed);
      }
    }
  } catch (const json::exception& e) {
    config_error(fmt::format("field '{}': {}", field, e.what()));
  }
  return cfg;
}

RunConfigFile RunConfigFile::load(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    config_error(e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    config_error(fmt::format("'{}': {}", path.string(), e.what()));
  }
  return from_json(j, path.parent_path());
}

void RunConfigFile::apply_env_overrides() {
  if (const char* dir = std::getenv("DEGCG_OUTPUT_DIR"); dir && *dir) output_dir = dir;
  if (const char* seed = std::getenv("DEGCG_SEED"); seed && *seed) {
    std::uint64_t value = 0;
    const char* end = seed + std::char_traits<char>::length(seed);
    auto [ptr, ec] = std::from_chars(seed, end, value);
    if (ec != std::errc{} || ptr != end) {
      config_error(fmt::format("DEGCG_SEED '{}' is not an unsigned integer", seed));
    }
    search.seed = value;
  }
}

json RunConfigFile::to_json() const {
  json j = search.to_json();
  j["victim_path"] = victim_path.string();
  j["behaviors_path"] = behaviors_path.string();
  j["split"] = split ? json(std::string(to_string(*split))) : json(nullptr);
  j["category"] = category ? json(std::string(to_string(*category))) : json(nullptr);
  j["output_dir"] = output_dir.string();
  j["judge"] = judge.to_json();
  j["max_gen_len"] = max_gen_len;
  j["filler_token"] = filler_token ? *filler_token : json(nullptr);
  json splits = json::array();
  for (Split s : asr_splits) splits.push_back(std::string(to_string(s)));
  j["asr_splits"] = splits;
  return j;
}

std::string RunConfigFile::digest() const {
  json j = to_json();
  j.erase("output_dir");
  return sha256_hex(j.dump());
}

std::optional<TokenId> RunConfigFile::resolve_filler(const Tokenizer& tokenizer) const {
  if (!filler_token) return std::nullopt;
  if (filler_token->is_string()) {
    const auto symbol = filler_token->get<std::string>();
    auto id = tokenizer.find(symbol);
    if (!id) {
      config_error(fmt::format("filler symbol '{}' is not in tokenizer '{}'", symbol,
                               tokenizer.id()));
    }
    return id;
  }
  const auto id = filler_token->get<TokenId>();
  if (!tokenizer.contains(id)) {
    config_error(fmt::format("filler id {} is outside tokenizer '{}'", id, tokenizer.id()));
  }
  return id;
}

// ============================================================================
// Commands
// ============================================================================

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
      return kExitConfig;
    case ErrorKind::kSchema:
    case ErrorKind::kLoad:
    case ErrorKind::kFormat:
    case ErrorKind::kData:
      return kExitData;
    default:
      return kExitRuntime;
  }
}

namespace {

struct LoadedRun {
  RunConfigFile cfg;
  AnalyticVictim victim;
  std::vector<Behavior> all;
  std::vector<Behavior> train;
};

LoadedRun load_run(const fs::path& config_path) {
  RunConfigFile cfg = RunConfigFile::load(config_path);
  cfg.apply_env_overrides();
  AnalyticVictim victim = AnalyticVictim::load(cfg.victim_path);
  auto all = load_behaviors(cfg.behaviors_path, victim.tokenizer()).behaviors;
  auto train = filter_behaviors(all, cfg.split, cfg.category);
  if (train.empty()) {
    throw Error(ErrorKind::kData,
                fmt::format("no behaviors in '{}' match the configured filters",
                            cfg.behaviors_path.string()));
  }
  return {std::move(cfg), std::move(victim), std::move(all), std::move(train)};
}

json behavior_counts(const std::vector<Behavior>& behaviors) {
  json out = json::object();
  for (Category c : kAllCategories) {
    const auto n = std::count_if(behaviors.begin(), behaviors.end(),
                                 [c](const Behavior& b) { return b.category == c; });
    out[std::string(to_string(c))] = n;
  }
  return out;
}

json asr_report(const LoadedRun& run, const Suffix& suffix) {
  json out = json::object();
  auto judge = run.cfg.judge.make();
  for (Split s : run.cfg.asr_splits) {
    auto subset = filter_behaviors(run.all, s, run.cfg.category);
    if (subset.empty()) {
      out[std::string(to_string(s))] = nullptr;
      continue;
    }
    const AsrResult r = compute_asr(run.victim, subset, suffix, *judge, run.cfg.max_gen_len);
    json verdicts = json::array();
    for (const auto& v : r.verdicts) {
      verdicts.push_back({{"behavior_id", v.behavior_id},
                          {"success", v.success},
                          {"generation", v.generation},
                          {"judge", v.judge_name}});
    }
    out[std::string(to_string(s))] = {{"asr", r.asr},
                                      {"successes", r.successes()},
                                      {"total", subset.size()},
                                      {"judge", judge->name()},
                                      {"verdicts", verdicts}};
  }
  return out;
}

/// Computes every artifact in memory, then writes CSV and checkpoint before
/// the manifest, each atomically.
int finish_run(const LoadedRun& run, const RunConfigFile& effective, const RunResult& result,
               std::vector<std::string> lineage, json provenance) {
  const Suffix& suffix = result.suffix();
  const auto fts = aggregate_loss(run.victim, run.train, suffix, Objective::kFts);
  const auto cas = aggregate_loss(run.victim, run.train, suffix, Objective::kCas);
  const std::string config_digest = effective.digest();

  Checkpoint cp;
  cp.suffix_ids = suffix.tokens();
  cp.suffix_text = suffix.text(run.victim.tokenizer());
  cp.tokenizer_id = suffix.tokenizer_id();
  cp.mode = std::string(to_string(effective.search.mode));
  cp.step = static_cast<int>(result.trace.size());
  cp.m_j = result.state.m_j;
  cp.stage_flag = static_cast<int>(result.state.stage_flag);
  cp.loss_fts = fts.total_loss;
  cp.loss_cas = cas.total_loss;
  cp.config_digest = config_digest;
  cp.seed = effective.search.seed;
  cp.lineage = lineage;
  const std::string cp_text = cp.to_json().dump(2) + "\n";

  std::string csv = result.trace.empty() ? dynamics_csv({})
                                         : dynamics_csv(record_dynamics(result.trace));

  json manifest = {
      {"config_digest", config_digest},
      {"config", effective.to_json()},
      {"seed", effective.search.seed},
      {"mode", cp.mode},
      {"tokenizer_id", cp.tokenizer_id},
      {"steps", cp.step},
      {"m_j", cp.m_j},
      {"suffix_ids", cp.suffix_ids},
      {"suffix_text", cp.suffix_text},
      {"final_losses",
       {{"fts", cp.loss_fts},
        {"cas", cp.loss_cas},
        {"first_token_mean", fts.first_token_mean()},
        {"sequence_mean", cas.sequence_mean()}}},
      {"training_behaviors", run.train.size()},
      {"behavior_counts", behavior_counts(run.train)},
      {"asr", asr_report(run, suffix)},
      {"lineage", lineage},
      {"artifacts",
       {{"checkpoint.json", sha256_hex(cp_text)}, {"dynamics.csv", sha256_hex(csv)}}},
  };
  if (!provenance.is_null()) manifest["provenance"] = provenance;

  const fs::path& dir = effective.output_dir;
  write_file_atomic(dir / "dynamics.csv", csv);
  write_file_atomic(dir / "checkpoint.json", cp_text);
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");

  fmt::print("mode={} steps={} suffix=\"{}\" loss_fts={} loss_cas={} output={}\n", cp.mode,
             cp.step, cp.suffix_text, cp.loss_fts, cp.loss_cas, dir.string());
  return kExitOk;
}

int cmd_run(const fs::path& config_path) {
  LoadedRun run = load_run(config_path);
  const RunResult result = run_search(run.victim, run.train, run.cfg.search);
  return finish_run(run, run.cfg, result, {}, nullptr);
}

int cmd_transfer(const fs::path& checkpoint_path, const fs::path& config_path) {
  LoadedRun run = load_run(config_path);
  const Checkpoint source = load_checkpoint(checkpoint_path);
  RunConfigFile effective = run.cfg;
  effective.search.mode = SearchMode::kCas;
  const auto filler = effective.resolve_filler(run.victim.tokenizer());
  SchedulerState state = resume_from_checkpoint(source, run.victim, effective.search, filler);
  const RunResult result =
      run_search(run.victim, run.train, effective.search, state.incumbent);

  const std::string source_digest = checkpoint_digest(checkpoint_path);
  std::vector<std::string> lineage = source.lineage;
  lineage.push_back(source_digest);
  const bool self = source.tokenizer_id == run.victim.tokenizer().id();
  json provenance = {{"kind", self ? "self" : "cross-tokenizer"},
                     {"source_checkpoint", checkpoint_path.string()},
                     {"source_digest", source_digest},
                     {"source_tokenizer", source.tokenizer_id},
                     {"source_mode", source.mode},
                     {"target_tokenizer", run.victim.tokenizer().id()},
                     {"initial_suffix_ids", state.incumbent.tokens()}};
  return finish_run(run, effective, result, std::move(lineage), std::move(provenance));
}

int cmd_repeat(const fs::path& checkpoint_path, int times, const fs::path& config_path) {
  LoadedRun run = load_run(config_path);
  const Checkpoint source = load_checkpoint(checkpoint_path);
  if (source.tokenizer_id != run.victim.tokenizer().id()) {
    throw Error(ErrorKind::kTransfer,
                fmt::format("repeat needs a checkpoint from tokenizer '{}', got '{}'",
                            run.victim.tokenizer().id(), source.tokenizer_id));
  }
  run.victim.tokenizer().check_ids(source.suffix_ids, "checkpoint suffix");
  const Suffix base = source.suffix();
  const std::size_t length = run.cfg.suffix_length_given
                                 ? static_cast<std::size_t>(run.cfg.search.suffix_length)
                                 : base.size() * static_cast<std::size_t>(std::max(times, 0));
  const Suffix init = self_repeat_init(base, times, length);

  RunConfigFile effective = run.cfg;
  effective.search.mode = SearchMode::kCas;
  effective.search.suffix_length = static_cast<int>(init.size());
  const RunResult result = run_search(run.victim, run.train, effective.search, init);

  const std::string source_digest = checkpoint_digest(checkpoint_path);
  std::vector<std::string> lineage = source.lineage;
  lineage.push_back(source_digest);
  json provenance = {{"kind", "self-repetition"},
                     {"source_checkpoint", checkpoint_path.string()},
                     {"source_digest", source_digest},
                     {"times", times},
                     {"base_length", base.size()},
                     {"length", init.size()}};
  return finish_run(run, effective, result, std::move(lineage), std::move(provenance));
}

int cmd_eval(const fs::path& checkpoint_path, const fs::path& config_path) {
  LoadedRun run = load_run(config_path);
  const Checkpoint cp = load_checkpoint(checkpoint_path);
  const auto& tok = run.victim.tokenizer();
  std::optional<Suffix> suffix;
  if (cp.tokenizer_id == tok.id()) {
    tok.check_ids(cp.suffix_ids, "checkpoint suffix");
    suffix = cp.suffix();
  } else {
    const auto filler = run.cfg.resolve_filler(tok);
    if (!filler) {
      throw Error(ErrorKind::kTransfer,
                  fmt::format("checkpoint tokenizer '{}' differs from '{}' and no filler token "
                              "is configured",
                              cp.tokenizer_id, tok.id()));
    }
    suffix = retokenize_transfer(cp.suffix_text, tok,
                                 static_cast<std::size_t>(run.cfg.search.suffix_length), *filler);
  }
  json report = {{"checkpoint_digest", checkpoint_digest(checkpoint_path)},
                 {"suffix_ids", suffix->tokens()},
                 {"suffix_text", suffix->text(tok)},
                 {"asr", asr_report(run, *suffix)}};
  write_file_atomic(run.cfg.output_dir / "eval.json", report.dump(2) + "\n");
  for (const auto& [split, entry] : report["asr"].items()) {
    if (entry.is_null()) continue;
    fmt::print("{}: asr={} ({}/{}) judge={}\n", split, entry["asr"].get<double>(),
               entry["successes"].get<std::size_t>(), entry["total"].get<std::size_t>(),
               entry["judge"].get<std::string>());
  }
  return kExitOk;
}

// ---- plot -----------------------------------------------------------------

struct Series {
  std::string label;
  std::vector<DynamicsRecord> records;
};

std::string plot_text(const std::vector<Series>& series) {
  std::string out;
  for (const auto& s : series) {
    out += fmt::format("# {}\n", s.label);
    out += fmt::format("{:>8} {:>5} {:>5} {:>14} {:>14} {:>14}\n", "step", "stage", "m_j",
                       "ft_loss_mean", "seq_loss_mean", "chosen_loss");
    auto rows = centennial_summaries(s.records);
    if (rows.empty() || rows.back().step != s.records.back().step) {
      rows.push_back(s.records.back());
    }
    for (const auto& r : rows) {
      out += fmt::format("{:>8} {:>5} {:>5} {:>14.6f} {:>14.6f} {:>14.6f}\n", r.step,
                         to_string(r.stage), r.m_j, r.ft_loss_mean, r.seq_loss_mean,
                         r.chosen_loss);
    }
  }
  return out;
}

std::string plot_svg(const std::vector<Series>& series) {
  constexpr double kW = 800, kH = 480, kLeft = 70, kRight = 20, kTop = 30, kBottom = 50;
  int max_step = 1;
  double max_loss = 0.0;
  for (const auto& s : series) {
    for (const auto& r : s.records) {
      max_step = std::max(max_step, r.step);
      max_loss = std::max({max_loss, r.ft_loss_mean, r.seq_loss_mean});
    }
  }
  if (!(max_loss > 0.0)) max_loss = 1.0;
  auto x = [&](int step) { return kLeft + (kW - kLeft - kRight) * step / max_step; };
  auto y = [&](double v) { return kH - kBottom - (kH - kTop - kBottom) * v / max_loss; };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      kW, kH);
  out += fmt::format(
      "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n"
      "<line x1=\"{0}\" y1=\"{3}\" x2=\"{0}\" y2=\"{1}\" stroke=\"black\"/>\n",
      kLeft, kH - kBottom, kW - kRight, kTop);
  out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">step</text>\n",
                     (kW + kLeft) / 2, kH - 10);
  out += fmt::format("<text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {})\" "
                     "text-anchor=\"middle\">loss</text>\n",
                     kH / 2, kH / 2);
  out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3g}</text>\n", kLeft - 5,
                     kTop + 4, max_loss);
  out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">0</text>\n", kLeft - 5,
                     kH - kBottom + 4);
  out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n", kW - kRight,
                     kH - kBottom + 16, max_step);

  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = kColors[i % std::size(kColors)];
    for (int which = 0; which < 2; ++which) {
      std::string points;
      for (const auto& r : s.records) {
        const double v = which == 0 ? r.ft_loss_mean : r.seq_loss_mean;
        points += fmt::format("{:.2f},{:.2f} ", x(r.step), y(v));
      }
      out += fmt::format(
          "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"{} points=\"{}\"/>\n",
          color, which == 0 ? "" : " stroke-dasharray=\"5,3\"", points);
    }
    for (const auto& r : centennial_summaries(s.records)) {
      out += fmt::format(
          "<circle class=\"marker\" cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\" fill=\"{}\"/>\n"
          "<circle class=\"marker\" cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\" fill=\"{}\"/>\n",
          x(r.step), y(r.ft_loss_mean), color, x(r.step), y(r.seq_loss_mean), color);
    }
    const double ly = kTop + 14.0 * static_cast<double>(2 * i);
    out += fmt::format("<text x=\"{}\" y=\"{}\" fill=\"{}\">{} FT (solid)</text>\n",
                       kW - 220, ly, color, s.label);
    out += fmt::format("<text x=\"{}\" y=\"{}\" fill=\"{}\">{} ST (dashed)</text>\n",
                       kW - 220, ly + 14, color, s.label);
  }
  out += "</svg>\n";
  return out;
}

int cmd_plot(const std::vector<fs::path>& csv_paths, const fs::path& out_path, bool text) {
  std::vector<Series> series;
  for (const auto& p : csv_paths) {
    std::string label = p.parent_path().filename().string();
    if (label.empty()) label = p.stem().string();
    try {
      series.push_back({label, parse_dynamics_csv(read_file(p))});
    } catch (const Error& e) {
      throw Error(e.kind(), fmt::format("{}: {}", p.string(), e.what()));
    }
  }
  const std::string content = text ? plot_text(series) : plot_svg(series);
  if (out_path == "-") {
    fmt::print("{}", content);
  } else {
    write_file_atomic(out_path, content);
  }
  return kExitOk;
}

int cmd_check_grad(const fs::path& config_path, double h, double tol) {
  LoadedRun run = load_run(config_path);
  const auto& tok = run.victim.tokenizer();
  std::mt19937_64 rng(run.cfg.search.seed);
  std::uniform_int_distribution<TokenId> pick(0, static_cast<TokenId>(tok.size() - 1));
  TokenSeq tokens(static_cast<std::size_t>(run.cfg.search.suffix_length));
  for (auto& t : tokens) t = pick(rng);
  const Suffix suffix(tokens, tok.id());
  double worst = 0.0;
  for (const auto& b : run.train) {
    for (Objective obj : {Objective::kFts, Objective::kCas}) {
      const double err = finite_diff_check(run.victim, b, suffix, obj, h);
      worst = std::max(worst, err);
      fmt::print("{} {} {:.3e}\n", b.id, to_string(obj), err);
    }
  }
  const bool ok = worst < tol;
  fmt::print("max relative error {:.3e} ({} tolerance {:.1e})\n", worst, ok ? "within" : "EXCEEDS",
             tol);
  return ok ? kExitOk : kExitRuntime;
}

json behavior_record(const Behavior& b) {
  return {{"id", b.id},
          {"prompt", b.prompt.text},
          {"target", b.target.text},
          {"category", std::string(to_string(b.category))},
          {"split", std::string(to_string(b.split))}};
}

int cmd_make_toy(const fs::path& out_dir, const RefusalInstanceOptions& options) {
  const RefusalInstance inst = build_refusal_instance(options);
  std::string jsonl;
  for (const auto& b : inst.behaviors) jsonl += behavior_record(b).dump() + "\n";
  write_file_atomic(out_dir / "victim.json", inst.victim.to_json().dump() + "\n");
  write_file_atomic(out_dir / "behaviors.jsonl", jsonl);
  fmt::print("wrote {} behaviors for tokenizer '{}' to {}\n", inst.behaviors.size(),
             inst.victim.tokenizer().id(), out_dir.string());
  return kExitOk;
}

int cmd_convert_harmbench(const fs::path& records_path, const fs::path& targets_path,
                          Split split, const fs::path& out_path) {
  json records, targets;
  try {
    records = json::parse(read_file(records_path));
    targets = json::parse(read_file(targets_path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kData, fmt::format("malformed HarmBench input: {}", e.what()));
  }
  if (!records.is_array() || !targets.is_object()) {
    throw Error(ErrorKind::kData,
                "expected an array of behavior records and an object of targets by id");
  }
  std::string jsonl;
  std::size_t kept = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    auto field = [&](const char* name) {
      if (!r.contains(name) || !r.at(name).is_string()) {
        throw Error(ErrorKind::kData, fmt::format("record {}: missing field '{}'", i, name));
      }
      return r.at(name).get<std::string>();
    };
    if (r.contains("FunctionalCategory") && field("FunctionalCategory") != "standard") continue;
    const std::string id = field("BehaviorID");
    const std::string semantic = field("SemanticCategory");
    const auto category = harmbench_category(semantic);
    if (!category) {
      throw Error(ErrorKind::kData,
                  fmt::format("record {}: unknown semantic category '{}'", i, semantic));
    }
    if (!targets.contains(id) || !targets.at(id).is_string()) {
      throw Error(ErrorKind::kData, fmt::format("record {}: no target for '{}'", i, id));
    }
    jsonl += json{{"id", id},
                  {"prompt", field("Behavior")},
                  {"target", targets.at(id).get<std::string>()},
                  {"category", std::string(to_string(*category))},
                  {"split", std::string(to_string(split))}}
                 .dump() +
             "\n";
    ++kept;
  }
  write_file_atomic(out_path, jsonl);
  fmt::print("converted {} standard behaviors to {}\n", kept, out_path.string());
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Adversarial suffix search with decoupled first-token and content-aware stages"};
  app.require_subcommand(1);

  std::string config, checkpoint, out, split_name = "valid", tokenizer_name = "chars",
                                      profile_name = "trap", records, targets;
  std::vector<std::string> csvs;
  int times = 1;
  bool text = false;
  double h = 1e-5, tol = 1e-5;
  RefusalInstanceOptions toy;

  auto* run = app.add_subcommand("run", "Search a suffix as configured");
  run->add_option("-c,--config", config, "Run config JSON")->required();

  auto* transfer = app.add_subcommand("transfer", "Continue with content-aware search from a checkpoint");
  transfer->add_option("--checkpoint", checkpoint)->required();
  transfer->add_option("-c,--config", config)->required();

  auto* repeat = app.add_subcommand("repeat", "Self-repeat a checkpoint suffix, then search");
  repeat->add_option("--checkpoint", checkpoint)->required();
  repeat->add_option("--times", times)->required();
  repeat->add_option("-c,--config", config)->required();

  auto* eval = app.add_subcommand("eval", "Attack success rate of a checkpoint suffix");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("-c,--config", config)->required();

  auto* plot = app.add_subcommand("plot", "Loss curves from one or more dynamics CSVs");
  plot->add_option("csv", csvs, "Dynamics CSV files")->required();
  plot->add_option("-o,--out", out, "Output path, '-' for stdout")->required();
  plot->add_flag("--text", text, "Plain-text summary instead of SVG");

  auto* grad = app.add_subcommand("check-grad", "Compare analytic and finite-difference gradients");
  grad->add_option("-c,--config", config)->required();
  grad->add_option("--step", h, "Central-difference step");
  grad->add_option("--tol", tol, "Largest acceptable relative error");

  auto* make_toy = app.add_subcommand("make-toy", "Write a toy refusal victim and behaviors");
  make_toy->add_option("-o,--out-dir", out)->required();
  make_toy->add_option("--seed", toy.seed);
  make_toy->add_option("--vocab", toy.vocab_size);
  make_toy->add_option("--suffix-length", toy.suffix_length);
  make_toy->add_option("--behaviors", toy.num_behaviors);
  make_toy->add_option("--tokenizer", tokenizer_name)->check(CLI::IsMember({"chars", "pairs"}));
  make_toy->add_option("--profile", profile_name)->check(CLI::IsMember({"trap", "reachable"}));

  auto* convert = app.add_subcommand("convert-harmbench",
                                     "Convert HarmBench behavior records to the JSONL schema");
  convert->add_option("--records", records, "JSON array of HarmBench behavior records")->required();
  convert->add_option("--targets", targets, "JSON object mapping BehaviorID to target")->required();
  convert->add_option("--split", split_name)->check(CLI::IsMember({"valid", "test"}));
  convert->add_option("-o,--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config);
    if (*transfer) return cmd_transfer(checkpoint, config);
    if (*repeat) return cmd_repeat(checkpoint, times, config);
    if (*eval) return cmd_eval(checkpoint, config);
    if (*plot) {
      std::vector<fs::path> paths(csvs.begin(), csvs.end());
      return cmd_plot(paths, out, text);
    }
    if (*grad) return cmd_check_grad(config, h, tol);
    if (*make_toy) {
      toy.tokenizer = tokenizer_name == "pairs" ? ToyTokenizerKind::kPairs : ToyTokenizerKind::kChars;
      toy.profile = profile_name == "reachable" ? InstanceProfile::kReachable : InstanceProfile::kTrap;
      return cmd_make_toy(out, toy);
    }
    if (*convert) return cmd_convert_harmbench(records, targets, *parse_split(split_name), out);
  } catch (const Error& e) {
    fmt::print(stderr, "{}: {}\n", to_string(e.kind()), e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    fmt::print(stderr, "runtime error: {}\n", e.what());
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace degcg
