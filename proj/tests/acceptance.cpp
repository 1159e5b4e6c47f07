// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Tolerances and seed counts are pinned here and nowhere else.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "degcg/cli.hpp"
#include "degcg/eval.hpp"
#include "degcg/refusal_instance.hpp"
#include "degcg/schedulers.hpp"

using namespace degcg;
namespace fs = std::filesystem;

namespace {

constexpr double kGradTolerance = 1e-5;
constexpr double kGradStep = 1e-5;
constexpr double kMinimumTolerance = 1e-12;
constexpr int kSeeds = 10;
constexpr double kRuntimeC1 = 60.0;
constexpr double kRuntimeC2 = 60.0;
constexpr double kRuntimeC6 = 300.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<Behavior> split_of(const std::vector<Behavior>& all, Split split) {
  std::vector<Behavior> out;
  for (const auto& b : all) {
    if (b.split == split) out.push_back(b);
  }
  return out;
}

RefusalInstance instance(std::uint64_t seed, ToyTokenizerKind tok = ToyTokenizerKind::kChars,
                         InstanceProfile profile = InstanceProfile::kTrap,
                         std::size_t suffix_length = 4) {
  RefusalInstanceOptions o;
  o.seed = seed;
  o.tokenizer = tok;
  o.profile = profile;
  o.suffix_length = suffix_length;
  return build_refusal_instance(o);
}

SearchConfig toy_config(SearchMode mode, int steps, std::uint64_t seed) {
  SearchConfig c;
  c.mode = mode;
  c.suffix_length = 4;
  c.topk = 8;
  c.batch_size = 64;
  c.total_steps = steps;
  c.fts_max_steps = std::min(200, steps);
  c.seed = seed;
  return c;
}

double loss_over(const Victim& v, const std::vector<Behavior>& bs, const Suffix& s,
                 Objective objective) {
  return aggregate_loss(v, bs, s, objective).total_loss;
}

/// gcg_step with every behavior active from the first step.
std::vector<StepTrace> fixed_set_run(const Victim& v, const std::vector<Behavior>& bs,
                                     Suffix init, Objective objective, const SearchConfig& c,
                                     int steps, Suffix* final_suffix = nullptr) {
  SchedulerState state(std::move(init), c.seed);
  state.m_j = bs.size();
  std::vector<StepTrace> trace;
  for (int t = 0; t < steps; ++t) {
    auto r = gcg_step(v, bs, std::move(state), objective, c);
    state = std::move(r.state);
    trace.push_back(r.trace);
  }
  if (final_suffix) *final_suffix = state.incumbent;
  return trace;
}

// ---- criteria ------------------------------------------------------------------

Outcome gradient_oracle() {
  const auto start = Clock::now();
  double worst = 0.0;
  int checks = 0;
  for (int pair = 0; pair < 20; ++pair) {
    const std::uint64_t seed = 100 + static_cast<std::uint64_t>(pair);
    const std::size_t vocab = pair % 2 ? 16 : 8;
    const std::size_t length = (pair / 2) % 2 ? 4 : 2;
    const auto v = AnalyticVictim::random(seed, vocab);
    const auto bs = random_behaviors(seed, v.tokenizer(), 2, 3, 3);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<TokenId> pick(0, static_cast<TokenId>(vocab - 1));
    TokenSeq ids(length);
    for (auto& t : ids) t = pick(rng);
    const Suffix s(ids, v.tokenizer().id());
    for (Objective obj : {Objective::kFts, Objective::kCas}) {
      for (const auto& b : bs) {
        worst = std::max(worst, finite_diff_check(v, b, s, obj, kGradStep));
        ++checks;
      }
    }
  }
  const double secs = seconds_since(start);
  return {worst < kGradTolerance && secs < kRuntimeC1,
          fmt::format("{} checks, max relative error {:.3e} (tol {:.0e}), {:.2f}s", checks, worst,
                      kGradTolerance, secs)};
}

Outcome brute_force_equivalence() {
  const auto start = Clock::now();
  int reached = 0;
  std::string per_seed;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const auto v = AnalyticVictim::random(static_cast<std::uint64_t>(seed), 8);
    const auto bs = random_behaviors(static_cast<std::uint64_t>(seed), v.tokenizer(), 3, 2, 2);
    double best = std::numeric_limits<double>::infinity();
    for (TokenId a = 0; a < 8; ++a) {
      for (TokenId b = 0; b < 8; ++b) {
        best = std::min(best, loss_over(v, bs, Suffix({a, b}, v.tokenizer().id()),
                                        Objective::kCas));
      }
    }
    SearchConfig c = toy_config(SearchMode::kCas, 50, static_cast<std::uint64_t>(seed));
    c.suffix_length = 2;
    c.topk = 8;
    c.batch_size = 64;
    Suffix end({0, 0}, v.tokenizer().id());
    const auto trace = fixed_set_run(v, bs, initial_suffix(v.tokenizer(), c), Objective::kCas, c,
                                     50, &end);
    const double found = trace.back().chosen_loss;
    const bool ok = found <= best + kMinimumTolerance;
    reached += ok;
    per_seed += ok ? "+" : "-";
  }
  const double secs = seconds_since(start);
  return {reached >= 9 && secs < kRuntimeC2,
          fmt::format("{}/{} seeds reach the 64-suffix minimum within 50 steps [{}], {:.2f}s",
                      reached, kSeeds, per_seed, secs)};
}

Outcome monotonicity() {
  int runs = 0, violations = 0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const auto inst = instance(static_cast<std::uint64_t>(seed));
    const auto train = split_of(inst.behaviors, Split::kValid);
    const auto c = toy_config(SearchMode::kCas, 100, static_cast<std::uint64_t>(seed));
    for (Objective obj : {Objective::kFts, Objective::kCas}) {
      const Suffix init = initial_suffix(inst.victim.tokenizer(), c);
      double prev = loss_over(inst.victim, train, init, obj);
      for (const auto& t : fixed_set_run(inst.victim, train, init, obj, c, 100)) {
        if (t.chosen_loss > prev) ++violations;
        prev = t.chosen_loss;
      }
      ++runs;
    }
    const auto v = AnalyticVictim::random(static_cast<std::uint64_t>(seed), 16);
    const auto bs = random_behaviors(static_cast<std::uint64_t>(seed), v.tokenizer(), 4, 3, 3);
    const Suffix init = initial_suffix(v.tokenizer(), c);
    double prev = loss_over(v, bs, init, Objective::kCas);
    for (const auto& t : fixed_set_run(v, bs, init, Objective::kCas, c, 100)) {
      if (t.chosen_loss > prev) ++violations;
      prev = t.chosen_loss;
    }
    ++runs;
  }
  return {violations == 0,
          fmt::format("{} runs x 100 steps, {} increases of chosen_loss", runs, violations)};
}

/// Scripted engine: losses depend only on (step, objective).
class ScriptedEngine final : public StepEngine {
 public:
  using Script = std::function<LossBreakdown(int, Objective)>;
  ScriptedEngine(std::size_t n, Script s) : n_(n), script_(std::move(s)) {}
  Outcome step(SchedulerState& state, Objective objective) override {
    Outcome o;
    o.trace.step = ++state.step;
    o.trace.stage = objective;
    o.trace.m_j = state.m_j;
    o.report.per_behavior.assign(state.m_j, script_(state.step, objective));
    return o;
  }
  std::size_t behavior_count() const override { return n_; }

 private:
  std::size_t n_;
  Script script_;
};

Outcome algorithm_conformance() {
  using Snap = ControllerSnapshot;
  const auto F = StageFlag::kFts;
  const auto C = StageFlag::kCas;
  auto run = [](std::size_t n, int steps, ScriptedEngine::Script s) {
    SearchConfig c;
    c.total_steps = steps;
    c.fts_max_steps = std::min(200, steps);
    ScriptedEngine e(n, std::move(s));
    return run_idegcg(e, SchedulerState(Suffix::repeated(0, 4, "toy"), 0), c).controller;
  };
  int failed = 0;

  // Cap-triggered: losses never within threshold.
  {
    const auto traj = run(4, 110, [](int, Objective) { return LossBreakdown({1.0, 1.0}); });
    std::vector<Snap> expected;
    StageFlag f = F;
    int t = 0;
    // stage lengths 21 (FTS) and 31 (CAS): the flipping step sees t_ac at the cap
    const std::vector<int> flips{21, 52, 73, 104};
    for (int step = 1; step <= 110; ++step) {
      if (std::find(flips.begin(), flips.end(), step) != flips.end()) {
        f = f == F ? C : F;
        t = 0;
      } else {
        ++t;
      }
      expected.push_back({f, t, 1});
    }
    failed += traj != expected;
  }
  // Threshold-triggered: first-token loss within eps at FTS step 3.
  {
    const auto traj = run(3, 6, [](int step, Objective) {
      return step < 3 ? LossBreakdown({1.0, 5.0}) : LossBreakdown({0.1, 5.0});
    });
    const std::vector<Snap> expected{{F, 1, 1}, {F, 2, 1}, {C, 0, 1},
                                     {C, 1, 1}, {C, 2, 1}, {C, 3, 1}};
    failed += traj != expected;
  }
  // Growth: needs both thresholds; first-token alone (steps 1-3) does not grow.
  {
    const auto traj = run(3, 6, [](int step, Objective) {
      return step < 4 ? LossBreakdown({0.05, 0.5}) : LossBreakdown({0.05, 0.1});
    });
    const std::vector<Snap> expected{{C, 0, 1}, {C, 1, 1}, {C, 2, 1},
                                     {F, 0, 2}, {C, 0, 3}, {F, 0, 3}};
    failed += traj != expected;
  }
  return {failed == 0, fmt::format("{} of 3 scripted trajectories differ", failed)};
}

Outcome first_token_importance() {
  int wins = 0;
  std::string detail;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const auto inst = instance(static_cast<std::uint64_t>(seed));
    const auto train = split_of(inst.behaviors, Split::kValid);
    const auto fts = run_search(inst.victim, train,
                                toy_config(SearchMode::kFts, 200, static_cast<std::uint64_t>(seed)));
    const auto gcg = run_search(inst.victim, train,
                                toy_config(SearchMode::kGcgM, 200, static_cast<std::uint64_t>(seed)));
    const double a = aggregate_loss(inst.victim, train, fts.suffix(), Objective::kFts)
                         .first_token_mean();
    const double b = aggregate_loss(inst.victim, train, gcg.suffix(), Objective::kFts)
                         .first_token_mean();
    wins += a <= b;
    if (seed < 3) detail += fmt::format(" s{}: {:.3f} vs {:.3f};", seed, a, b);
  }
  return {wins >= 8, fmt::format("FTS first-token loss <= GCG-M at 200 steps on {}/{} seeds;{}",
                                 wins, kSeeds, detail)};
}

Outcome degcg_vs_gcg_m() {
  const auto start = Clock::now();
  int loss_wins = 0, asr_wins = 0;
  double asr_d = 0.0, asr_g = 0.0;
  const PrefixJudge judge(1);
  for (int seed = 0; seed < kSeeds; ++seed) {
    const auto inst = instance(static_cast<std::uint64_t>(seed));
    const auto train = split_of(inst.behaviors, Split::kValid);
    const auto d = run_degcg(inst.victim, train,
                             toy_config(SearchMode::kDegcg, 500, static_cast<std::uint64_t>(seed)));
    const auto g = run_gcg_m(inst.victim, train,
                             toy_config(SearchMode::kGcgM, 500, static_cast<std::uint64_t>(seed)));
    loss_wins += loss_over(inst.victim, train, d.suffix(), Objective::kCas) <=
                 loss_over(inst.victim, train, g.suffix(), Objective::kCas);
    const double ad = compute_asr(inst.victim, train, d.suffix(), judge, 8).asr;
    const double ag = compute_asr(inst.victim, train, g.suffix(), judge, 8).asr;
    asr_wins += ad >= ag;
    asr_d += ad / kSeeds;
    asr_g += ag / kSeeds;
  }
  const double secs = seconds_since(start);
  return {loss_wins >= 7 && asr_wins >= 7 && secs < kRuntimeC6,
          fmt::format("final CAS loss <= GCG-M on {}/{} seeds; ASR >= GCG-M on {}/{} (mean "
                      "{:.2f} vs {:.2f}); {:.2f}s",
                      loss_wins, kSeeds, asr_wins, kSeeds, asr_d, asr_g, secs)};
}

Outcome self_repetition() {
  const auto inst = instance(0);
  const auto train = split_of(inst.behaviors, Split::kValid);
  auto c = toy_config(SearchMode::kFts, 50, 0);
  c.suffix_length = 20;
  const Suffix base = run_search(inst.victim, train, c).suffix();
  int failed = 0;
  std::string lengths;
  for (int times = 2; times <= 5; ++times) {
    const std::size_t length = base.size() * static_cast<std::size_t>(times);
    const Suffix init = self_repeat_init(base, times, length);
    lengths += fmt::format("{} ", init.size());
    failed += init.size() != static_cast<std::size_t>(20 * times);
    auto cc = toy_config(SearchMode::kCas, 40, 0);
    cc.suffix_length = static_cast<int>(length);
    Suffix end = init;
    fixed_set_run(inst.victim, train, init, Objective::kCas, cc, 40, &end);
    failed += loss_over(inst.victim, train, end, Objective::kCas) >
              loss_over(inst.victim, train, init, Objective::kCas);
  }
  return {failed == 0 && base.size() == 20,
          fmt::format("lengths {}; {} failures of length or final-vs-init loss", lengths, failed)};
}

/// First step after which every training behavior's full-sequence loss is
/// below eps_cas at the incumbent; steps + 1 if never.
int steps_to_threshold(const Victim& v, const std::vector<Behavior>& train, Suffix init,
                       const SearchConfig& c) {
  if (aggregate_loss(v, train, init, Objective::kCas).max_loss(Objective::kCas) < c.eps_cas) {
    return 0;
  }
  class Recorder final : public StepEngine {
   public:
    Recorder(GcgEngine& inner, const Victim& v, const std::vector<Behavior>& train, double eps)
        : inner_(inner), v_(v), train_(train), eps_(eps) {}
    Outcome step(SchedulerState& state, Objective objective) override {
      auto o = inner_.step(state, objective);
      if (!reached_ && aggregate_loss(v_, train_, state.incumbent, Objective::kCas)
                               .max_loss(Objective::kCas) < eps_) {
        reached_ = state.step;
      }
      return o;
    }
    std::size_t behavior_count() const override { return inner_.behavior_count(); }
    int reached_ = 0;

   private:
    GcgEngine& inner_;
    const Victim& v_;
    const std::vector<Behavior>& train_;
    double eps_;
  };
  GcgEngine engine(v, train, c);
  Recorder rec(engine, v, train, c.eps_cas);
  run_single_objective(rec, SchedulerState(std::move(init), c.seed), Objective::kCas, c.eps_cas,
                       c.total_steps);
  return rec.reached_ ? rec.reached_ : c.total_steps + 1;
}

Outcome cross_tokenizer_transfer() {
  int wins = 0, length_failures = 0;
  std::string detail;
  // Length property over assorted texts and lengths.
  const auto chars = Tokenizer::toy_chars(16);
  const auto pairs = Tokenizer::toy_pairs(16);
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<TokenId> pick(0, 15);
  for (int trial = 0; trial < 200; ++trial) {
    TokenSeq ids(1 + static_cast<std::size_t>(trial % 9));
    for (auto& t : ids) t = pick(rng);
    const std::size_t length = 1 + static_cast<std::size_t>(trial % 6);
    for (const auto& [from, to] : {std::pair{&chars, &pairs}, std::pair{&pairs, &chars}}) {
      const std::string text = from->decode(ids);
      if (to->encode(text).empty()) continue;  // nothing to carry over
      const Suffix s = retokenize_transfer(text, *to, length, to->default_init_token());
      length_failures += s.size() != length;
    }
  }

  // Resumed CAS runs through the CLI with lineage.
  const fs::path dir = fs::temp_directory_path() / "degcg_acceptance_transfer";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path data = fs::path(DEGCG_SOURCE_DIR) / "data";
  auto config = [&](const fs::path& toy, const std::string& out, int steps) {
    nlohmann::json j = {{"mode", "fts"},
                        {"suffix_length", 4},
                        {"total_steps", steps},
                        {"fts_max_steps", steps},
                        {"victim_path", (toy / "victim.json").string()},
                        {"behaviors_path", (toy / "behaviors.jsonl").string()},
                        {"output_dir", (dir / out).string()},
                        {"max_gen_len", 8},
                        {"filler_token", "!!"}};
    const fs::path p = dir / (out + ".json");
    std::ofstream(p) << j.dump(2);
    return p.string();
  };
  auto cli = [](std::vector<std::string> args) {
    args.insert(args.begin(), "degcg");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
  };
  bool lineage_ok =
      cli({"run", "-c", config(data / "toy_chars", "source", 100)}) == 0 &&
      cli({"transfer", "--checkpoint", (dir / "source" / "checkpoint.json").string(), "-c",
           config(data / "toy_pairs", "target", 50)}) == 0;
  if (lineage_ok) {
    const auto cp = load_checkpoint(dir / "target" / "checkpoint.json");
    lineage_ok = cp.lineage ==
                     std::vector<std::string>{checkpoint_digest(dir / "source" / "checkpoint.json")} &&
                 cp.step == 50 && cp.suffix_ids.size() == 4;
  }

  // Ablation analog: FTS-derived init versus random init on the target tokenizer.
  for (int seed = 0; seed < kSeeds; ++seed) {
    const auto src = instance(static_cast<std::uint64_t>(seed));
    const auto tgt = instance(static_cast<std::uint64_t>(seed), ToyTokenizerKind::kPairs,
                              InstanceProfile::kReachable);
    const auto src_train = split_of(src.behaviors, Split::kValid);
    const auto tgt_train = split_of(tgt.behaviors, Split::kValid);
    const auto fts = run_search(src.victim, src_train,
                                toy_config(SearchMode::kFts, 200, static_cast<std::uint64_t>(seed)));
    const auto& ttok = tgt.victim.tokenizer();
    const Suffix derived =
        retokenize_transfer(fts.suffix().text(src.victim.tokenizer()), ttok, 4, *ttok.find("!!"));
    std::mt19937_64 r(static_cast<std::uint64_t>(seed) + 1000);
    std::uniform_int_distribution<TokenId> any(0, static_cast<TokenId>(ttok.size() - 1));
    TokenSeq ids(4);
    for (auto& t : ids) t = any(r);
    const Suffix random_init(ids, ttok.id());
    const auto c = toy_config(SearchMode::kCas, 200, static_cast<std::uint64_t>(seed));
    const int a = steps_to_threshold(tgt.victim, tgt_train, derived, c);
    const int b = steps_to_threshold(tgt.victim, tgt_train, random_init, c);
    wins += a <= b && a <= c.total_steps;
    if (seed < 3) detail += fmt::format(" s{}: {} vs {};", seed, a, b);
  }
  return {wins >= 7 && length_failures == 0 && lineage_ok,
          fmt::format("length failures {}; CLI lineage {}; derived init reaches threshold no "
                      "later than random on {}/{} seeds;{}",
                      length_failures, lineage_ok ? "ok" : "bad", wins, kSeeds, detail)};
}

Outcome dataset_fidelity() {
  const fs::path fixture = fs::path(DEGCG_SOURCE_DIR) / "data" / "harmbench_standard_fixture.jsonl";
  const auto tok = Tokenizer::toy_chars(63);
  const auto valid = load_behaviors(fixture, tok, Split::kValid);
  const auto test = load_behaviors(fixture, tok, Split::kTest);
  const std::map<Category, std::size_t> valid_expected{
      {Category::kChemicalBiological, 9}, {Category::kCybercrime, 7},
      {Category::kHarassmentBullying, 3}, {Category::kHarmful, 4},
      {Category::kIllegal, 11},           {Category::kMisinformation, 7}};
  const std::map<Category, std::size_t> test_expected{
      {Category::kChemicalBiological, 19}, {Category::kCybercrime, 33},
      {Category::kHarassmentBullying, 16}, {Category::kHarmful, 17},
      {Category::kIllegal, 47},            {Category::kMisinformation, 27}};
  const bool ok = valid.behaviors.size() == 41 && test.behaviors.size() == 159 &&
                  valid.counts == valid_expected && test.counts == test_expected;
  return {ok, fmt::format("{} valid / {} test, per-category counts {}",
                          valid.behaviors.size(), test.behaviors.size(),
                          ok ? "match" : "differ")};
}

Outcome determinism() {
  int mismatches = 0, runs = 0;
  const auto inst = instance(2);
  const auto train = split_of(inst.behaviors, Split::kValid);
  for (SearchMode mode : {SearchMode::kGcgM, SearchMode::kFts, SearchMode::kCas,
                          SearchMode::kDegcg, SearchMode::kIdegcg}) {
    const auto c = toy_config(mode, 300, 9);
    const auto a = dynamics_csv(record_dynamics(run_search(inst.victim, train, c).trace));
    const auto b = dynamics_csv(record_dynamics(run_search(inst.victim, train, c).trace));
    mismatches += a != b;
    ++runs;
  }
  // End to end through the command line: same config, two output directories.
  const fs::path dir = fs::temp_directory_path() / "degcg_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path data = fs::path(DEGCG_SOURCE_DIR) / "data";
  const std::string cfg = (data / "configs" / "toy_idegcg.json").string();
  std::string csv[2];
  for (int i = 0; i < 2; ++i) {
    const std::string out = (dir / std::to_string(i)).string();
    setenv("DEGCG_OUTPUT_DIR", out.c_str(), 1);
    const char* argv[] = {"degcg", "run", "-c", cfg.c_str()};
    if (run_cli(4, argv) != 0) ++mismatches;
    std::ifstream in(fs::path(out) / "dynamics.csv", std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    csv[i] = ss.str();
  }
  unsetenv("DEGCG_OUTPUT_DIR");
  mismatches += csv[0] != csv[1] || csv[0].empty();
  ++runs;
  return {mismatches == 0, fmt::format("{} of {} repeated runs differ byte-wise", mismatches, runs)};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria{
      {"gradient oracle", gradient_oracle},
      {"brute-force equivalence", brute_force_equivalence},
      {"monotonicity", monotonicity},
      {"interleaved controller conformance", algorithm_conformance},
      {"first-token optimization matters", first_token_importance},
      {"two-stage search versus GCG-M", degcg_vs_gcg_m},
      {"self-repetition structure", self_repetition},
      {"cross-tokenizer transfer", cross_tokenizer_transfer},
      {"dataset fidelity", dataset_fidelity},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].check();
    } catch (const std::exception& e) {
      o = {false, fmt::format("threw: {}", e.what())};
    }
    failures += !o.pass;
    fmt::print("{} [{}] {}: {}\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].name, o.detail);
    std::fflush(stdout);
  }
  fmt::print("{}/{} criteria passed\n", criteria.size() - static_cast<std::size_t>(failures),
             criteria.size());
  return failures == 0 ? 0 : 1;
}
