#include "degcg/core.hpp"

#include <numeric>

#include <fmt/core.h>

#include "degcg/tokenizer.hpp"

namespace degcg {

namespace {

struct CategoryName {
  Category value;
  std::string_view name;
};

constexpr CategoryName kCategoryNames[] = {
    {Category::kChemicalBiological, "chemical_biological"},
    {Category::kMisinformation, "misinformation"},
    {Category::kIllegal, "illegal"},
    {Category::kCybercrime, "cybercrime"},
    {Category::kHarmful, "harmful"},
    {Category::kHarassmentBullying, "harassment_bullying"},
};

}  // namespace

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kSchema: return "schema error";
    case ErrorKind::kInput: return "input error";
    case ErrorKind::kCapability: return "capability error";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kTransfer: return "transfer error";
    case ErrorKind::kLoad: return "load error";
    case ErrorKind::kConstruction: return "construction error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kData: return "data error";
  }
  return "error";
}

std::string_view to_string(Category category) {
  for (const auto& entry : kCategoryNames) {
    if (entry.value == category) return entry.name;
  }
  return "unknown";
}

std::string_view to_string(Split split) {
  return split == Split::kValid ? "valid" : "test";
}

std::string_view to_string(Objective objective) {
  return objective == Objective::kFts ? "fts" : "cas";
}

std::string_view to_string(SearchMode mode) {
  switch (mode) {
    case SearchMode::kGcgM: return "gcg_m";
    case SearchMode::kFts: return "fts";
    case SearchMode::kCas: return "cas";
    case SearchMode::kDegcg: return "degcg";
    case SearchMode::kIdegcg: return "idegcg";
  }
  return "unknown";
}

std::optional<Category> parse_category(std::string_view text) {
  for (const auto& entry : kCategoryNames) {
    if (entry.name == text) return entry.value;
  }
  return std::nullopt;
}

std::optional<Split> parse_split(std::string_view text) {
  if (text == "valid") return Split::kValid;
  if (text == "test") return Split::kTest;
  return std::nullopt;
}

std::optional<Objective> parse_objective(std::string_view text) {
  if (text == "fts") return Objective::kFts;
  if (text == "cas") return Objective::kCas;
  return std::nullopt;
}

std::optional<SearchMode> parse_search_mode(std::string_view text) {
  for (auto mode : {SearchMode::kGcgM, SearchMode::kFts, SearchMode::kCas,
                    SearchMode::kDegcg, SearchMode::kIdegcg}) {
    if (to_string(mode) == text) return mode;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Suffix
// ---------------------------------------------------------------------------

Suffix::Suffix(TokenSeq tokens, std::string tokenizer_id)
    : tokens_(std::move(tokens)), tokenizer_id_(std::move(tokenizer_id)) {
  for (TokenId t : tokens_) {
    if (t < 0) throw Error(ErrorKind::kInput, "suffix token id is negative");
  }
}

Suffix Suffix::repeated(TokenId token, std::size_t length,
                        std::string tokenizer_id) {
  return Suffix(TokenSeq(length, token), std::move(tokenizer_id));
}

Suffix Suffix::with_replacement(std::size_t pos, TokenId token) const {
  if (pos >= tokens_.size()) {
    throw Error(ErrorKind::kInput,
                fmt::format("replacement position {} outside suffix of length {}",
                            pos, tokens_.size()));
  }
  TokenSeq next = tokens_;
  next[pos] = token;
  return Suffix(std::move(next), tokenizer_id_);
}

std::string Suffix::text(const Tokenizer& tokenizer) const {
  if (tokenizer.id() != tokenizer_id_) {
    throw Error(ErrorKind::kInput,
                fmt::format("suffix tagged '{}' decoded with tokenizer '{}'",
                            tokenizer_id_, tokenizer.id()));
  }
  return tokenizer.decode(tokens_);
}

std::size_t hamming_distance(const Suffix& a, const Suffix& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::kInput, "hamming distance of unequal lengths");
  }
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i] ? 1 : 0;
  return d;
}

// ---------------------------------------------------------------------------
// LossBreakdown
// ---------------------------------------------------------------------------

LossBreakdown::LossBreakdown(std::vector<double> per_token_nll)
    : nll_(std::move(per_token_nll)) {
  for (double v : nll_) {
    if (!(v >= 0.0)) {
      throw Error(ErrorKind::kInput, "negative or NaN per-token NLL");
    }
  }
}

double LossBreakdown::first_token() const {
  if (nll_.empty()) throw Error(ErrorKind::kInput, "empty target");
  return nll_.front();
}

double LossBreakdown::sequence_sum() const {
  if (nll_.empty()) throw Error(ErrorKind::kInput, "empty target");
  return std::accumulate(nll_.begin(), nll_.end(), 0.0);
}

double LossBreakdown::sequence_mean() const {
  return sequence_sum() / static_cast<double>(nll_.size());
}

// ---------------------------------------------------------------------------
// SearchConfig
// ---------------------------------------------------------------------------

void SearchConfig::validate(bool allow_zero_steps) const {
  auto fail = [](const std::string& what) {
    throw Error(ErrorKind::kConfig, what);
  };
  if (topk < 1) fail("topk must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (total_steps < (allow_zero_steps ? 0 : 1)) {
    fail(allow_zero_steps ? "total_steps must be >= 0" : "total_steps must be >= 1");
  }
  if (suffix_length < 1) fail("suffix_length must be >= 1");
  if (fts_max_steps < 0) fail("fts_max_steps must be >= 0");
  if (fts_max_steps > total_steps) fail("fts_max_steps must be <= total_steps");
  if (!(eps_fts > 0.0)) fail("eps_fts must be > 0");
  if (!(eps_cas > 0.0)) fail("eps_cas must be > 0");
  if (stage_max_fts < 0 || stage_max_cas < 0) {
    fail("stage caps must be >= 0");
  }
  if (init_token && *init_token < 0) fail("init_token must be >= 0");
}

nlohmann::json SearchConfig::to_json() const {
  nlohmann::json j = {
      {"suffix_length", suffix_length}, {"topk", topk},
      {"batch_size", batch_size},       {"total_steps", total_steps},
      {"fts_max_steps", fts_max_steps}, {"eps_fts", eps_fts},
      {"eps_cas", eps_cas},             {"stage_max_fts", stage_max_fts},
      {"stage_max_cas", stage_max_cas}, {"seed", seed},
      {"mode", std::string(to_string(mode))},
  };
  if (init_token) j["init_token"] = *init_token;
  return j;
}

SearchConfig SearchConfig::from_json(const nlohmann::json& j) {
  SearchConfig c;
  try {
    if (j.contains("suffix_length")) c.suffix_length = j.at("suffix_length").get<int>();
    if (j.contains("topk")) c.topk = j.at("topk").get<int>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("total_steps")) c.total_steps = j.at("total_steps").get<int>();
    if (j.contains("fts_max_steps")) c.fts_max_steps = j.at("fts_max_steps").get<int>();
    if (j.contains("eps_fts")) c.eps_fts = j.at("eps_fts").get<double>();
    if (j.contains("eps_cas")) c.eps_cas = j.at("eps_cas").get<double>();
    if (j.contains("stage_max_fts")) c.stage_max_fts = j.at("stage_max_fts").get<int>();
    if (j.contains("stage_max_cas")) c.stage_max_cas = j.at("stage_max_cas").get<int>();
    if (j.contains("init_token") && !j.at("init_token").is_null()) {
      c.init_token = j.at("init_token").get<TokenId>();
    }
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig, fmt::format("bad config value: {}", e.what()));
  }
  if (j.contains("mode")) {
    if (!j.at("mode").is_string()) throw Error(ErrorKind::kConfig, "mode must be a string");
    const auto text = j.at("mode").get<std::string>();
    auto mode = parse_search_mode(text);
    if (!mode) throw Error(ErrorKind::kConfig, fmt::format("unknown mode '{}'", text));
    c.mode = *mode;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Behavior validation
// ---------------------------------------------------------------------------

Behavior validate_behavior(const nlohmann::json& record,
                           const Tokenizer& tokenizer) {
  if (!record.is_object()) {
    throw Error(ErrorKind::kSchema, "behavior record is not a JSON object");
  }
  auto field = [&](const char* name) -> std::string {
    if (!record.contains(name)) {
      throw Error(ErrorKind::kSchema, fmt::format("missing field '{}'", name));
    }
    const auto& v = record.at(name);
    if (!v.is_string()) {
      throw Error(ErrorKind::kSchema, fmt::format("field '{}' must be a string", name));
    }
    return v.get<std::string>();
  };

  Behavior b;
  b.id = field("id");
  if (b.id.empty()) throw Error(ErrorKind::kSchema, "field 'id' is empty");

  const auto category = field("category");
  auto cat = parse_category(category);
  if (!cat) {
    throw Error(ErrorKind::kSchema,
                fmt::format("field 'category': unknown category '{}'", category));
  }
  b.category = *cat;

  const auto split = field("split");
  auto sp = parse_split(split);
  if (!sp) {
    throw Error(ErrorKind::kSchema,
                fmt::format("field 'split': unknown split '{}'", split));
  }
  b.split = *sp;

  b.prompt.text = field("prompt");
  b.target.text = field("target");
  if (b.target.text.empty()) {
    throw Error(ErrorKind::kSchema, "field 'target': empty target");
  }
  b.prompt.tokens = tokenizer.encode(b.prompt.text);
  b.target.tokens = tokenizer.encode(b.target.text);
  if (b.prompt.tokens.empty()) {
    throw Error(ErrorKind::kSchema,
                "field 'prompt': encodes to no tokens under the active tokenizer");
  }
  if (b.target.tokens.empty()) {
    throw Error(ErrorKind::kSchema,
                "field 'target': encodes to no tokens under the active tokenizer");
  }
  b.tokenizer_id = tokenizer.id();
  return b;
}

}  // namespace degcg
