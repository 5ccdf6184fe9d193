#include "supervisor/routing.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "supervisor/decomposition.hpp"
#include "supervisor/errors.hpp"
#include "supervisor/util.hpp"

namespace supervisor {

using nlohmann::json;

json to_json(const ModelCatalogEntry& e) {
  json j = {{"model_name", e.model_name},
            {"tier", to_string(e.tier)},
            {"cost_per_mtok", e.cost_per_mtok.to_string()},
            {"per_request_fee", e.per_request_fee.to_string()},
            {"capability", e.capability}};
  j["subflag_affinity"] = e.subflag_affinity ? json(to_string(*e.subflag_affinity)) : json(nullptr);
  return j;
}

namespace {

Money money_field(const json& j, const char* key) {
  if (!j.contains(key)) return Money{};
  const auto& v = j.at(key);
  try {
    if (v.is_string()) return Money::parse(v.get<std::string>());
    if (v.is_number()) return Money::from_usd(v.get<double>());
  } catch (const std::invalid_argument& e) {
    throw InvalidSpec(std::string("bad money value for ") + key + ": " + e.what());
  }
  throw InvalidSpec(std::string("bad money value for ") + key);
}

}  // namespace

ModelCatalogEntry model_entry_from_json(const json& j) {
  try {
    ModelCatalogEntry e;
    e.model_name = j.at("model_name").get<std::string>();
    if (e.model_name.empty()) throw InvalidSpec("model_name must be non-empty");
    auto tier = parse_cost_knob(j.at("tier").get<std::string>());
    if (!tier) throw InvalidSpec("unknown tier for model " + e.model_name);
    e.tier = *tier;
    if (j.contains("subflag_affinity") && !j["subflag_affinity"].is_null()) {
      auto s = parse_subflag(j["subflag_affinity"].get<std::string>());
      if (!s) throw InvalidSpec("unknown subflag for model " + e.model_name);
      e.subflag_affinity = *s;
    }
    e.cost_per_mtok = money_field(j, "cost_per_mtok");
    e.per_request_fee = money_field(j, "per_request_fee");
    e.capability = j.value("capability", 1.0);
    if (e.cost_per_mtok < Money{} || e.per_request_fee < Money{})
      throw InvalidSpec("negative price for model " + e.model_name);
    return e;
  } catch (const json::exception& ex) {
    throw InvalidSpec(std::string("malformed model entry: ") + ex.what());
  }
}

ModelCatalog::ModelCatalog(std::vector<ModelCatalogEntry> entries) : entries_(std::move(entries)) {}

const ModelCatalogEntry& ModelCatalog::find(std::string_view name, std::optional<CostKnob> tier) const {
  for (const auto& e : entries_)
    if (e.model_name == name && (!tier || e.tier == *tier)) return e;
  throw UnknownModel("unknown model: " + std::string(name));
}

const ModelCatalogEntry& ModelCatalog::weak_model(CostKnob tier, Subflag subflag) const {
  const ModelCatalogEntry* general = nullptr;
  for (const auto& e : entries_) {
    if (e.tier != tier || !e.subflag_affinity) continue;
    if (*e.subflag_affinity == subflag) return e;
    if (*e.subflag_affinity == Subflag::General && !general) general = &e;
  }
  if (general) return *general;
  throw UnknownModel("no weak model for tier " + std::string(to_string(tier)) + " subflag " +
                     std::string(to_string(subflag)));
}

const ModelCatalogEntry& ModelCatalog::strong_model(CostKnob tier) const {
  const ModelCatalogEntry* best = nullptr;
  for (const auto& e : entries_) {
    if (e.tier != tier || e.subflag_affinity) continue;
    if (!best || e.cost_per_mtok > best->cost_per_mtok) best = &e;
  }
  if (!best) throw UnknownModel("no strong model for tier " + std::string(to_string(tier)));
  return *best;
}

json ModelCatalog::to_json() const {
  json arr = json::array();
  for (const auto& e : entries_) arr.push_back(supervisor::to_json(e));
  return arr;
}

ModelCatalog ModelCatalog::from_json(const json& j) {
  if (!j.is_array()) throw InvalidSpec("model catalog must be a JSON array");
  std::vector<ModelCatalogEntry> out;
  for (const auto& e : j) out.push_back(model_entry_from_json(e));
  return ModelCatalog(std::move(out));
}

ModelCatalog ModelCatalog::load(const std::string& path) {
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw InvalidSpec("model catalog " + path + " is not valid JSON");
  return from_json(j);
}

std::pair<Money, Money> tier_price_band(CostKnob tier) {
  switch (tier) {
    case CostKnob::TradCouplet: return {Money::parse("0.15"), Money::parse("0.25")};
    case CostKnob::OpenSrc: return {Money::parse("0.30"), Money::parse("0.50")};
    case CostKnob::ClosedSrc: return {Money::parse("2.50"), Money::parse("5.00")};
  }
  return {Money{}, Money{}};
}

ModelCatalog default_catalog() {
  struct Cell {
    const char* name;
    CostKnob tier;
    std::optional<Subflag> sub;
    double capability;
  };
  using K = CostKnob;
  using S = Subflag;
  const Cell cells[] = {
      {"Phi-3.5-mini-coder", K::TradCouplet, S::Coding, 0.80},
      {"Phi-3.5-mini-rewriter", K::TradCouplet, S::SummarizationRewriting, 0.80},
      {"Phi-3.5-mini-math", K::TradCouplet, S::AnalyticalMaths, 0.78},
      {"Phi-3.5-mini-instruct", K::TradCouplet, S::General, 0.80},
      {"LLaMA-3-8B-Instruct", K::TradCouplet, std::nullopt, 0.86},
      {"CodeLLaMA-34B", K::OpenSrc, S::Coding, 0.90},
      {"LLaMA-3-8B-Instruct", K::OpenSrc, S::SummarizationRewriting, 0.88},
      {"Mixtral-8x7B-Instruct", K::OpenSrc, S::AnalyticalMaths, 0.88},
      {"Phi-3.5-mini-instruct", K::OpenSrc, S::General, 0.86},
      {"LLaMA-3-70B", K::OpenSrc, std::nullopt, 0.94},
      {"Claude-3.5-Haiku-coder", K::ClosedSrc, S::Coding, 0.95},
      {"Claude-3.5-Haiku-rewriter", K::ClosedSrc, S::SummarizationRewriting, 0.95},
      {"Claude-3.5-Haiku-math", K::ClosedSrc, S::AnalyticalMaths, 0.94},
      {"Claude-3.5-Haiku", K::ClosedSrc, S::General, 0.95},
      {"GPT-4o", K::ClosedSrc, std::nullopt, 1.00},
  };
  std::vector<ModelCatalogEntry> out;
  for (const auto& c : cells) {
    auto [lo, hi] = tier_price_band(c.tier);
    out.push_back({c.name, c.tier, c.sub, c.sub ? lo : hi, Money{}, c.capability});
  }
  return ModelCatalog(std::move(out));
}

CostKnob select_tier(std::string_view requested) {
  if (auto k = parse_cost_knob(requested)) return *k;
  return CostKnob::ClosedSrc;
}

std::vector<double> structural_features(const std::string& query) {
  static const std::vector<std::string> reasoning = {
      "why", "prove", "derive", "explain", "justify", "analyze", "analyse", "evaluate", "compare",
      "tradeoff", "tradeoffs", "implications", "design", "architect", "plan", "strategy", "reason",
      "critique", "optimize", "formal", "rigorous"};
  auto toks = words(query);
  double markers = 0;
  for (const auto& t : toks)
    if (std::find(reasoning.begin(), reasoning.end(), t) != reasoning.end()) markers += 1;
  double subq = static_cast<double>(std::count(query.begin(), query.end(), '?'));
  subq += static_cast<double>(count_if(toks.begin(), toks.end(), [](const std::string& t) {
    return t == "then" || t == "additionally" || t == "furthermore" || t == "also";
  }));
  double math = 0, nonspace = 0;
  for (unsigned char c : query) {
    if (std::isspace(c)) continue;
    nonspace += 1;
    if (std::string_view("=+-*/^<>%()[]{}|").find(static_cast<char>(c)) != std::string_view::npos ||
        std::isdigit(c))
      math += 1;
  }
  double density = nonspace > 0 ? math / nonspace : 0;
  return {static_cast<double>(whitespace_tokens(query)), markers, subq, density};
}

LogisticWinScorer::LogisticWinScorer() : bias_(-7.0), weights_{0.04, 1.1, 0.6, 3.0} {}

LogisticWinScorer::LogisticWinScorer(double bias, std::vector<double> weights)
    : bias_(bias), weights_(std::move(weights)) {}

double LogisticWinScorer::win_probability(const std::vector<double>& x) const {
  if (x.size() != weights_.size())
    throw ScorerUnavailable("win scorer expects " + std::to_string(weights_.size()) + " features, got " +
                            std::to_string(x.size()));
  double z = bias_;
  for (std::size_t i = 0; i < x.size(); ++i) z += weights_[i] * x[i];
  return 1.0 / (1.0 + std::exp(-z));
}

SubflagScores RuleSubflagClassifier::scores(const std::string& query) const {
  static const std::vector<std::string> coding = {
      "code", "function", "bug", "segfault", "compile", "compiler", "python", "java", "javascript",
      "rust", "parser", "debug", "refactor", "regex", "sql", "script", "api", "algorithm", "class",
      "stack trace", "exception", "implement", "unit test", "recursion", "null pointer", "git", "typescript"};
  static const std::vector<std::string> rewriting = {
      "summarize", "summary", "summarise", "rewrite", "paraphrase", "rephrase", "condense", "shorten",
      "formally", "formal tone", "tone", "proofread", "translate", "simplify", "polish", "tldr", "bullet points",
      "abstract", "more concise"};
  static const std::vector<std::string> analytical = {
      "calculate", "compute", "solve", "equation", "integral", "derivative", "probability", "statistics",
      "percent", "percentage", "average", "variance", "prove", "math", "sum", "ratio", "how many",
      "interest", "factor", "matrix", "expected value", "standard deviation"};
  auto toks = words(query);
  auto count = [&](const std::vector<std::string>& kw) {
    double n = 0;
    for (const auto& k : kw) n += static_cast<double>(count_phrase(toks, k) > 0);
    return n;
  };
  return {count(coding), count(rewriting), count(analytical), 0.0};
}

Subflag classify_subflag(const std::string& query, const SubflagClassifier& classifier) {
  SubflagScores s;
  try {
    s = classifier.scores(query);
  } catch (const std::exception&) {
    return Subflag::General;
  }
  std::size_t best = 3;
  for (std::size_t i = 0; i < 3; ++i) {
    if (!std::isfinite(s[i])) return Subflag::General;
    if (s[i] > s[best]) best = i;
  }
  // A tie at the top between specialised categories also goes to general.
  for (std::size_t i = 0; i < 3; ++i)
    if (i != best && best != 3 && s[i] == s[best]) return Subflag::General;
  return kAllSubflags[best];
}

std::string_view to_string(Route r) { return r == Route::Strong ? "strong" : "weak"; }

RoutingDecision route_strong_weak(const std::string& query, const ModelCatalog& catalog, CostKnob tier,
                                  const RouterConfig& cfg) {
  if (!(cfg.threshold > 0 && cfg.threshold < 1))
    throw std::invalid_argument("win threshold must lie in (0, 1)");
  static const LogisticWinScorer default_scorer;
  static const RuleSubflagClassifier default_subflags;
  const WinScorer& scorer = cfg.scorer ? *cfg.scorer : default_scorer;
  const SubflagClassifier& subs = cfg.subflags ? *cfg.subflags : default_subflags;

  RoutingDecision d;
  try {
    auto features = cfg.encoder ? (*cfg.encoder)(query) : structural_features(query);
    double p = scorer.win_probability(features);
    if (!std::isfinite(p) || p < 0 || p > 1) throw ScorerUnavailable("win probability out of range");
    d.win_probability = p;
  } catch (const std::exception& e) {
    d.route = Route::Weak;
    d.weak_fallback = true;
    d.subflag = Subflag::General;
    d.chosen_model = catalog.weak_model(tier, Subflag::General).model_name;
    d.note = std::string("win scorer unavailable, defaulting to weak/general: ") + e.what();
    return d;
  }
  if (d.win_probability > cfg.threshold) {
    d.route = Route::Strong;
    d.chosen_model = catalog.strong_model(tier).model_name;
  } else {
    d.route = Route::Weak;
    d.subflag = classify_subflag(query, subs);
    d.chosen_model = catalog.weak_model(tier, *d.subflag).model_name;
  }
  return d;
}

SessionMeta accumulate_cost(const SessionMeta& session, std::uint64_t token_count, const ModelCatalogEntry& model,
                            std::optional<Money> budget) {
  Money delta = token_cost(model.cost_per_mtok, token_count) + model.per_request_fee;
  Money next = session.cumulative_cost + delta;
  if (budget && next > *budget)
    throw BudgetExceeded("budget " + budget->to_string() + " USD exceeded: session " + session.session_id +
                         " would reach " + next.to_string() + " USD");
  SessionMeta out = session;
  out.cumulative_cost = next;
  return out;
}

}  // namespace supervisor
