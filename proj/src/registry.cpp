#include "supervisor/registry.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <tuple>

#include "supervisor/errors.hpp"
#include "supervisor/util.hpp"

namespace supervisor {

using nlohmann::json;

std::string_view to_string(ToolCategory c) {
  switch (c) {
    case ToolCategory::SemanticAnalyzer: return "semantic_analyzer";
    case ToolCategory::Image: return "image";
    case ToolCategory::Audio: return "audio";
    case ToolCategory::Document: return "document";
    case ToolCategory::Memory: return "memory";
    case ToolCategory::Orchestration: return "orchestration";
    case ToolCategory::ComplexityAnalysis: return "complexity_analysis";
  }
  return "semantic_analyzer";
}

std::optional<ToolCategory> parse_tool_category(std::string_view s) {
  for (auto c : {ToolCategory::SemanticAnalyzer, ToolCategory::Image, ToolCategory::Audio,
                 ToolCategory::Document, ToolCategory::Memory, ToolCategory::Orchestration,
                 ToolCategory::ComplexityAnalysis})
    if (to_string(c) == s) return c;
  return std::nullopt;
}

Predicate Predicate::parse(std::string_view d) {
  Predicate p;
  auto arg = [&](std::string_view prefix) -> std::optional<std::string> {
    if (d.size() > prefix.size() + 1 && d.substr(0, prefix.size()) == prefix && d[prefix.size()] == '(' &&
        d.back() == ')')
      return std::string(d.substr(prefix.size() + 1, d.size() - prefix.size() - 2));
    return std::nullopt;
  };
  if (d == "nonempty_query") {
    p.kind = Kind::NonemptyQuery;
  } else if (d == "no_attachments") {
    p.kind = Kind::NoAttachments;
  } else if (auto a = arg("has_attachment")) {
    if (*a == "any") {
      p.kind = Kind::HasAnyAttachment;
    } else {
      auto m = parse_modality(*a);
      if (!m) throw InvalidSpec("unknown modality in predicate: " + std::string(d));
      p.kind = Kind::HasAttachment;
      p.modality = *m;
    }
  } else if (auto t = arg("produces")) {
    if (t->empty()) throw InvalidSpec("empty tag in predicate");
    p.kind = Kind::Produces;
    p.tag = *t;
  } else {
    throw InvalidSpec("unknown predicate: " + std::string(d));
  }
  return p;
}

std::string Predicate::descriptor() const {
  switch (kind) {
    case Kind::NonemptyQuery: return "nonempty_query";
    case Kind::NoAttachments: return "no_attachments";
    case Kind::HasAnyAttachment: return "has_attachment(any)";
    case Kind::HasAttachment: return "has_attachment(" + std::string(to_string(modality)) + ")";
    case Kind::Produces: return "produces(" + tag + ")";
  }
  return "nonempty_query";
}

bool Predicate::holds(const QueryState& state) const {
  switch (kind) {
    case Kind::NonemptyQuery:
      return whitespace_tokens(state.user_query) > 0;
    case Kind::NoAttachments:
      return state.attachments.empty();
    case Kind::HasAnyAttachment:
      return !state.attachments.empty();
    case Kind::HasAttachment:
      return std::any_of(state.attachments.begin(), state.attachments.end(),
                         [&](const Attachment& a) { return a.detected_modality == modality; });
    case Kind::Produces:
      return true;
  }
  return false;
}

Money CostProfile::expected() const { return per_invocation + token_cost(per_mtok, typical_tokens); }

std::string Requirement::describe() const {
  std::vector<std::string> in, out;
  for (auto m : inputs) in.emplace_back(to_string(m));
  for (const auto& t : outputs) out.push_back(t);
  std::string s = "{" + join(in, ",") + "} -> {" + join(out, ",") + "}";
  if (tier) s += " @" + std::string(to_string(*tier));
  return s;
}

bool covers(const ToolSpec& spec, const Requirement& req) {
  for (auto m : req.inputs)
    if (!spec.input_modalities.contains(m)) return false;
  for (const auto& t : req.outputs)
    if (!spec.output_tags.contains(t)) return false;
  if (req.tier && spec.tier != *req.tier) return false;
  return true;
}

double latency_from_uniform(const LatencyPrior& prior, double u) {
  const double lo = prior.min_ms, hi = prior.max_ms;
  if (hi <= lo) return lo;
  double x;
  if (prior.shape == LatencyShape::Uniform) {
    x = lo + u * (hi - lo);
  } else {
    // Symmetric triangular, inverse CDF.
    x = u < 0.5 ? lo + (hi - lo) * std::sqrt(u / 2) : hi - (hi - lo) * std::sqrt((1 - u) / 2);
  }
  return std::clamp(x, lo, hi);
}

namespace {

void check_spec(const ToolSpec& s) {
  if (s.name.empty()) throw InvalidSpec("tool name is empty");
  if (!(s.latency.min_ms > 0) || !(s.latency.max_ms > 0))
    throw InvalidSpec("latency prior of " + s.name + " must be strictly positive");
  if (s.latency.min_ms > s.latency.max_ms)
    throw InvalidSpec("latency prior of " + s.name + " has min > max");
  if (s.cost.per_invocation < Money{} || s.cost.per_mtok < Money{})
    throw InvalidSpec("negative cost profile for " + s.name);
}

std::string shape_name(LatencyShape s) { return s == LatencyShape::Uniform ? "uniform" : "triangular"; }

}  // namespace

json to_json(const ToolSpec& s) {
  json j;
  j["name"] = s.name;
  j["category"] = to_string(s.category);
  json in = json::array();
  for (auto m : s.input_modalities) in.push_back(to_string(m));
  j["input_modalities"] = in;
  j["output_tags"] = s.output_tags;
  json pre = json::array(), post = json::array();
  for (const auto& p : s.preconditions) pre.push_back(p.descriptor());
  for (const auto& p : s.postconditions) post.push_back(p.descriptor());
  j["preconditions"] = pre;
  j["postconditions"] = post;
  j["latency_ms"] = {{"min", s.latency.min_ms}, {"max", s.latency.max_ms}, {"shape", shape_name(s.latency.shape)}};
  j["cost"] = {{"per_invocation_usd", s.cost.per_invocation.to_string()},
               {"per_mtok_usd", s.cost.per_mtok.to_string()},
               {"typical_tokens", s.cost.typical_tokens}};
  j["tier"] = to_string(s.tier);
  if (!s.endpoint.empty()) j["endpoint"] = s.endpoint;
  if (s.max_concurrency) j["max_concurrency"] = s.max_concurrency;
  return j;
}

ToolSpec tool_spec_from_json(const json& j) {
  try {
    ToolSpec s;
    s.name = j.at("name").get<std::string>();
    auto cat = parse_tool_category(j.at("category").get<std::string>());
    if (!cat) throw InvalidSpec("unknown category for tool " + s.name);
    s.category = *cat;
    for (const auto& m : j.value("input_modalities", json::array())) {
      auto mod = parse_modality(m.get<std::string>());
      if (!mod) throw InvalidSpec("unknown modality for tool " + s.name);
      s.input_modalities.insert(*mod);
    }
    for (const auto& t : j.value("output_tags", json::array())) s.output_tags.insert(t.get<std::string>());
    for (const auto& p : j.value("preconditions", json::array()))
      s.preconditions.push_back(Predicate::parse(p.get<std::string>()));
    for (const auto& p : j.value("postconditions", json::array()))
      s.postconditions.push_back(Predicate::parse(p.get<std::string>()));
    const auto& lat = j.at("latency_ms");
    s.latency.min_ms = lat.at("min").get<double>();
    s.latency.max_ms = lat.at("max").get<double>();
    auto shape = lat.value("shape", std::string("uniform"));
    if (shape == "uniform") s.latency.shape = LatencyShape::Uniform;
    else if (shape == "triangular") s.latency.shape = LatencyShape::Triangular;
    else throw InvalidSpec("unknown latency shape " + shape);
    if (j.contains("cost")) {
      const auto& c = j["cost"];
      s.cost.per_invocation = Money::parse(c.value("per_invocation_usd", std::string("0")));
      s.cost.per_mtok = Money::parse(c.value("per_mtok_usd", std::string("0")));
      s.cost.typical_tokens = c.value("typical_tokens", std::uint64_t{0});
    }
    auto tier = parse_cost_knob(j.value("tier", std::string("trad_couplet")));
    if (!tier) throw InvalidSpec("unknown tier for tool " + s.name);
    s.tier = *tier;
    s.endpoint = j.value("endpoint", std::string());
    s.max_concurrency = j.value("max_concurrency", 0u);
    check_spec(s);
    return s;
  } catch (const json::exception& e) {
    throw InvalidSpec(std::string("malformed tool spec: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw InvalidSpec(std::string("malformed tool spec: ") + e.what());
  }
}

ToolRegistry::ToolRegistry(const ToolRegistry& other) {
  std::shared_lock lock(other.mu_);
  specs_ = other.specs_;
  by_name_ = other.by_name_;
}

ToolRegistry& ToolRegistry::operator=(const ToolRegistry& other) {
  if (this == &other) return *this;
  std::scoped_lock lock(mu_);
  std::shared_lock other_lock(other.mu_);
  specs_ = other.specs_;
  by_name_ = other.by_name_;
  return *this;
}

ToolId ToolRegistry::register_tool(ToolSpec spec) {
  check_spec(spec);
  std::unique_lock lock(mu_);
  if (by_name_.contains(spec.name)) throw DuplicateTool("tool already registered: " + spec.name);
  ToolId id{static_cast<std::uint32_t>(specs_.size())};
  by_name_.emplace(spec.name, id);
  specs_.push_back(std::move(spec));
  return id;
}

const ToolSpec& ToolRegistry::spec(ToolId id) const {
  std::shared_lock lock(mu_);
  if (id.value >= specs_.size()) throw UnknownTool("unknown tool id " + std::to_string(id.value));
  return specs_[id.value];
}

std::optional<ToolId> ToolRegistry::find(std::string_view name) const {
  std::shared_lock lock(mu_);
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

ToolId ToolRegistry::id_of(std::string_view name) const {
  auto id = find(name);
  if (!id) throw UnknownTool("unknown tool " + std::string(name));
  return *id;
}

std::vector<ToolId> ToolRegistry::ids() const {
  std::shared_lock lock(mu_);
  std::vector<ToolId> out;
  out.reserve(specs_.size());
  for (std::uint32_t i = 0; i < specs_.size(); ++i) out.push_back(ToolId{i});
  return out;
}

std::size_t ToolRegistry::size() const {
  std::shared_lock lock(mu_);
  return specs_.size();
}

std::vector<ToolId> ToolRegistry::match_tools(const Requirement& req, const QueryState* state,
                                              std::span<const ToolId> exclude) const {
  std::shared_lock lock(mu_);
  struct Candidate {
    double latency;
    std::int64_t cost;
    const std::string* name;
    ToolId id;
  };
  std::vector<Candidate> found;
  for (std::uint32_t i = 0; i < specs_.size(); ++i) {
    const auto& s = specs_[i];
    if (std::find(exclude.begin(), exclude.end(), ToolId{i}) != exclude.end()) continue;
    if (!covers(s, req)) continue;
    if (state && !std::all_of(s.preconditions.begin(), s.preconditions.end(),
                              [&](const Predicate& p) { return p.holds(*state); }))
      continue;
    found.push_back({s.latency.mean(), s.cost.expected().micros(), &s.name, ToolId{i}});
  }
  if (found.empty()) throw NoCapableTool(req.describe());
  std::sort(found.begin(), found.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(a.latency, a.cost, *a.name) < std::tie(b.latency, b.cost, *b.name);
  });
  std::vector<ToolId> out;
  out.reserve(found.size());
  for (const auto& c : found) out.push_back(c.id);
  return out;
}

double ToolRegistry::sample_latency(ToolId id, std::uint64_t seed) const {
  const auto& s = spec(id);
  return latency_from_uniform(s.latency, unit_uniform(mix_seed({seed, id.value, 0x1a7e})));
}

json ToolRegistry::to_json() const {
  std::shared_lock lock(mu_);
  json arr = json::array();
  for (const auto& s : specs_) arr.push_back(supervisor::to_json(s));
  return arr;
}

ToolRegistry ToolRegistry::from_json(const json& catalog) {
  if (!catalog.is_array()) throw InvalidSpec("tool catalog must be a JSON array");
  ToolRegistry r;
  for (const auto& j : catalog) r.register_tool(tool_spec_from_json(j));
  return r;
}

ToolRegistry ToolRegistry::load(const std::string& path) {
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw InvalidSpec("tool catalog " + path + " is not valid JSON");
  return from_json(j);
}

namespace {

struct Def {
  const char* name;
  ToolCategory category;
  std::set<Modality> inputs;
  std::set<std::string> outputs;
  std::vector<const char*> pre;
  CostKnob tier;
  const char* per_invocation;
  const char* per_mtok;
  std::uint64_t tokens;
};

LatencyPrior category_prior(ToolCategory c) {
  switch (c) {
    case ToolCategory::SemanticAnalyzer: return {450, 1200};
    case ToolCategory::Image: return {800, 2100};
    case ToolCategory::Audio: return {600, 1800};
    case ToolCategory::Document: return {900, 2400};
    case ToolCategory::Memory: return {50, 150};
    case ToolCategory::Orchestration: return {1200, 3500};
    case ToolCategory::ComplexityAnalysis: return {200, 600};
  }
  return {1, 1};
}

}  // namespace

ToolRegistry default_registry() {
  using M = Modality;
  using C = ToolCategory;
  const std::set<std::string> llm_out{"answer", "contextualize", "synthesize_text"};
  const std::vector<Def> defs = {
      {"semantic-analyzer-slm", C::SemanticAnalyzer, {M::Text}, llm_out, {"nonempty_query"}, CostKnob::TradCouplet, "0", "0.15", 800},
      {"semantic-analyzer-slm-b", C::SemanticAnalyzer, {M::Text}, llm_out, {"nonempty_query"}, CostKnob::TradCouplet, "0.0001", "0.15", 800},
      {"semantic-analyzer-open", C::SemanticAnalyzer, {M::Text}, llm_out, {"nonempty_query"}, CostKnob::OpenSrc, "0", "0.30", 800},
      {"semantic-analyzer-open-b", C::SemanticAnalyzer, {M::Text}, llm_out, {"nonempty_query"}, CostKnob::OpenSrc, "0.0001", "0.30", 800},
      {"semantic-analyzer-frontier", C::SemanticAnalyzer, {M::Text}, llm_out, {"nonempty_query"}, CostKnob::ClosedSrc, "0", "2.50", 800},
      {"semantic-analyzer-frontier-b", C::SemanticAnalyzer, {M::Text}, llm_out, {"nonempty_query"}, CostKnob::ClosedSrc, "0.0001", "2.50", 800},
      {"yolo-detect", C::Image, {M::Image, M::Video}, {"detect_objects", "detections", "tags"}, {"has_attachment(any)"}, CostKnob::TradCouplet, "0.0004", "0", 0},
      {"clip-embed", C::Image, {M::Image}, {"embed_image", "embedding", "tags"}, {"has_attachment(any)"}, CostKnob::TradCouplet, "0.0003", "0", 0},
      {"vision-qa", C::Image, {M::Image, M::Video, M::Document}, {"describe", "detect_objects", "detections", "text_blocks", "tags"}, {"has_attachment(any)"}, CostKnob::TradCouplet, "0.0012", "0", 0},
      {"image-generator", C::Image, {M::Text}, {"generate_image", "image_ref"}, {"nonempty_query"}, CostKnob::TradCouplet, "0.0020", "0", 0},
      {"image-generator-b", C::Image, {M::Text}, {"generate_image", "image_ref"}, {"nonempty_query"}, CostKnob::TradCouplet, "0.0025", "0", 0},
      {"whisper-transcribe", C::Audio, {M::Audio, M::Video}, {"transcribe", "transcript"}, {"has_attachment(any)"}, CostKnob::TradCouplet, "0.0006", "0", 0},
      {"speech-recognizer", C::Audio, {M::Audio, M::Video}, {"transcribe", "transcript"}, {"has_attachment(any)"}, CostKnob::TradCouplet, "0.0008", "0", 0},
      {"tesseract-ocr", C::Document, {M::Image, M::Document}, {"ocr", "text_blocks"}, {"has_attachment(any)"}, CostKnob::TradCouplet, "0.0005", "0", 0},
      {"pdf-parser", C::Document, {M::Document}, {"parse_pdf", "text_blocks", "tables"}, {"has_attachment(any)"}, CostKnob::TradCouplet, "0.0004", "0", 0},
      {"table-detector", C::Document, {M::Document, M::Image}, {"extract_tables", "tables"}, {"has_attachment(any)"}, CostKnob::TradCouplet, "0.0006", "0", 0},
      {"memory-retrieve", C::Memory, {}, {"retrieve", "memory_context"}, {}, CostKnob::TradCouplet, "0.00005", "0", 0},
      {"memory-retrieve-b", C::Memory, {}, {"retrieve", "memory_context"}, {}, CostKnob::TradCouplet, "0.00008", "0", 0},
      {"temporal-aligner", C::Orchestration, {}, {"align", "timeline"}, {}, CostKnob::TradCouplet, "0.0004", "0.20", 600},
      {"temporal-aligner-b", C::Orchestration, {}, {"align", "timeline"}, {}, CostKnob::TradCouplet, "0.0005", "0.20", 600},
      {"synthesizer", C::Orchestration, {}, {"synthesize", "synthesis"}, {}, CostKnob::TradCouplet, "0.0004", "0.20", 1200},
      {"synthesizer-b", C::Orchestration, {}, {"synthesize", "synthesis"}, {}, CostKnob::TradCouplet, "0.0005", "0.20", 1200},
      {"moe-aggregator", C::Orchestration, {}, {"aggregate", "aggregate_answer"}, {}, CostKnob::TradCouplet, "0.0004", "0.20", 900},
      {"moe-aggregator-b", C::Orchestration, {}, {"aggregate", "aggregate_answer"}, {}, CostKnob::TradCouplet, "0.0005", "0.20", 900},
      {"complexity-analyzer", C::ComplexityAnalysis, {}, {"route", "complexity"}, {}, CostKnob::TradCouplet, "0.00005", "0.15", 200},
      {"complexity-analyzer-b", C::ComplexityAnalysis, {}, {"route", "complexity"}, {}, CostKnob::TradCouplet, "0.00008", "0.15", 200},
      {"task-decomposer", C::ComplexityAnalysis, {}, {"decompose", "subtasks"}, {}, CostKnob::TradCouplet, "0.0001", "0.15", 400},
      {"task-decomposer-b", C::ComplexityAnalysis, {}, {"decompose", "subtasks"}, {}, CostKnob::TradCouplet, "0.00015", "0.15", 400},
  };
  ToolRegistry r;
  for (const auto& d : defs) {
    ToolSpec s;
    s.name = d.name;
    s.category = d.category;
    s.input_modalities = d.inputs;
    s.output_tags = d.outputs;
    for (const auto* p : d.pre) s.preconditions.push_back(Predicate::parse(p));
    s.postconditions.push_back(Predicate::parse("produces(" + *d.outputs.begin() + ")"));
    s.latency = category_prior(d.category);
    s.cost = {Money::parse(d.per_invocation), Money::parse(d.per_mtok), d.tokens};
    s.tier = d.tier;
    s.max_concurrency = 8;
    r.register_tool(std::move(s));
  }
  return r;
}

}  // namespace supervisor
