#include "supervisor/state.hpp"

#include <chrono>
#include <filesystem>
#include <random>
#include <sstream>

#include "supervisor/errors.hpp"
#include "supervisor/util.hpp"

namespace supervisor {

using nlohmann::json;

Attachment Attachment::url(std::string u) {
  Attachment a;
  a.kind = SourceKind::Url;
  a.location = std::move(u);
  return a;
}

Attachment Attachment::path(std::string p) {
  Attachment a;
  a.kind = SourceKind::Path;
  a.location = std::move(p);
  return a;
}

Attachment Attachment::inline_data(std::vector<std::uint8_t> bytes, std::optional<std::string> name) {
  Attachment a;
  a.kind = SourceKind::Inline;
  a.inline_bytes = std::move(bytes);
  a.declared_name = std::move(name);
  return a;
}

std::string Attachment::display_name() const {
  if (declared_name && !declared_name->empty()) return *declared_name;
  return location;
}

std::string_view to_string(TraceKind k) {
  switch (k) {
    case TraceKind::Start: return "start";
    case TraceKind::Done: return "done";
    case TraceKind::Failed: return "failed";
    case TraceKind::Repaired: return "repaired";
    case TraceKind::Clarify: return "clarify";
    case TraceKind::Warning: return "warning";
    case TraceKind::Route: return "route";
    case TraceKind::Verify: return "verify";
  }
  return "warning";
}

std::optional<TraceKind> parse_trace_kind(std::string_view s) {
  for (auto k : {TraceKind::Start, TraceKind::Done, TraceKind::Failed, TraceKind::Repaired,
                 TraceKind::Clarify, TraceKind::Warning, TraceKind::Route, TraceKind::Verify})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

std::string_view to_string(ContextLayer l) {
  switch (l) {
    case ContextLayer::Short: return "short";
    case ContextLayer::Relevant: return "relevant";
    case ContextLayer::Compressed: return "compressed";
  }
  return "short";
}

std::string ContextBundle::render() const {
  std::ostringstream out;
  for (const auto& s : segments) {
    char w[32];
    std::snprintf(w, sizeof w, "%.2f", s.weight);
    out << "### " << to_string(s.layer) << " (weight " << w << ")\n";
    out << s.text;
    if (!s.text.empty() && s.text.back() != '\n') out << '\n';
  }
  return out.str();
}

void QueryState::set_clarify_response(std::string response) {
  if (!clarify_question) throw InvalidState("clarify_response set without a pending clarify_question");
  clarify_response = std::move(response);
}

void validate(const QueryState& state) {
  if (state.clarify_response && !state.clarify_question)
    throw InvalidState("clarify_response present without clarify_question");
  for (const auto& a : state.attachments) {
    if (a.detected_modality == Modality::Text)
      throw InvalidState("attachment modality must be image, audio, video, document or unknown");
    if (a.kind != Attachment::SourceKind::Inline && !a.inline_bytes.empty())
      throw InvalidState("inline bytes on a non-inline attachment");
  }
  if (state.session.cumulative_cost < Money{}) throw InvalidState("negative cumulative cost");
}

Clock system_clock_ms() {
  return [] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
  };
}

EntropySource system_entropy() {
  return [](std::span<std::uint8_t> out) {
    static thread_local std::random_device rd;
    for (std::size_t i = 0; i < out.size(); i += 4) {
      std::uint32_t v = rd();
      for (std::size_t j = 0; j < 4 && i + j < out.size(); ++j) out[i + j] = (v >> (8 * j)) & 0xff;
    }
  };
}

EntropySource seeded_entropy(std::uint64_t seed) {
  auto engine = std::make_shared<std::mt19937_64>(seed);
  return [engine](std::span<std::uint8_t> out) {
    for (std::size_t i = 0; i < out.size(); i += 8) {
      std::uint64_t v = (*engine)();
      for (std::size_t j = 0; j < 8 && i + j < out.size(); ++j) out[i + j] = (v >> (8 * j)) & 0xff;
    }
  };
}

SessionMeta new_session(const Clock& clock, const EntropySource& entropy) {
  std::array<std::uint8_t, 12> bytes{};  // 96 bits drawn; 64 used in the id
  entropy(bytes);
  std::uint64_t suffix = 0;
  for (int i = 0; i < 8; ++i) suffix |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  SessionMeta meta;
  meta.created_at_ms = clock();
  meta.session_id = std::to_string(meta.created_at_ms) + "-" + hex64(suffix);
  return meta;
}

namespace {

std::string_view to_string(Attachment::SourceKind k) {
  switch (k) {
    case Attachment::SourceKind::Url: return "url";
    case Attachment::SourceKind::Path: return "path";
    case Attachment::SourceKind::Inline: return "inline";
  }
  return "path";
}

Attachment::SourceKind parse_source_kind(const std::string& s) {
  if (s == "url") return Attachment::SourceKind::Url;
  if (s == "path") return Attachment::SourceKind::Path;
  if (s == "inline") return Attachment::SourceKind::Inline;
  throw CorruptState("unknown attachment source kind: " + s);
}

template <typename T, typename F>
json opt(const std::optional<T>& v, F&& conv) {
  return v ? json(conv(*v)) : json(nullptr);
}

json to_json(const Attachment& a) {
  json j;
  j["kind"] = to_string(a.kind);
  j["location"] = a.location;
  j["inline_bytes"] = a.kind == Attachment::SourceKind::Inline ? json(base64_encode(a.inline_bytes))
                                                               : json(nullptr);
  j["declared_name"] = opt(a.declared_name, [](const std::string& s) { return s; });
  j["detected_modality"] = opt(a.detected_modality, [](Modality m) { return std::string(to_string(m)); });
  j["mime"] = opt(a.mime, [](const std::string& s) { return s; });
  return j;
}

template <typename T, typename P>
std::optional<T> parse_opt(const json& j, const char* key, P&& parse) {
  const auto& v = j.at(key);
  if (v.is_null()) return std::nullopt;
  return parse(v.get<std::string>());
}

Attachment attachment_from_json(const json& j) {
  Attachment a;
  a.kind = parse_source_kind(j.at("kind").get<std::string>());
  a.location = j.at("location").get<std::string>();
  if (!j.at("inline_bytes").is_null()) a.inline_bytes = base64_decode(j.at("inline_bytes").get<std::string>());
  a.declared_name = parse_opt<std::string>(j, "declared_name", [](std::string s) { return s; });
  a.detected_modality = parse_opt<Modality>(j, "detected_modality", [](const std::string& s) {
    auto m = parse_modality(s);
    if (!m) throw CorruptState("unknown modality: " + s);
    return *m;
  });
  a.mime = parse_opt<std::string>(j, "mime", [](std::string s) { return s; });
  return a;
}

json to_json(const ContextBundle& c) {
  json segs = json::array();
  for (const auto& s : c.segments)
    segs.push_back({{"layer", to_string(s.layer)}, {"weight", s.weight}, {"text", s.text}});
  return {{"segments", segs}};
}

ContextBundle context_from_json(const json& j) {
  ContextBundle c;
  for (const auto& s : j.at("segments")) {
    ContextSegment seg;
    auto layer = s.at("layer").get<std::string>();
    if (layer == "short") seg.layer = ContextLayer::Short;
    else if (layer == "relevant") seg.layer = ContextLayer::Relevant;
    else if (layer == "compressed") seg.layer = ContextLayer::Compressed;
    else throw CorruptState("unknown context layer: " + layer);
    seg.weight = s.at("weight").get<double>();
    seg.text = s.at("text").get<std::string>();
    c.segments.push_back(std::move(seg));
  }
  return c;
}

}  // namespace

json to_json(const TraceEvent& e) {
  return {{"kind", to_string(e.kind)},
          {"node_id", e.node_id},
          {"tool", e.tool},
          {"args_digest", e.args_digest},
          {"start_ms", e.start_ms},
          {"end_ms", e.end_ms},
          {"outcome", e.outcome},
          {"confidence", e.confidence ? json(*e.confidence) : json(nullptr)},
          {"cost_usd", e.cost.to_string()}};
}

TraceEvent trace_event_from_json(const json& j) {
  TraceEvent e;
  auto kind = parse_trace_kind(j.at("kind").get<std::string>());
  if (!kind) throw CorruptState("unknown trace kind");
  e.kind = *kind;
  e.node_id = j.at("node_id").get<std::string>();
  e.tool = j.at("tool").get<std::string>();
  e.args_digest = j.at("args_digest").get<std::string>();
  e.start_ms = j.at("start_ms").get<double>();
  e.end_ms = j.at("end_ms").get<double>();
  e.outcome = j.at("outcome").get<std::string>();
  if (!j.at("confidence").is_null()) e.confidence = j.at("confidence").get<double>();
  e.cost = Money::parse(j.at("cost_usd").get<std::string>());
  return e;
}

json to_json(const QueryState& s) {
  json j;
  j["user_query"] = s.user_query;
  j["cost_knob"] = to_string(s.cost_knob);
  j["clarify_question"] = opt(s.clarify_question, [](const std::string& v) { return v; });
  j["clarify_response"] = opt(s.clarify_response, [](const std::string& v) { return v; });
  json atts = json::array();
  for (const auto& a : s.attachments) atts.push_back(to_json(a));
  j["attachments"] = atts;
  j["context"] = to_json(s.context);
  j["session"] = {{"session_id", s.session.session_id},
                  {"created_at", s.session.created_at_ms},
                  {"cumulative_cost", s.session.cumulative_cost.to_string()},
                  {"turn_count", s.session.turn_count}};
  j["flag"] = opt(s.flag, [](ExecutionFlag f) { return std::string(to_string(f)); });
  j["subflag"] = opt(s.subflag, [](Subflag f) { return std::string(to_string(f)); });
  json trace = json::array();
  for (const auto& e : s.trace) trace.push_back(to_json(e));
  j["trace"] = trace;
  return j;
}

QueryState state_from_json(const json& j) {
  QueryState s;
  s.user_query = j.at("user_query").get<std::string>();
  auto knob = parse_cost_knob(j.at("cost_knob").get<std::string>());
  if (!knob) throw CorruptState("unknown cost knob");
  s.cost_knob = *knob;
  s.clarify_question = parse_opt<std::string>(j, "clarify_question", [](std::string v) { return v; });
  s.clarify_response = parse_opt<std::string>(j, "clarify_response", [](std::string v) { return v; });
  for (const auto& a : j.at("attachments")) s.attachments.push_back(attachment_from_json(a));
  s.context = context_from_json(j.at("context"));
  const auto& sess = j.at("session");
  s.session.session_id = sess.at("session_id").get<std::string>();
  s.session.created_at_ms = sess.at("created_at").get<std::int64_t>();
  s.session.cumulative_cost = Money::parse(sess.at("cumulative_cost").get<std::string>());
  s.session.turn_count = sess.at("turn_count").get<std::uint64_t>();
  s.flag = parse_opt<ExecutionFlag>(j, "flag", [](const std::string& v) {
    auto f = parse_flag(v);
    if (!f) throw CorruptState("unknown execution flag: " + v);
    return *f;
  });
  s.subflag = parse_opt<Subflag>(j, "subflag", [](const std::string& v) {
    auto f = parse_subflag(v);
    if (!f) throw CorruptState("unknown subflag: " + v);
    return *f;
  });
  for (const auto& e : j.at("trace")) s.trace.push_back(trace_event_from_json(e));
  return s;
}

std::string serialize_state(const QueryState& state, const SerializeOptions& opts) {
  validate(state);
  for (const auto& a : state.attachments)
    if (a.inline_bytes.size() > opts.max_inline_bytes)
      throw SizeExceeded("inline attachment of " + std::to_string(a.inline_bytes.size()) +
                         " bytes exceeds limit of " + std::to_string(opts.max_inline_bytes));
  json doc = {{"version", kStateFormatVersion}, {"state", to_json(state)}};
  return doc.dump(2);
}

QueryState deserialize_state(std::string_view bytes) {
  json doc = json::parse(bytes.begin(), bytes.end(), nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded() || !doc.is_object()) throw CorruptState("state document is not valid JSON");
  if (!doc.contains("version") || !doc["version"].is_number_integer())
    throw CorruptState("state document has no integer version tag");
  if (doc["version"].get<int>() != kStateFormatVersion)
    throw VersionMismatch("unsupported state version " + doc["version"].dump());
  try {
    QueryState s = state_from_json(doc.at("state"));
    validate(s);
    return s;
  } catch (const json::exception& e) {
    throw CorruptState(std::string("malformed state: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CorruptState(std::string("malformed state: ") + e.what());
  } catch (const InvalidState& e) {
    throw CorruptState(std::string("state violates invariants: ") + e.what());
  }
}

std::string state_path(const std::string& store_root, const std::string& session_id) {
  return (std::filesystem::path(store_root) / (session_id + ".state.json")).string();
}

void save_state(const std::string& store_root, const QueryState& state, const SerializeOptions& opts) {
  write_file_atomic(state_path(store_root, state.session.session_id), serialize_state(state, opts));
}

QueryState load_state(const std::string& store_root, const std::string& session_id) {
  auto path = state_path(store_root, session_id);
  if (!std::filesystem::exists(path)) throw UnknownSession("no state for session " + session_id);
  return deserialize_state(read_file(path));
}

}  // namespace supervisor
