#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "supervisor/money.hpp"
#include "supervisor/types.hpp"

namespace supervisor {

struct Attachment {
  enum class SourceKind { Url, Path, Inline };

  SourceKind kind = SourceKind::Path;
  // URL or filesystem path; for inline attachments an optional label.
  std::string location;
  std::vector<std::uint8_t> inline_bytes;
  std::optional<std::string> declared_name;
  std::optional<Modality> detected_modality;
  std::optional<std::string> mime;

  static Attachment url(std::string u);
  static Attachment path(std::string p);
  static Attachment inline_data(std::vector<std::uint8_t> bytes, std::optional<std::string> name = {});

  // Name used for extension lookup: declared name, else the location.
  std::string display_name() const;

  friend bool operator==(const Attachment&, const Attachment&) = default;
};

enum class TraceKind { Start, Done, Failed, Repaired, Clarify, Warning, Route, Verify };

std::string_view to_string(TraceKind k);
std::optional<TraceKind> parse_trace_kind(std::string_view s);

/// One entry of the append-only execution trace.
struct TraceEvent {
  TraceKind kind = TraceKind::Start;
  std::string node_id;
  std::string tool;
  std::string args_digest;
  double start_ms = 0;
  double end_ms = 0;
  std::string outcome;
  std::optional<double> confidence;
  Money cost;

  double latency_ms() const { return end_ms - start_ms; }
  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

enum class ContextLayer { Short, Relevant, Compressed };
std::string_view to_string(ContextLayer l);

struct ContextSegment {
  ContextLayer layer = ContextLayer::Short;
  double weight = 0;
  std::string text;
  friend bool operator==(const ContextSegment&, const ContextSegment&) = default;
};

/// Weighted, ordered context; segments appear as short, relevant, compressed.
struct ContextBundle {
  std::vector<ContextSegment> segments;

  bool empty() const { return segments.empty(); }
  // Concatenation with labelled delimiters.
  std::string render() const;
  friend bool operator==(const ContextBundle&, const ContextBundle&) = default;
};

struct SessionMeta {
  std::string session_id;
  std::int64_t created_at_ms = 0;
  Money cumulative_cost;
  std::uint64_t turn_count = 0;
  friend bool operator==(const SessionMeta&, const SessionMeta&) = default;
};

/// Everything a query needs across stage transitions. Single owner at a time.
struct QueryState {
  std::string user_query;
  CostKnob cost_knob = CostKnob::ClosedSrc;
  std::optional<std::string> clarify_question;
  std::optional<std::string> clarify_response;
  std::vector<Attachment> attachments;
  ContextBundle context;
  SessionMeta session;
  std::optional<ExecutionFlag> flag;
  std::optional<Subflag> subflag;
  std::vector<TraceEvent> trace;

  void append_trace(TraceEvent e) { trace.push_back(std::move(e)); }
  // Throws InvalidState when no question is pending.
  void set_clarify_response(std::string response);

  friend bool operator==(const QueryState&, const QueryState&) = default;
};

// Throws InvalidState describing the first violated invariant.
void validate(const QueryState& state);

using Clock = std::function<std::int64_t()>;
// Fills the span with random bytes.
using EntropySource = std::function<void(std::span<std::uint8_t>)>;

Clock system_clock_ms();
// Backed by std::random_device (the OS CSPRNG on Linux).
EntropySource system_entropy();
// Deterministic, for tests and simulation only.
EntropySource seeded_entropy(std::uint64_t seed);

/// `<epoch-millis>-<16 lowercase hex chars>`, cost and turns zeroed.
SessionMeta new_session(const Clock& clock, const EntropySource& entropy);

inline constexpr int kStateFormatVersion = 1;

struct SerializeOptions {
  std::size_t max_inline_bytes = std::size_t{64} << 20;
};

nlohmann::json to_json(const QueryState& state);
QueryState state_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TraceEvent& e);
TraceEvent trace_event_from_json(const nlohmann::json& j);

// Deterministic: identical states give identical bytes.
std::string serialize_state(const QueryState& state, const SerializeOptions& opts = {});
QueryState deserialize_state(std::string_view bytes);

std::string state_path(const std::string& store_root, const std::string& session_id);
// Write-then-rename; a crash never leaves a half-written state file.
void save_state(const std::string& store_root, const QueryState& state,
                const SerializeOptions& opts = {});
// Throws UnknownSession when missing, CorruptState/VersionMismatch when bad.
QueryState load_state(const std::string& store_root, const std::string& session_id);

}  // namespace supervisor
