#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "supervisor/state.hpp"

namespace supervisor {

/// One JSON-lines record:
///   {ts, session_id, node_id, tool, event, latency_ms, cost_usd, confidence}
/// `ts` is milliseconds on the turn's clock (start for start events, end
/// otherwise); `confidence` is null when the event carries none.
nlohmann::json trace_record(const TraceEvent& e, const std::string& session_id);

std::string trace_to_jsonl(const std::vector<TraceEvent>& events, const std::string& session_id);

// Throws CorruptState on a malformed line.
std::vector<nlohmann::json> parse_jsonl(const std::string& text);

std::string trace_path(const std::string& store_root, const std::string& session_id);

/// Appends events to `<root>/<session>.trace.jsonl`, creating it if needed.
void append_trace(const std::string& store_root, const std::string& session_id,
                  const std::vector<TraceEvent>& events);

/// Fixed-width timeline for terminals.
std::string render_trace(const std::vector<TraceEvent>& events);

}  // namespace supervisor
