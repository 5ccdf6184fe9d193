#include "supervisor/trace.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "supervisor/errors.hpp"

namespace supervisor {

using json = nlohmann::json;

json trace_record(const TraceEvent& e, const std::string& session_id) {
  double ts = e.kind == TraceKind::Start ? e.start_ms : e.end_ms;
  return {{"ts", ts},
          {"session_id", session_id},
          {"node_id", e.node_id},
          {"tool", e.tool},
          {"event", to_string(e.kind)},
          {"latency_ms", e.kind == TraceKind::Start ? 0.0 : e.latency_ms()},
          {"cost_usd", e.cost.usd()},
          {"confidence", e.confidence ? json(*e.confidence) : json(nullptr)},
          {"detail", e.outcome}};
}

std::string trace_to_jsonl(const std::vector<TraceEvent>& events, const std::string& session_id) {
  std::string out;
  for (const auto& e : events) {
    out += trace_record(e, session_id).dump();
    out += '\n';
  }
  return out;
}

std::vector<json> parse_jsonl(const std::string& text) {
  std::vector<json> out;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw CorruptState("trace line " + std::to_string(n) + " is not JSON");
    out.push_back(std::move(j));
  }
  return out;
}

std::string trace_path(const std::string& store_root, const std::string& session_id) {
  return (std::filesystem::path(store_root) / (session_id + ".trace.jsonl")).string();
}

void append_trace(const std::string& store_root, const std::string& session_id,
                  const std::vector<TraceEvent>& events) {
  std::filesystem::create_directories(store_root);
  std::ofstream f(trace_path(store_root, session_id), std::ios::app | std::ios::binary);
  if (!f) throw std::runtime_error("cannot open trace file for " + session_id);
  f << trace_to_jsonl(events, session_id);
  if (!f) throw std::runtime_error("cannot write trace file for " + session_id);
}

std::string render_trace(const std::vector<TraceEvent>& events) {
  std::string out;
  char buf[512];
  for (const auto& e : events) {
    std::string conf = e.confidence ? std::to_string(*e.confidence).substr(0, 4) : "-";
    std::snprintf(buf, sizeof buf, "%10.1f  %-9s %-16s %-28s %8.1f ms  $%s  conf %-4s  %s\n",
                  e.kind == TraceKind::Start ? e.start_ms : e.end_ms, std::string(to_string(e.kind)).c_str(),
                  e.node_id.c_str(), e.tool.c_str(), e.kind == TraceKind::Start ? 0.0 : e.latency_ms(),
                  e.cost.to_string().c_str(), conf.c_str(), e.outcome.c_str());
    out += buf;
  }
  return out;
}

}  // namespace supervisor
