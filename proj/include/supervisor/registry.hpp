#pragma once

#include <compare>
#include <cstdint>
#include <deque>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "supervisor/money.hpp"
#include "supervisor/state.hpp"
#include "supervisor/types.hpp"

namespace supervisor {

enum class ToolCategory {
  SemanticAnalyzer,
  Image,
  Audio,
  Document,
  Memory,
  Orchestration,
  ComplexityAnalysis
};

std::string_view to_string(ToolCategory c);
std::optional<ToolCategory> parse_tool_category(std::string_view s);

enum class LatencyShape { Uniform, Triangular };

struct LatencyPrior {
  double min_ms = 1;
  double max_ms = 1;
  LatencyShape shape = LatencyShape::Uniform;

  // Both shapes are symmetric about the midpoint.
  double mean() const { return (min_ms + max_ms) / 2; }
  friend bool operator==(const LatencyPrior&, const LatencyPrior&) = default;
};

/// Closed predicate vocabulary evaluated against a QueryState:
///   nonempty_query, has_attachment(<modality>|any), no_attachments, produces(<tag>)
struct Predicate {
  enum class Kind { NonemptyQuery, HasAttachment, HasAnyAttachment, NoAttachments, Produces };
  Kind kind = Kind::NonemptyQuery;
  Modality modality = Modality::Unknown;
  std::string tag;

  static Predicate parse(std::string_view descriptor);  // throws InvalidSpec
  std::string descriptor() const;
  // `produces` holds trivially before invocation; it is a postcondition.
  bool holds(const QueryState& state) const;
  friend bool operator==(const Predicate&, const Predicate&) = default;
};

struct CostProfile {
  Money per_invocation;
  Money per_mtok;
  std::uint64_t typical_tokens = 0;

  Money expected() const;
  friend bool operator==(const CostProfile&, const CostProfile&) = default;
};

struct ToolSpec {
  std::string name;
  ToolCategory category = ToolCategory::SemanticAnalyzer;
  std::set<Modality> input_modalities;
  std::set<std::string> output_tags;
  std::vector<Predicate> preconditions;
  std::vector<Predicate> postconditions;
  LatencyPrior latency;
  CostProfile cost;
  CostKnob tier = CostKnob::TradCouplet;
  // Remote endpoint for the HTTP backend; empty means simulated.
  std::string endpoint;
  // Concurrent invocations the backend tolerates (used by the throughput
  // simulation); 0 means unbounded.
  unsigned max_concurrency = 0;

  friend bool operator==(const ToolSpec&, const ToolSpec&) = default;
};

/// Stable identifier assigned at registration.
struct ToolId {
  std::uint32_t value = 0;
  friend auto operator<=>(ToolId, ToolId) = default;
};

/// What a node needs from a tool. Empty sets are vacuous.
struct Requirement {
  std::set<Modality> inputs;
  std::set<std::string> outputs;
  std::optional<CostKnob> tier;

  std::string describe() const;
};

nlohmann::json to_json(const ToolSpec& spec);
ToolSpec tool_spec_from_json(const nlohmann::json& j);  // throws InvalidSpec

/// Typed tool catalogue. Reads may run concurrently; registration is serialized.
class ToolRegistry {
 public:
  ToolRegistry() = default;
  ToolRegistry(const ToolRegistry& other);
  ToolRegistry& operator=(const ToolRegistry& other);

  ToolId register_tool(ToolSpec spec);

  // Throws UnknownTool.
  const ToolSpec& spec(ToolId id) const;
  std::optional<ToolId> find(std::string_view name) const;
  ToolId id_of(std::string_view name) const;  // throws UnknownTool
  std::vector<ToolId> ids() const;
  std::size_t size() const;

  /// Tools covering `req` whose preconditions hold for `state` (when given),
  /// ranked by (expected latency, expected cost, name). Throws NoCapableTool.
  std::vector<ToolId> match_tools(const Requirement& req, const QueryState* state = nullptr,
                                  std::span<const ToolId> exclude = {}) const;

  /// Deterministic draw from the tool's latency prior.
  double sample_latency(ToolId id, std::uint64_t seed) const;

  nlohmann::json to_json() const;
  static ToolRegistry from_json(const nlohmann::json& catalog);
  static ToolRegistry load(const std::string& path);

 private:
  mutable std::shared_mutex mu_;
  std::deque<ToolSpec> specs_;
  std::unordered_map<std::string, ToolId> by_name_;
};

bool covers(const ToolSpec& spec, const Requirement& req);

// Sample from a prior using a uniform variate u in [0, 1).
double latency_from_uniform(const LatencyPrior& prior, double u);

/// The seven tool categories with their catalogue latency bounds, and a
/// replica for every capability so local repair always has an alternative.
ToolRegistry default_registry();

}  // namespace supervisor
