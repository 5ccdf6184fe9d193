#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "supervisor/errors.hpp"
#include "supervisor/money.hpp"
#include "supervisor/registry.hpp"
#include "supervisor/state.hpp"

namespace supervisor {

enum class NodeStatus { Pending, Running, Done, Failed, Repaired };
std::string_view to_string(NodeStatus s);

struct GraphNode {
  std::string id;
  // What the node does: route, invoke, perceive, contextualize, detect,
  // transcribe, align, model, aggregate, decompose, synthesize, generate.
  std::string role;
  ToolId tool;
  Requirement requirement;
  // Wider requirement used to pick a substitute on repair; empty means
  // `requirement` again.
  std::optional<Requirement> fallback;
  nlohmann::json binding = nlohmann::json::object();
  NodeStatus status = NodeStatus::Pending;
  std::vector<ToolId> failed_tools;
  int repairs = 0;
};

struct RepairEvent {
  std::string failed_node;
  std::string cause;
  ToolId replacement;
  std::size_t preserved_nodes = 0;
};

class ExecutionGraph {
 public:
  // Throws InvalidGraph on a duplicate id.
  std::size_t add_node(GraphNode node);
  // Throws InvalidGraph on unknown ids or self-loops.
  void add_edge(const std::string& from, const std::string& to);

  const std::vector<GraphNode>& nodes() const { return nodes_; }
  GraphNode& node(std::size_t i) { return nodes_.at(i); }
  const GraphNode& node(std::size_t i) const { return nodes_.at(i); }
  std::size_t size() const { return nodes_.size(); }
  std::size_t index_of(const std::string& id) const;  // throws InvalidGraph
  const std::vector<std::pair<std::size_t, std::size_t>>& edges() const { return edges_; }
  const std::vector<std::size_t>& predecessors(std::size_t i) const { return preds_.at(i); }
  const std::vector<std::size_t>& successors(std::size_t i) const { return succs_.at(i); }

  // Kahn order, lowest index first among ready nodes. Throws InvalidGraph on a cycle.
  std::vector<std::size_t> topological_order() const;
  void validate() const;
  std::size_t count(NodeStatus s) const;

  std::vector<RepairEvent> repair_log;

  nlohmann::json to_json(const ToolRegistry& registry) const;

 private:
  std::vector<GraphNode> nodes_;
  std::vector<std::pair<std::size_t, std::size_t>> edges_;
  std::vector<std::vector<std::size_t>> preds_;
  std::vector<std::vector<std::size_t>> succs_;
};

struct NodeOutput {
  nlohmann::json payload = nlohmann::json::object();
  double confidence = 1.0;
  double latency_ms = 0;
  Money cost;
  // A failed attempt that still consumed time (e.g. a timeout).
  bool failed = false;
  bool retriable = false;
  std::string cause;
};

struct NodeResult {
  std::string node_id;
  std::string role;
  std::string tool;
  nlohmann::json output;
  double confidence = 0;
  double start_ms = 0;  // start of the first attempt
  double end_ms = 0;
  Money cost;  // all attempts
  int attempts = 0;
};

/// One tool invocation, successful or not; used to replay load.
struct AttemptRecord {
  std::string node_id;
  std::string tool;
  double start_ms = 0;
  double end_ms = 0;
  bool ok = true;
};

struct NodeInputs {
  std::vector<const NodeResult*> upstream;
};

/// Invokes a node's current tool. May throw NodeFailure instead of returning
/// a failed output; the attempt then takes the tool's minimum latency.
using NodeInvoker =
    std::function<NodeOutput(const GraphNode& node, const ToolSpec& tool, const NodeInputs& inputs, int attempt)>;

struct ExecutionResult;

enum class ClockMode { Virtual, Wall };
std::string_view to_string(ClockMode m);
std::optional<ClockMode> parse_clock_mode(std::string_view s);

inline constexpr int kDefaultMaxRepairs = 2;
inline constexpr double kDefaultRepairConfidence = 0.3;
inline constexpr double kDefaultClarifyThreshold = 0.5;
inline constexpr int kDefaultClarifyRounds = 3;

struct ExecuteOptions {
  ClockMode clock = ClockMode::Virtual;
  std::size_t parallelism = 0;  // 0 = unbounded
  bool repair = true;
  int max_repairs = kDefaultMaxRepairs;
  double repair_confidence = kDefaultRepairConfidence;
  double start_ms = 0;  // virtual time offset for trace timestamps
  const QueryState* state = nullptr;  // precondition checks during repair
  // Results for nodes already marked done, e.g. when re-running one branch
  // after a clarification. total_cost counts only attempts made in this run.
  const ExecutionResult* resume_from = nullptr;
};

struct ExecutionResult {
  std::vector<NodeResult> results;  // completion order
  double total_latency_ms = 0;
  std::vector<TraceEvent> trace;
  std::vector<AttemptRecord> attempts;
  std::vector<std::string> critical_path;  // source to sink
  Money total_cost;

  const NodeResult* find(const std::string& node_id) const;
};

/// Local repair could not recover a node. Carries everything finished so far.
class PipelineFailed : public Error {
 public:
  PipelineFailed(std::string what, std::string failed_node, ExecutionResult partial = {})
      : Error(std::move(what)), failed_node_(std::move(failed_node)), partial_(std::move(partial)) {}
  const std::string& failed_node() const { return failed_node_; }
  const ExecutionResult& partial() const { return partial_; }
  ExecutionResult& partial() { return partial_; }

 private:
  std::string failed_node_;
  ExecutionResult partial_;
};

/// Runs every node once its predecessors are done. Under the virtual clock the
/// reported latency is the makespan of the simulated schedule, which with
/// unbounded parallelism is the longest path over per-node latencies (summed
/// across attempts). Throws PipelineFailed.
ExecutionResult execute(ExecutionGraph& graph, const ToolRegistry& registry, const NodeInvoker& invoker,
                        const ExecuteOptions& opts = {});

/// Swaps the node's tool for the next capable one, excluding tools that
/// already failed on it. Done nodes are untouched. Throws PipelineFailed when
/// the repair budget is spent or nothing else qualifies.
void repair(ExecutionGraph& graph, std::size_t node, const ToolRegistry& registry, const std::string& cause,
            int max_repairs = kDefaultMaxRepairs, const QueryState* state = nullptr);

struct ClarificationRequest {
  std::string node_id;
  std::string question;
  double confidence = 0;
};

/// A question when the weakest critical-path result is below `threshold` and
/// a repair was already tried.
std::optional<ClarificationRequest> check_clarification(const ExecutionGraph& graph, const ExecutionResult& result,
                                                        const ToolRegistry& registry,
                                                        double threshold = kDefaultClarifyThreshold);

/// Bounded clarification rounds: rounds 1..L-1 that stay below threshold ask
/// the user; round L gives up with a best-effort answer.
class ClarificationLoop {
 public:
  enum class Step { Satisfied, Ask, BestEffort };
  explicit ClarificationLoop(int bound = kDefaultClarifyRounds);
  Step next(bool low_confidence);
  int rounds() const { return rounds_; }
  int questions() const { return questions_; }

 private:
  int bound_;
  int rounds_ = 0;
  int questions_ = 0;
};

struct AnswerSegment {
  std::string name;
  std::string text;
  std::vector<std::string> cited_nodes;
};

struct FinalAnswer {
  std::vector<AnswerSegment> segments;
  bool best_effort = false;
  std::string render() const;
};

nlohmann::json to_json(const FinalAnswer& a);

enum class Verdict { Pass, Fail, Unverified };
std::string_view to_string(Verdict v);

struct Verification {
  Verdict verdict = Verdict::Unverified;
  std::vector<std::string> problems;
};

/// Segments each flag's answer must contain.
std::vector<std::string> required_segments(ExecutionFlag flag);

class Verifier {
 public:
  virtual ~Verifier() = default;
  virtual Verification verify(const FinalAnswer& answer, const std::vector<TraceEvent>& trace,
                              ExecutionFlag flag) const = 0;
};

class StructuralVerifier : public Verifier {
 public:
  Verification verify(const FinalAnswer& answer, const std::vector<TraceEvent>& trace,
                      ExecutionFlag flag) const override;
};

/// A throwing verifier yields Unverified rather than an error.
Verification verify_output(const FinalAnswer& answer, const std::vector<TraceEvent>& trace, ExecutionFlag flag,
                           const Verifier* verifier = nullptr);

/// Longest path over `latency` (one entry per node) on the graph's edges.
double longest_path(const ExecutionGraph& graph, const std::vector<double>& latency);

}  // namespace supervisor
