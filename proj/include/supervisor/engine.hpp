#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "supervisor/couplet.hpp"
#include "supervisor/decomposition.hpp"
#include "supervisor/memory.hpp"
#include "supervisor/planner.hpp"
#include "supervisor/registry.hpp"
#include "supervisor/routing.hpp"
#include "supervisor/scheduler.hpp"
#include "supervisor/state.hpp"

namespace supervisor {

struct LlmRequest {
  std::string role;
  std::string model;
  std::string prompt;
  // Material the model reads that is not spelled out in `prompt` (e.g. the
  // full text behind an extracted document).
  std::size_t extra_tokens = 0;
  std::size_t max_output_tokens = 256;
  // What the engine expects back; the template backend returns it as is.
  std::string draft;
  // Confidence the template backend reports (the model's capability).
  double prior_confidence = 0.9;
};

struct LlmReply {
  std::string text;
  std::size_t prompt_tokens = 0;
  std::size_t output_tokens = 0;
  double confidence = 0.9;
  // Negative: use the tool's latency prior.
  double latency_ms = -1;
};

/// Language-model calls made by route/invoke/contextualize/align/aggregate/
/// decompose/synthesize nodes. May throw NodeFailure.
class LanguageBackend {
 public:
  virtual ~LanguageBackend() = default;
  virtual LlmReply complete(const LlmRequest& req, const ToolSpec& tool, std::uint64_t seed) = 0;
};

/// Deterministic stand-in: returns the request's draft and bills
/// `tokens_per_word` tokens per prompt word plus a fixed overhead.
class TemplateLanguageBackend : public LanguageBackend {
 public:
  explicit TemplateLanguageBackend(double tokens_per_word = 1.3, std::size_t overhead_tokens = 150)
      : per_word_(tokens_per_word), overhead_(overhead_tokens) {}
  LlmReply complete(const LlmRequest& req, const ToolSpec& tool, std::uint64_t seed) override;

 private:
  double per_word_;
  std::size_t overhead_;
};

/// POSTs {"model", "role", "prompt", "max_tokens"} to the tool's endpoint and
/// expects {"text", "prompt_tokens", "completion_tokens", "confidence"?}.
/// Tools without an endpoint fall through to the template backend.
class HttpLanguageBackend : public LanguageBackend {
 public:
  explicit HttpLanguageBackend(int timeout_ms = 30000) : timeout_ms_(timeout_ms) {}
  LlmReply complete(const LlmRequest& req, const ToolSpec& tool, std::uint64_t seed) override;

 private:
  int timeout_ms_;
  TemplateLanguageBackend fallback_;
};

struct EngineConfig {
  ClockMode clock = ClockMode::Virtual;
  std::size_t parallelism = 0;  // 0 = unbounded
  // Off: nodes run one at a time (ablation).
  bool parallel = true;
  bool repair = true;
  bool use_memory = true;
  bool verify = true;
  int max_repairs = kDefaultMaxRepairs;
  double repair_confidence = kDefaultRepairConfidence;
  double clarify_threshold = kDefaultClarifyThreshold;
  int clarify_rounds = kDefaultClarifyRounds;
  double win_threshold = kDefaultWinThreshold;
  std::size_t moe_models = 3;
  std::size_t retrieve_k = kDefaultRetrieveK;
  // Cosine needed before a retrieved record is taken as the referent of
  // "the earlier ..." style queries.
  double referent_min_similarity = 0.2;
  // Re-runs of the answer node after a failed verification.
  int verify_retries = 1;
  std::size_t compression_trigger = kCompressionTriggerTokens;
  std::optional<Money> budget;
  std::uint64_t seed = 0;
  std::map<std::string, std::size_t> output_tokens = {
      {"route", 8},        {"invoke", 350},   {"model", 350},     {"contextualize", 200},
      {"align", 150},      {"aggregate", 120}, {"decompose", 120}, {"synthesize", 450}};
};

/// Simulation hooks; empty functions mean "never".
struct EngineHooks {
  // Backend failure for (node, tool, attempt).
  std::function<bool(const std::string& node, const std::string& tool, int attempt)> fail;
  // A language node silently drops its output.
  std::function<bool(const std::string& node, int attempt)> truncate;
};

enum class TurnStatus { Answered, NeedsClarification, Failed };
std::string_view to_string(TurnStatus s);

enum class ClarifyReason { None, Confidence, Intent, Referent };
std::string_view to_string(ClarifyReason r);

struct TurnResult {
  TurnStatus status = TurnStatus::Answered;
  ExecutionFlag flag = ExecutionFlag::Moe;
  FlagDecision decision;
  std::optional<RoutingDecision> routing;
  ExecutionGraph graph;
  ExecutionResult execution;
  FinalAnswer answer;
  Verification verification;
  std::optional<ClarificationRequest> clarification;
  ClarifyReason clarify_reason = ClarifyReason::None;
  // Questions asked in this turn, and how many were low-confidence rounds.
  int clarification_rounds = 0;
  int confidence_rounds = 0;
  // Machine time for the turn, clarification rounds included.
  double tta_ms = 0;
  Money cost;
  int internal_rework = 0;
  std::optional<MemoryRecord> referent;
  std::vector<std::string> warnings;
  std::string failure;
  // Events produced by this turn (also appended to the state).
  std::vector<TraceEvent> trace;

  // Bookkeeping across clarification pauses: what is already in the state.
  Money charged;
  std::size_t trace_committed = 0;
};

nlohmann::json to_json(const TurnResult& r, const ToolRegistry& registry);

/// Phrases that point back at something from earlier in the conversation.
bool is_anaphoric(const std::string& query);

class Engine {
 public:
  Engine(ToolRegistry registry, ModelCatalog catalog, std::shared_ptr<Backend> backend, EngineConfig cfg = {});

  EngineConfig& config() { return cfg_; }
  const EngineConfig& config() const { return cfg_; }
  const ToolRegistry& registry() const { return registry_; }
  const ModelCatalog& catalog() const { return catalog_; }
  Backend& backend() { return *backend_; }

  void set_flag_classifier(std::shared_ptr<const FlagClassifier> c) { classifier_ = std::move(c); }
  void set_prober(std::shared_ptr<ContentProber> p) { prober_ = std::move(p); }
  void set_embedder(std::shared_ptr<const Embedder> e) { embedder_ = std::move(e); }
  void set_language(std::shared_ptr<LanguageBackend> l) { language_ = std::move(l); }
  void set_win_scorer(std::shared_ptr<const WinScorer> s) { scorer_ = std::move(s); }
  void set_hooks(EngineHooks h) { hooks_ = std::move(h); }
  const Embedder& embedder() const { return *embedder_; }

  /// One turn: detection, flag, memory, routing, planning, execution,
  /// clarification check, verification, cost, memory update. On success the
  /// state gets the turn's trace, cost and turn count; on BudgetExceeded it is
  /// left untouched. Throws UnreachableAttachment, UnplannableQuery,
  /// BudgetExceeded.
  TurnResult run(QueryState& state, MemoryStore* memory = nullptr);

  /// Continues a turn that asked a question. Low-confidence pauses re-run the
  /// weak node and its dependants with the answer as focus; other pauses
  /// re-plan with the answer appended to the query.
  TurnResult resume(QueryState& state, MemoryStore* memory, TurnResult pending, const std::string& response);

  /// Runs a caller-built graph with this engine's node handlers and nothing
  /// else: no flag, planning, clarification, verification or billing. The
  /// baseline policies use it. Throws PipelineFailed.
  ExecutionResult run_graph(const QueryState& state, ExecutionGraph& graph, const std::string& context,
                            ExecuteOptions opts, int attempt_offset = 0);

 private:
  struct Turn;
  TurnResult plan_and_run(QueryState& state, MemoryStore* memory, TurnResult r);
  TurnResult after_execute(Turn& t, TurnResult r, QueryState& state, MemoryStore* memory);
  TurnResult ask(Turn& t, TurnResult r, QueryState& state, MemoryStore* memory, ClarifyReason why,
                 ClarificationRequest q);
  void execute_graph(Turn& t, TurnResult& r, const ExecutionResult* resume_from);
  void finish(Turn& t, TurnResult& r, QueryState& state, MemoryStore* memory);
  // Charges the unbilled cost and copies the turn's state out. Throws
  // BudgetExceeded before touching `state`.
  void commit(Turn& t, TurnResult& r, QueryState& state);
  FinalAnswer assemble(const Turn& t, const TurnResult& r) const;
  NodeOutput invoke_node(const Turn& t, const GraphNode& node, const ToolSpec& spec, const NodeInputs& in,
                         int attempt);
  LlmReply ask_language(const Turn& t, const GraphNode& node, const ToolSpec& spec, LlmRequest req, int attempt,
                        NodeOutput& out);
  std::uint64_t node_seed(const Turn& t, const std::string& node, const std::string& tool, int attempt) const;
  ExecuteOptions exec_options(const QueryState& st, double start_ms) const;
  RouterConfig router() const;

  ToolRegistry registry_;
  ModelCatalog catalog_;
  std::shared_ptr<Backend> backend_;
  EngineConfig cfg_;
  std::shared_ptr<const FlagClassifier> classifier_;
  std::shared_ptr<ContentProber> prober_;
  std::shared_ptr<const Embedder> embedder_;
  std::shared_ptr<LanguageBackend> language_;
  std::shared_ptr<const WinScorer> scorer_;
  std::shared_ptr<const SubflagClassifier> subflags_;
  EngineHooks hooks_;
  TemplateContextualizer contextualizer_;
  StructuralVerifier verifier_;
  ExtractiveCompressor compressor_;
};

}  // namespace supervisor
