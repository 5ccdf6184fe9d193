#include "supervisor/scheduler.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <limits>
#include <mutex>
#include <queue>
#include <set>
#include <thread>

#include "supervisor/util.hpp"

namespace supervisor {

using nlohmann::json;

std::string_view to_string(NodeStatus s) {
  switch (s) {
    case NodeStatus::Pending: return "pending";
    case NodeStatus::Running: return "running";
    case NodeStatus::Done: return "done";
    case NodeStatus::Failed: return "failed";
    case NodeStatus::Repaired: return "repaired";
  }
  return "pending";
}

std::string_view to_string(ClockMode m) { return m == ClockMode::Virtual ? "virtual" : "wall"; }

std::optional<ClockMode> parse_clock_mode(std::string_view s) {
  if (s == "virtual") return ClockMode::Virtual;
  if (s == "wall") return ClockMode::Wall;
  return std::nullopt;
}

std::size_t ExecutionGraph::add_node(GraphNode node) {
  for (const auto& n : nodes_)
    if (n.id == node.id) throw InvalidGraph("duplicate node id " + node.id);
  nodes_.push_back(std::move(node));
  preds_.emplace_back();
  succs_.emplace_back();
  return nodes_.size() - 1;
}

std::size_t ExecutionGraph::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].id == id) return i;
  throw InvalidGraph("unknown node " + id);
}

void ExecutionGraph::add_edge(const std::string& from, const std::string& to) {
  auto a = index_of(from), b = index_of(to);
  if (a == b) throw InvalidGraph("self-loop on " + from);
  for (auto [x, y] : edges_)
    if (x == a && y == b) return;
  edges_.emplace_back(a, b);
  succs_[a].push_back(b);
  preds_[b].push_back(a);
}

std::vector<std::size_t> ExecutionGraph::topological_order() const {
  std::vector<std::size_t> indeg(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) indeg[i] = preds_[i].size();
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (indeg[i] == 0) ready.push(i);
  std::vector<std::size_t> order;
  while (!ready.empty()) {
    auto i = ready.top();
    ready.pop();
    order.push_back(i);
    for (auto s : succs_[i])
      if (--indeg[s] == 0) ready.push(s);
  }
  if (order.size() != nodes_.size()) throw InvalidGraph("execution graph has a dependency cycle");
  return order;
}

void ExecutionGraph::validate() const { (void)topological_order(); }

std::size_t ExecutionGraph::count(NodeStatus s) const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [s](const GraphNode& n) { return n.status == s; }));
}

json ExecutionGraph::to_json(const ToolRegistry& registry) const {
  json ns = json::array(), es = json::array(), rl = json::array();
  for (const auto& n : nodes_)
    ns.push_back({{"id", n.id},
                  {"role", n.role},
                  {"tool", registry.spec(n.tool).name},
                  {"status", to_string(n.status)},
                  {"binding", n.binding},
                  {"repairs", n.repairs}});
  for (auto [a, b] : edges_) es.push_back({nodes_[a].id, nodes_[b].id});
  for (const auto& r : repair_log)
    rl.push_back({{"failed_node", r.failed_node},
                  {"cause", r.cause},
                  {"replacement_tool", registry.spec(r.replacement).name},
                  {"preserved_nodes", r.preserved_nodes}});
  return {{"nodes", ns}, {"edges", es}, {"repair_log", rl}};
}

const NodeResult* ExecutionResult::find(const std::string& node_id) const {
  for (const auto& r : results)
    if (r.node_id == node_id) return &r;
  return nullptr;
}

void repair(ExecutionGraph& graph, std::size_t i, const ToolRegistry& registry, const std::string& cause,
            int max_repairs, const QueryState* state) {
  auto& node = graph.node(i);
  if (node.status == NodeStatus::Done) throw InvalidGraph("node " + node.id + " is done and cannot be repaired");
  if (std::find(node.failed_tools.begin(), node.failed_tools.end(), node.tool) == node.failed_tools.end())
    node.failed_tools.push_back(node.tool);
  if (node.repairs >= max_repairs) {
    node.status = NodeStatus::Failed;
    throw PipelineFailed("node " + node.id + " failed after " + std::to_string(node.repairs) +
                             " repair(s): " + cause,
                         node.id);
  }
  const Requirement& req = node.fallback ? *node.fallback : node.requirement;
  std::vector<ToolId> candidates;
  try {
    candidates = registry.match_tools(req, state, node.failed_tools);
  } catch (const NoCapableTool&) {
    node.status = NodeStatus::Failed;
    throw PipelineFailed("node " + node.id + " failed and no alternative tool covers " + req.describe() + ": " +
                             cause,
                         node.id);
  }
  node.tool = candidates.front();
  node.repairs += 1;
  node.status = NodeStatus::Repaired;
  graph.repair_log.push_back({node.id, cause, node.tool, graph.count(NodeStatus::Done)});
}

namespace {

struct Attempt {
  std::size_t node;
  double start;
  double end;
  NodeOutput out;
  std::string tool;
};

class Coordinator {
 public:
  Coordinator(ExecutionGraph& g, const ToolRegistry& reg, const NodeInvoker& inv, const ExecuteOptions& o)
      : g_(g), reg_(reg), inv_(inv), opts_(o), first_start_(g.size(), -1), result_index_(g.size(), SIZE_MAX),
        cost_(g.size()), attempts_(g.size(), 0) {
    // Workers hold pointers into results; never reallocate.
    res_.results.reserve(g.size());
    seed_done();
  }

  ExecutionResult run();

 private:
  NodeInputs inputs_for(std::size_t i) const {
    NodeInputs in;
    for (auto p : g_.predecessors(i)) in.upstream.push_back(&res_.results[result_index_[p]]);
    return in;
  }

  NodeOutput invoke(std::size_t i, int attempt) {
    const auto& node = g_.node(i);
    const auto& spec = reg_.spec(node.tool);
    try {
      return inv_(node, spec, inputs_for(i), attempt);
    } catch (const NodeFailure& e) {
      NodeOutput o;
      o.failed = true;
      o.retriable = e.retriable();
      o.cause = e.what();
      o.latency_ms = spec.latency.min_ms;
      return o;
    }
  }

  std::string digest(std::size_t i) const { return hex64(fnv1a64(g_.node(i).binding.dump())); }

  void on_start(std::size_t i, double t) {
    auto& n = g_.node(i);
    n.status = NodeStatus::Running;
    if (first_start_[i] < 0) first_start_[i] = t;
    TraceEvent e;
    e.kind = TraceKind::Start;
    e.node_id = n.id;
    e.tool = reg_.spec(n.tool).name;
    e.args_digest = digest(i);
    e.start_ms = opts_.start_ms + t;
    e.end_ms = opts_.start_ms + t;
    e.outcome = n.role;
    res_.trace.push_back(std::move(e));
  }

  // Returns true when the node is finished (done); false when it must rerun.
  bool on_finish(const Attempt& a) {
    auto i = a.node;
    auto& n = g_.node(i);
    attempts_[i] += 1;
    cost_[i] += a.out.cost;
    res_.total_cost += a.out.cost;
    res_.attempts.push_back({n.id, a.tool, opts_.start_ms + a.start, opts_.start_ms + a.end, !a.out.failed});

    TraceEvent e;
    e.node_id = n.id;
    e.tool = a.tool;
    e.args_digest = digest(i);
    e.start_ms = opts_.start_ms + a.start;
    e.end_ms = opts_.start_ms + a.end;
    e.cost = a.out.cost;

    bool low = !a.out.failed && a.out.confidence < opts_.repair_confidence;
    if (a.out.failed || low) {
      std::string cause = a.out.failed ? a.out.cause : "low confidence " + fmt_conf(a.out.confidence);
      e.kind = TraceKind::Failed;
      e.outcome = cause;
      if (!a.out.failed) e.confidence = a.out.confidence;
      res_.trace.push_back(e);
      if (opts_.repair) {
        try {
          repair(g_, i, reg_, cause, opts_.max_repairs, opts_.state);
          TraceEvent r;
          r.kind = TraceKind::Repaired;
          r.node_id = n.id;
          r.tool = reg_.spec(n.tool).name;
          r.args_digest = digest(i);
          r.start_ms = r.end_ms = opts_.start_ms + a.end;
          r.outcome = "replaced " + a.tool + " (preserved " +
                      std::to_string(g_.repair_log.back().preserved_nodes) + " done node(s))";
          res_.trace.push_back(std::move(r));
          n.status = NodeStatus::Pending;
          return false;
        } catch (const PipelineFailed&) {
          if (a.out.failed) throw;
        }
      } else if (a.out.failed) {
        n.status = NodeStatus::Failed;
        throw PipelineFailed("node " + n.id + " failed: " + cause, n.id);
      }
      // A weak result with nothing left to try is kept.
      res_.trace.back().kind = TraceKind::Warning;
      res_.trace.back().outcome = cause + ", kept";
    }
    n.status = NodeStatus::Done;
    NodeResult r;
    r.node_id = n.id;
    r.role = n.role;
    r.tool = a.tool;
    r.output = a.out.payload;
    r.confidence = a.out.confidence;
    r.start_ms = opts_.start_ms + first_start_[i];
    r.end_ms = opts_.start_ms + a.end;
    r.cost = cost_[i];
    r.attempts = attempts_[i];
    result_index_[i] = res_.results.size();
    res_.results.push_back(std::move(r));
    e.kind = TraceKind::Done;
    e.outcome = "ok";
    e.confidence = a.out.confidence;
    res_.trace.push_back(std::move(e));
    return true;
  }

  static std::string fmt_conf(double c) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", c);
    return buf;
  }

  std::vector<std::size_t> ready_nodes() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < g_.size(); ++i) {
      const auto& n = g_.node(i);
      if (n.status != NodeStatus::Pending && n.status != NodeStatus::Repaired) continue;
      bool ok = true;
      for (auto p : g_.predecessors(i))
        if (g_.node(p).status != NodeStatus::Done) ok = false;
      if (ok) out.push_back(i);
    }
    return out;
  }

  void finish_critical_path() {
    if (res_.results.empty()) return;
    // Walk back from the latest finisher through predecessors that ended
    // exactly when the current node first started.
    std::size_t cur = SIZE_MAX;
    double best = -1;
    for (std::size_t i = 0; i < g_.size(); ++i)
      if (result_index_[i] != SIZE_MAX && res_.results[result_index_[i]].end_ms > best) {
        best = res_.results[result_index_[i]].end_ms;
        cur = i;
      }
    std::vector<std::string> path;
    while (cur != SIZE_MAX) {
      path.push_back(g_.node(cur).id);
      double start = res_.results[result_index_[cur]].start_ms;
      std::size_t next = SIZE_MAX;
      double latest = -1;
      for (auto p : g_.predecessors(cur)) {
        if (result_index_[p] == SIZE_MAX) continue;
        double end = res_.results[result_index_[p]].end_ms;
        if (end <= start + 1e-9 && end > latest) {
          latest = end;
          next = p;
        }
      }
      cur = next;
    }
    std::reverse(path.begin(), path.end());
    res_.critical_path = std::move(path);
  }

  // Done nodes carried over from an earlier run keep their results.
  void seed_done() {
    for (std::size_t i = 0; i < g_.size(); ++i) {
      if (g_.node(i).status != NodeStatus::Done) continue;
      const NodeResult* prev = opts_.resume_from ? opts_.resume_from->find(g_.node(i).id) : nullptr;
      if (!prev) throw InvalidGraph("done node " + g_.node(i).id + " has no earlier result");
      result_index_[i] = res_.results.size();
      res_.results.push_back(*prev);
      ++seeded_;
    }
  }

  ExecutionResult run_virtual();
  ExecutionResult run_wall();

  std::size_t seeded_ = 0;

  ExecutionGraph& g_;
  const ToolRegistry& reg_;
  const NodeInvoker& inv_;
  const ExecuteOptions& opts_;
  ExecutionResult res_;
  std::vector<double> first_start_;
  std::vector<std::size_t> result_index_;
  std::vector<Money> cost_;
  std::vector<int> attempts_;
};

ExecutionResult Coordinator::run() {
  g_.validate();
  try {
    if (opts_.clock == ClockMode::Virtual) return run_virtual();
    return run_wall();
  } catch (PipelineFailed& pf) {
    // Time spent up to the failing attempt.
    for (const auto& a : res_.attempts) res_.total_latency_ms = std::max(res_.total_latency_ms, a.end_ms - opts_.start_ms);
    finish_critical_path();
    throw PipelineFailed(pf.what(), pf.failed_node(), std::move(res_));
  }
}

ExecutionResult Coordinator::run_virtual() {
  const std::size_t limit = opts_.parallelism == 0 ? SIZE_MAX : opts_.parallelism;
  // (end time, start order) keeps completion order deterministic.
  auto later = [](const Attempt& a, const Attempt& b) {
    if (a.end != b.end) return a.end > b.end;
    return a.node > b.node;
  };
  std::priority_queue<Attempt, std::vector<Attempt>, decltype(later)> running(later);
  double now = 0;
  std::size_t done = seeded_;
  while (done < g_.size()) {
    for (auto i : ready_nodes()) {
      if (running.size() >= limit) break;
      on_start(i, now);
      auto out = invoke(i, attempts_[i]);
      double lat = std::max(0.0, out.latency_ms);
      running.push({i, now, now + lat, std::move(out), reg_.spec(g_.node(i).tool).name});
    }
    if (running.empty()) throw InvalidGraph("execution stalled with unfinished nodes");
    Attempt a = running.top();
    running.pop();
    now = a.end;
    if (on_finish(a)) ++done;
  }
  res_.total_latency_ms = now;
  finish_critical_path();
  return std::move(res_);
}

ExecutionResult Coordinator::run_wall() {
  using Clock = std::chrono::steady_clock;
  const std::size_t limit = opts_.parallelism == 0 ? SIZE_MAX : opts_.parallelism;
  const auto t0 = Clock::now();
  auto elapsed = [&] { return std::chrono::duration<double, std::milli>(Clock::now() - t0).count(); };

  std::mutex mu;
  std::condition_variable cv;
  std::vector<Attempt> finished;
  std::vector<std::thread> threads;
  std::size_t in_flight = 0, done = seeded_;

  auto join_all = [&] {
    for (auto& t : threads)
      if (t.joinable()) t.join();
  };
  try {
    while (done < g_.size()) {
      for (auto i : ready_nodes()) {
        if (in_flight >= limit) break;
        double start = elapsed();
        on_start(i, start);
        ++in_flight;
        // Inputs are gathered on the coordinator thread; results_ is not
        // touched again until this attempt is collected.
        auto inputs = inputs_for(i);
        const auto& node = g_.node(i);
        const auto& spec = reg_.spec(node.tool);
        int attempt = attempts_[i];
        threads.emplace_back([&, i, start, inputs, attempt, node] {
          NodeOutput out;
          try {
            out = inv_(node, spec, inputs, attempt);
          } catch (const NodeFailure& e) {
            out.failed = true;
            out.retriable = e.retriable();
            out.cause = e.what();
          } catch (const std::exception& e) {
            out.failed = true;
            out.cause = e.what();
          }
          double end = elapsed();
          std::lock_guard lk(mu);
          finished.push_back({i, start, end, std::move(out), spec.name});
          cv.notify_one();
        });
      }
      std::unique_lock lk(mu);
      cv.wait(lk, [&] { return !finished.empty(); });
      auto batch = std::move(finished);
      finished.clear();
      lk.unlock();
      std::sort(batch.begin(), batch.end(), [](const Attempt& a, const Attempt& b) { return a.end < b.end; });
      for (auto& a : batch) {
        --in_flight;
        if (on_finish(a)) ++done;
      }
    }
  } catch (...) {
    join_all();
    throw;
  }
  join_all();
  res_.total_latency_ms = elapsed();
  finish_critical_path();
  return std::move(res_);
}

}  // namespace

ExecutionResult execute(ExecutionGraph& graph, const ToolRegistry& registry, const NodeInvoker& invoker,
                        const ExecuteOptions& opts) {
  Coordinator c(graph, registry, invoker, opts);
  return c.run();
}

std::optional<ClarificationRequest> check_clarification(const ExecutionGraph& graph, const ExecutionResult& result,
                                                        const ToolRegistry& registry, double threshold) {
  if (!(threshold > 0 && threshold < 1)) throw std::invalid_argument("clarification threshold must lie in (0, 1)");
  if (graph.repair_log.empty()) return std::nullopt;
  const NodeResult* weakest = nullptr;
  for (const auto& id : result.critical_path) {
    const auto* r = result.find(id);
    if (r && (!weakest || r->confidence < weakest->confidence)) weakest = r;
  }
  if (!weakest || weakest->confidence >= threshold) return std::nullopt;

  ClarificationRequest q;
  q.node_id = weakest->node_id;
  q.confidence = weakest->confidence;
  bool handwritten = false;
  if (weakest->output.contains("notes"))
    for (const auto& n : weakest->output["notes"])
      if (n.is_string() && n.get<std::string>() == "handwritten") handwritten = true;
  if (handwritten) {
    q.question = "I notice this is handwritten. What specific information are you looking for?";
  } else {
    const auto& node = graph.node(graph.index_of(weakest->node_id));
    char conf[16];
    std::snprintf(conf, sizeof conf, "%.2f", weakest->confidence);
    q.question = "The " + node.role + " step (" + registry.spec(node.tool).name + ") is only " + conf +
                 " confident about " + node.requirement.describe() +
                 ". What specific information are you looking for?";
  }
  return q;
}

ClarificationLoop::ClarificationLoop(int bound) : bound_(bound) {
  if (bound_ < 1) throw std::invalid_argument("clarification bound must be at least 1");
}

ClarificationLoop::Step ClarificationLoop::next(bool low_confidence) {
  if (rounds_ >= bound_) return Step::BestEffort;
  ++rounds_;
  if (!low_confidence) return Step::Satisfied;
  if (rounds_ >= bound_) return Step::BestEffort;
  ++questions_;
  return Step::Ask;
}

std::string FinalAnswer::render() const {
  std::string s;
  for (const auto& seg : segments) {
    if (!s.empty()) s += "\n\n";
    s += seg.text;
  }
  if (best_effort) s += "\n\n(Best-effort answer: some inputs could not be read with confidence.)";
  return s;
}

json to_json(const FinalAnswer& a) {
  json segs = json::array();
  for (const auto& s : a.segments) segs.push_back({{"name", s.name}, {"text", s.text}, {"cited_nodes", s.cited_nodes}});
  return {{"segments", segs}, {"best_effort", a.best_effort}};
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Pass: return "pass";
    case Verdict::Fail: return "fail";
    case Verdict::Unverified: return "unverified";
  }
  return "unverified";
}

std::vector<std::string> required_segments(ExecutionFlag flag) {
  switch (flag) {
    case ExecutionFlag::Video: return {"objects", "timestamps"};
    case ExecutionFlag::Audio: return {"transcript"};
    case ExecutionFlag::Vision: return {"visual"};
    case ExecutionFlag::Document: return {"document"};
    case ExecutionFlag::Imagen: return {"image"};
    case ExecutionFlag::RouteLlm: return {"answer"};
    case ExecutionFlag::Moe: return {"answer"};
    case ExecutionFlag::Complex: return {"synthesis"};
  }
  return {"answer"};
}

Verification StructuralVerifier::verify(const FinalAnswer& answer, const std::vector<TraceEvent>& trace,
                                        ExecutionFlag flag) const {
  Verification v;
  for (const auto& name : required_segments(flag)) {
    auto it = std::find_if(answer.segments.begin(), answer.segments.end(),
                           [&](const AnswerSegment& s) { return s.name == name; });
    if (it == answer.segments.end() || it->text.empty()) v.problems.push_back("missing segment: " + name);
  }
  std::set<std::string> completed;
  for (const auto& e : trace)
    if (e.kind == TraceKind::Done) completed.insert(e.node_id);
  for (const auto& s : answer.segments)
    for (const auto& c : s.cited_nodes)
      if (!completed.contains(c)) v.problems.push_back("segment " + s.name + " cites node " + c + " absent from trace");
  v.verdict = v.problems.empty() ? Verdict::Pass : Verdict::Fail;
  return v;
}

Verification verify_output(const FinalAnswer& answer, const std::vector<TraceEvent>& trace, ExecutionFlag flag,
                           const Verifier* verifier) {
  static const StructuralVerifier structural;
  try {
    return (verifier ? *verifier : static_cast<const Verifier&>(structural)).verify(answer, trace, flag);
  } catch (const std::exception& e) {
    return {Verdict::Unverified, {std::string("verifier failed: ") + e.what()}};
  }
}

double longest_path(const ExecutionGraph& graph, const std::vector<double>& latency) {
  if (latency.size() != graph.size()) throw std::invalid_argument("one latency per node required");
  std::vector<double> finish(graph.size(), 0);
  double best = 0;
  for (auto i : graph.topological_order()) {
    double start = 0;
    for (auto p : graph.predecessors(i)) start = std::max(start, finish[p]);
    finish[i] = start + latency[i];
    best = std::max(best, finish[i]);
  }
  return best;
}

}  // namespace supervisor
