#include <doctest.h>

#include <atomic>
#include <map>

#include "supervisor/errors.hpp"
#include "supervisor/planner.hpp"
#include "supervisor/scheduler.hpp"

using namespace supervisor;

namespace {

ToolRegistry small_registry() {
  ToolRegistry r;
  for (const char* name : {"ocr-a", "ocr-b", "vision-c"}) {
    ToolSpec s;
    s.name = name;
    s.category = name[0] == 'v' ? ToolCategory::Image : ToolCategory::Document;
    s.input_modalities = {Modality::Document};
    s.output_tags = {"text_blocks"};
    s.latency = {100, 100, LatencyShape::Uniform};
    // vision-c is slower, so it ranks last
    if (name[0] == 'v') s.latency = {200, 200, LatencyShape::Uniform};
    r.register_tool(s);
  }
  ToolSpec join;
  join.name = "joiner";
  join.category = ToolCategory::Orchestration;
  join.output_tags = {"synthesize"};
  join.latency = {10, 10, LatencyShape::Uniform};
  r.register_tool(join);
  return r;
}

GraphNode node(const std::string& id, const ToolRegistry& r, const std::string& tool, std::set<std::string> out) {
  GraphNode n;
  n.id = id;
  n.role = "perceive";
  n.tool = r.id_of(tool);
  n.requirement.outputs = std::move(out);
  return n;
}

// Latency per node id; everything succeeds.
NodeInvoker fixed_latency(std::map<std::string, double> ms) {
  return [ms](const GraphNode& n, const ToolSpec&, const NodeInputs&, int) {
    NodeOutput o;
    o.latency_ms = ms.at(n.id);
    o.payload = {{"node", n.id}};
    return o;
  };
}

ExecutionGraph graph_of(const ToolRegistry& r, std::vector<std::string> ids,
                        std::vector<std::pair<std::string, std::string>> edges) {
  ExecutionGraph g;
  for (auto& id : ids) g.add_node(node(id, r, "ocr-a", {"text_blocks"}));
  for (auto& [a, b] : edges) g.add_edge(a, b);
  return g;
}

}  // namespace

TEST_SUITE("scheduler") {

TEST_CASE("independent nodes take the max") {
  auto r = small_registry();
  auto g = graph_of(r, {"a", "b", "c"}, {});
  auto res = execute(g, r, fixed_latency({{"a", 300}, {"b", 500}, {"c", 200}}));
  CHECK(res.total_latency_ms == 500);
  CHECK(res.critical_path == std::vector<std::string>{"b"});
}

TEST_CASE("a chain takes the sum") {
  auto r = small_registry();
  auto g = graph_of(r, {"a", "b"}, {{"a", "b"}});
  CHECK(execute(g, r, fixed_latency({{"a", 300}, {"b", 500}})).total_latency_ms == 800);
}

TEST_CASE("diamond takes the longest path") {
  auto r = small_registry();
  auto g = graph_of(r, {"s", "A", "B", "j"}, {{"s", "A"}, {"s", "B"}, {"A", "j"}, {"B", "j"}});
  auto res = execute(g, r, fixed_latency({{"s", 100}, {"A", 400}, {"B", 250}, {"j", 50}}));
  CHECK(res.total_latency_ms == 550);
  CHECK(res.critical_path == std::vector<std::string>{"s", "A", "j"});
  CHECK(longest_path(g, {100, 400, 250, 50}) == 550);
}

TEST_CASE("parallelism one serializes") {
  auto r = small_registry();
  auto g = graph_of(r, {"a", "b", "c"}, {});
  ExecuteOptions o;
  o.parallelism = 1;
  CHECK(execute(g, r, fixed_latency({{"a", 300}, {"b", 500}, {"c", 200}}), o).total_latency_ms == 1000);
}

TEST_CASE("graph validation") {
  auto r = small_registry();
  ExecutionGraph g;
  g.add_node(node("a", r, "ocr-a", {}));
  CHECK_THROWS_AS(g.add_node(node("a", r, "ocr-a", {})), InvalidGraph);
  CHECK_THROWS_AS(g.add_edge("a", "a"), InvalidGraph);
  CHECK_THROWS_AS(g.add_edge("a", "zz"), InvalidGraph);
  g.add_node(node("b", r, "ocr-a", {}));
  g.add_edge("a", "b");
  g.add_edge("b", "a");
  CHECK_THROWS_AS(g.topological_order(), InvalidGraph);
  CHECK_THROWS_AS(g.validate(), InvalidGraph);
}

TEST_CASE("failed node is repaired locally and done nodes are kept") {
  auto r = small_registry();
  auto g = graph_of(r, {"p1", "p2", "p3", "p4", "doc"}, {{"p1", "doc"}, {"p2", "doc"}, {"p3", "doc"}, {"p4", "doc"}});
  std::map<std::string, int> runs;
  NodeInvoker inv = [&](const GraphNode& n, const ToolSpec& tool, const NodeInputs&, int) {
    ++runs[n.id];
    NodeOutput o;
    o.latency_ms = 100;
    if (n.id == "doc" && tool.name == "ocr-a") {
      o.failed = true;
      o.cause = "timeout";
    }
    return o;
  };
  auto res = execute(g, r, inv);
  REQUIRE(g.repair_log.size() == 1);
  CHECK(g.repair_log[0].failed_node == "doc");
  CHECK(g.repair_log[0].preserved_nodes == 4);
  CHECK(r.spec(g.repair_log[0].replacement).name == "ocr-b");
  for (auto id : {"p1", "p2", "p3", "p4"}) CHECK(runs[id] == 1);
  CHECK(runs["doc"] == 2);
  CHECK(res.total_latency_ms == 300);
  CHECK(g.node(g.index_of("doc")).status == NodeStatus::Done);
  CHECK(g.node(g.index_of("doc")).repairs == 1);
}

TEST_CASE("low confidence counts as a failure for repair") {
  auto r = small_registry();
  auto g = graph_of(r, {"ocr"}, {});
  NodeInvoker inv = [&](const GraphNode&, const ToolSpec& tool, const NodeInputs&, int) {
    NodeOutput o;
    o.latency_ms = 100;
    o.confidence = tool.name == "ocr-a" ? 0.2 : 0.9;
    return o;
  };
  auto res = execute(g, r, inv);
  CHECK(g.repair_log.size() == 1);
  CHECK(res.find("ocr")->confidence == 0.9);
  CHECK(res.find("ocr")->tool == "ocr-b");
}

TEST_CASE("repair budget is bounded") {
  auto r = small_registry();
  auto g = graph_of(r, {"done", "bad"}, {{"done", "bad"}});
  NodeInvoker inv = [&](const GraphNode& n, const ToolSpec&, const NodeInputs&, int) -> NodeOutput {
    if (n.id == "bad") throw NodeFailure("broken", false);
    NodeOutput o;
    o.latency_ms = 5;
    return o;
  };
  try {
    execute(g, r, inv);
    FAIL("expected PipelineFailed");
  } catch (const PipelineFailed& e) {
    CHECK(e.failed_node() == "bad");
    CHECK(e.partial().find("done") != nullptr);
    CHECK(g.repair_log.size() == 2);
    CHECK(g.node(g.index_of("done")).status == NodeStatus::Done);
  }
}

TEST_CASE("repair state machine with R=2") {
  auto r = small_registry();
  auto g = graph_of(r, {"x"}, {});
  repair(g, 0, r, "first");
  CHECK(r.spec(g.node(0).tool).name == "ocr-b");
  repair(g, 0, r, "second");
  CHECK(r.spec(g.node(0).tool).name == "vision-c");
  CHECK_THROWS_AS(repair(g, 0, r, "third"), PipelineFailed);
}

TEST_CASE("no alternative tool exhausts locally") {
  ToolRegistry r;
  ToolSpec s;
  s.name = "only";
  s.output_tags = {"x"};
  s.latency = {1, 1, LatencyShape::Uniform};
  r.register_tool(s);
  ExecutionGraph g;
  GraphNode n;
  n.id = "n";
  n.tool = r.id_of("only");
  n.requirement.outputs = {"x"};
  g.add_node(n);
  CHECK_THROWS_AS(repair(g, 0, r, "fail"), PipelineFailed);
}

TEST_CASE("done nodes are never repaired") {
  auto r = small_registry();
  auto g = graph_of(r, {"x"}, {});
  g.node(0).status = NodeStatus::Done;
  auto before = g.node(0).tool;
  CHECK_THROWS_AS(repair(g, 0, r, "late"), InvalidGraph);
  CHECK(g.node(0).tool == before);
}

TEST_CASE("clarification after a repair with low confidence") {
  auto r = small_registry();
  auto g = graph_of(r, {"ocr"}, {});
  NodeInvoker inv = [&](const GraphNode&, const ToolSpec& tool, const NodeInputs&, int) {
    NodeOutput o;
    o.latency_ms = 100;
    o.confidence = tool.name == "ocr-a" ? 0.2 : 0.45;
    return o;
  };
  auto res = execute(g, r, inv);
  auto q = check_clarification(g, res, r);
  REQUIRE(q);
  CHECK(q->node_id == "ocr");
  CHECK(q->confidence == 0.45);
  CHECK_FALSE(q->question.empty());
}

TEST_CASE("confident results ask nothing") {
  auto r = small_registry();
  auto g = graph_of(r, {"a", "b"}, {{"a", "b"}});
  NodeInvoker inv = [](const GraphNode&, const ToolSpec&, const NodeInputs&, int) {
    NodeOutput o;
    o.latency_ms = 10;
    o.confidence = 0.9;
    return o;
  };
  auto res = execute(g, r, inv);
  CHECK_FALSE(check_clarification(g, res, r));
}

TEST_CASE("clarification loop gives up after L rounds") {
  ClarificationLoop loop(3);
  CHECK(loop.next(true) == ClarificationLoop::Step::Ask);
  CHECK(loop.next(true) == ClarificationLoop::Step::Ask);
  CHECK(loop.next(true) == ClarificationLoop::Step::BestEffort);
  CHECK(loop.questions() == 2);
  ClarificationLoop ok(3);
  CHECK(ok.next(false) == ClarificationLoop::Step::Satisfied);
}

TEST_CASE("verification") {
  std::vector<TraceEvent> trace{{TraceKind::Done, "detect", "yolo", "", 0, 1, "ok", 0.9, {}},
                                {TraceKind::Done, "align", "aligner", "", 1, 2, "ok", 0.9, {}}};
  FinalAnswer video;
  video.segments = {{"objects", "sneakers", {"detect"}}};
  auto v = verify_output(video, trace, ExecutionFlag::Video);
  CHECK(v.verdict == Verdict::Fail);
  video.segments.push_back({"timestamps", "0:12-0:18", {"align"}});
  CHECK(verify_output(video, trace, ExecutionFlag::Video).verdict == Verdict::Pass);

  FinalAnswer simple;
  simple.segments = {{"answer", "hi", {}}};
  CHECK(verify_output(simple, trace, ExecutionFlag::RouteLlm).verdict == Verdict::Pass);

  FinalAnswer ghost;
  ghost.segments = {{"answer", "hi", {"nowhere"}}};
  CHECK(verify_output(ghost, trace, ExecutionFlag::RouteLlm).verdict == Verdict::Fail);

  struct Broken : Verifier {
    Verification verify(const FinalAnswer&, const std::vector<TraceEvent>&, ExecutionFlag) const override {
      throw std::runtime_error("judge offline");
    }
  } broken;
  CHECK(verify_output(simple, trace, ExecutionFlag::RouteLlm, &broken).verdict == Verdict::Unverified);
}

TEST_CASE("execution is deterministic under the virtual clock") {
  auto r = small_registry();
  auto run = [&] {
    auto g = graph_of(r, {"a", "b", "c", "d"}, {{"a", "c"}, {"b", "c"}, {"c", "d"}});
    return execute(g, r, fixed_latency({{"a", 10}, {"b", 20}, {"c", 30}, {"d", 40}}));
  };
  auto x = run(), y = run();
  CHECK(x.trace == y.trace);
  CHECK(x.total_latency_ms == y.total_latency_ms);
}


TEST_CASE("routellm plans route then invoke") {
  auto reg = default_registry();
  QueryState s;
  s.user_query = "hello";
  auto g = build_graph(ExecutionFlag::RouteLlm, s, reg);
  REQUIRE(g.size() == 2);
  CHECK(g.node(0).role == "route");
  CHECK(g.node(1).role == "invoke");
  CHECK(g.edges().size() == 1);
}

TEST_CASE("video plans two branches and a join") {
  auto reg = default_registry();
  QueryState s;
  s.user_query = "What products are shown in this advertisement video? Provide timestamps and descriptions.";
  s.attachments = {Attachment::path("ad.mp4")};
  s.attachments[0].detected_modality = Modality::Video;
  auto g = build_graph(ExecutionFlag::Video, s, reg);
  std::map<std::string, std::size_t> roles;
  for (auto& n : g.nodes()) ++roles[n.role];
  CHECK(roles["detect"] == 1);
  CHECK(roles["transcribe"] == 1);
  CHECK(roles["align"] == 1);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.node(i).role == "align") CHECK(g.predecessors(i).size() == 2);
    if (g.node(i).role == "detect" || g.node(i).role == "transcribe") CHECK(g.predecessors(i).empty());
  }
}

TEST_CASE("complex with three documents fans out three branches") {
  auto reg = default_registry();
  QueryState s;
  s.user_query = "compare these three reports and chart trends";
  for (auto n : {"q1.pdf", "q2.pdf", "q3.pdf"}) {
    s.attachments.push_back(Attachment::path(n));
    s.attachments.back().detected_modality = Modality::Document;
  }
  auto g = build_graph(ExecutionFlag::Complex, s, reg);
  std::size_t decompose = 0, synth = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.node(i).role == "decompose") {
      ++decompose;
      CHECK(g.successors(i).size() == 3);
    }
    if (g.node(i).role == "synthesize") ++synth;
  }
  CHECK(decompose == 1);
  CHECK(synth == 1);
}

TEST_CASE("moe plans N models and an aggregate") {
  auto reg = default_registry();
  QueryState s;
  s.user_query = "tell me something";
  PlanContext ctx;
  ctx.moe_models = 3;
  auto g = build_graph(ExecutionFlag::Moe, s, reg, ctx);
  std::size_t models = 0;
  for (auto& n : g.nodes()) models += n.role == "model";
  CHECK(models == 3);
  CHECK(g.nodes().back().role == "aggregate");
}

TEST_CASE("missing tools make a query unplannable") {
  ToolRegistry empty;
  QueryState s;
  s.user_query = "hello";
  CHECK_THROWS_AS(build_graph(ExecutionFlag::RouteLlm, s, empty), UnplannableQuery);
}

TEST_CASE("subtask splitting") {
  CHECK(split_subtasks("extract the metrics, compare trends and then write a summary").size() >= 2);
  CHECK(split_subtasks("hello").size() == 1);
  CHECK(split_subtasks("").size() == 1);
}

}  // TEST_SUITE
