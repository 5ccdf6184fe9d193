#include "supervisor/engine.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "supervisor/errors.hpp"
#include "supervisor/util.hpp"

namespace supervisor {

using json = nlohmann::json;

namespace {

std::size_t estimate_tokens(std::string_view text, double per_word) {
  return static_cast<std::size_t>(std::ceil(static_cast<double>(whitespace_tokens(text)) * per_word));
}

std::string text_of(const NodeResult* r, const char* key = "text") {
  if (!r || !r->output.contains(key) || !r->output[key].is_string()) return "";
  return r->output[key].get<std::string>();
}

bool perceptual_role(const std::string& role) {
  return role == "perceive" || role == "detect" || role == "transcribe";
}

std::vector<std::size_t> with_descendants(const ExecutionGraph& g, std::size_t start) {
  std::vector<std::size_t> out{start};
  std::vector<bool> seen(g.size(), false);
  seen[start] = true;
  for (std::size_t k = 0; k < out.size(); ++k)
    for (auto s : g.successors(out[k]))
      if (!seen[s]) {
        seen[s] = true;
        out.push_back(s);
      }
  return out;
}

TraceEvent supervisor_event(TraceKind kind, double at, std::string outcome, std::string node = "supervisor",
                            std::string tool = "") {
  TraceEvent e;
  e.kind = kind;
  e.node_id = std::move(node);
  e.tool = std::move(tool);
  e.start_ms = e.end_ms = at;
  e.outcome = std::move(outcome);
  return e;
}

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string_view to_string(TurnStatus s) {
  switch (s) {
    case TurnStatus::Answered: return "answered";
    case TurnStatus::NeedsClarification: return "needs_clarification";
    case TurnStatus::Failed: return "failed";
  }
  return "failed";
}

std::string_view to_string(ClarifyReason r) {
  switch (r) {
    case ClarifyReason::None: return "none";
    case ClarifyReason::Confidence: return "confidence";
    case ClarifyReason::Intent: return "intent";
    case ClarifyReason::Referent: return "referent";
  }
  return "none";
}

bool is_anaphoric(const std::string& query) {
  static const std::vector<std::string> markers = {
      "the earlier", "the previous", "from before", "i mentioned", "we discussed", "you mentioned",
      "that one",    "same one",     "as before",   "last time",   "mentioned earlier", "i shared earlier",
      "i sent earlier", "from earlier", "mention earlier", "said earlier", "told you"};
  auto toks = words(query);
  for (const auto& m : markers)
    if (count_phrase(toks, m)) return true;
  return false;
}

LlmReply TemplateLanguageBackend::complete(const LlmRequest& req, const ToolSpec&, std::uint64_t) {
  LlmReply r;
  r.text = req.draft;
  r.prompt_tokens = estimate_tokens(req.prompt, per_word_) + overhead_ + req.extra_tokens;
  r.output_tokens = req.max_output_tokens;
  r.confidence = req.prior_confidence;
  return r;
}

struct Engine::Turn {
  QueryState st;
  std::string query;
  std::uint64_t turn_index = 0;
  std::set<Modality> modalities;
  Modality query_modality = Modality::Text;
  std::string context;
  std::map<std::string, int> bump;
  double clock = 0;
};

Engine::Engine(ToolRegistry registry, ModelCatalog catalog, std::shared_ptr<Backend> backend, EngineConfig cfg)
    : registry_(std::move(registry)),
      catalog_(std::move(catalog)),
      backend_(std::move(backend)),
      cfg_(std::move(cfg)),
      classifier_(std::make_shared<RuleFlagClassifier>()),
      prober_(std::make_shared<FilesystemProber>()),
      embedder_(std::make_shared<HashingEmbedder>()),
      language_(std::make_shared<TemplateLanguageBackend>()),
      scorer_(std::make_shared<LogisticWinScorer>()),
      subflags_(std::make_shared<RuleSubflagClassifier>()) {
  if (!backend_) backend_ = std::make_shared<SimulatedBackend>();
}

RouterConfig Engine::router() const {
  RouterConfig rc;
  rc.scorer = scorer_.get();
  rc.subflags = subflags_.get();
  rc.threshold = cfg_.win_threshold;
  return rc;
}

std::uint64_t Engine::node_seed(const Turn& t, const std::string& node, const std::string& tool, int attempt) const {
  return mix_seed({cfg_.seed, fnv1a64(t.st.session.session_id), t.turn_index, fnv1a64(t.st.user_query),
                   fnv1a64(node), fnv1a64(tool), static_cast<std::uint64_t>(attempt)});
}

ExecuteOptions Engine::exec_options(const QueryState& st, double start_ms) const {
  ExecuteOptions o;
  o.clock = cfg_.clock;
  o.parallelism = cfg_.parallel ? cfg_.parallelism : 1;
  o.repair = cfg_.repair;
  o.max_repairs = cfg_.max_repairs;
  o.repair_confidence = cfg_.repair_confidence;
  o.start_ms = start_ms;
  o.state = &st;
  return o;
}

LlmReply Engine::ask_language(const Turn& t, const GraphNode& node, const ToolSpec& spec, LlmRequest req,
                              int attempt, NodeOutput& out) {
  req.role = node.role;
  if (auto it = cfg_.output_tokens.find(node.role); it != cfg_.output_tokens.end())
    req.max_output_tokens = it->second;
  Money price = spec.cost.per_mtok;
  Money fee = spec.cost.per_invocation;
  if (node.binding.contains("model")) {
    const auto& m = catalog_.find(node.binding["model"].get<std::string>());
    req.model = m.model_name;
    req.prior_confidence = m.capability;
    price = m.cost_per_mtok;
    fee += m.per_request_fee;
  }
  auto seed = node_seed(t, node.id, spec.name, attempt);
  LlmReply reply = language_->complete(req, spec, seed);
  if (hooks_.truncate && hooks_.truncate(node.id, attempt)) reply.text.clear();
  out.latency_ms = reply.latency_ms >= 0 ? reply.latency_ms
                                         : latency_from_uniform(spec.latency, unit_uniform(mix_seed({seed, 1})));
  out.cost = fee + token_cost(price, reply.prompt_tokens + reply.output_tokens);
  out.confidence = std::clamp(reply.confidence, 0.0, 1.0);
  return reply;
}

NodeOutput Engine::invoke_node(const Turn& t, const GraphNode& node, const ToolSpec& spec, const NodeInputs& in,
                               int attempt) {
  if (hooks_.fail && hooks_.fail(node.id, spec.name, attempt))
    throw NodeFailure(spec.name + " failed on " + node.id, true);
  NodeOutput out;
  const auto& role = node.role;

  if (perceptual_role(role) || role == "generate") {
    PerceptualTask task;
    if (role == "generate") {
      task.kind = TaskKind::GenerateImage;
      task.parameters["prompt"] = node.binding.at("prompt").get<std::string>();
    } else {
      auto idx = node.binding.at("attachment").get<std::size_t>();
      task.source = t.st.attachments.at(idx);
      task.attachment_id = task.source.display_name();
      task.kind = *parse_task_kind(node.binding.at("kind").get<std::string>());
      for (const auto& [k, v] : node.binding.at("parameters").items()) task.parameters[k] = v.get<std::string>();
    }
    auto p = execute_perceptual(task, *backend_, spec, node_seed(t, node.id, spec.name, attempt));
    out.payload = to_json(p);
    out.payload["attachment"] = node.binding.value("attachment", std::size_t{0});
    out.confidence = p.confidence;
    out.latency_ms = p.latency_ms;
    out.cost = spec.cost.per_invocation;
    return out;
  }

  LlmRequest req;
  std::vector<const NodeResult*> up = in.upstream;
  std::sort(up.begin(), up.end(), [](const NodeResult* a, const NodeResult* b) { return a->node_id < b->node_id; });

  if (role == "route") {
    std::string route = "weak", model;
    double p = 0;
    if (node.binding.contains("decision")) {
      route = node.binding["decision"].value("route", "weak");
      p = node.binding["decision"].value("win_probability", 0.0);
    }
    req.prompt = t.query;
    req.draft = "route=" + route + " p=" + fmt2(p);
    auto reply = ask_language(t, node, spec, req, attempt, out);
    out.payload = {{"text", reply.text}, {"route", route}, {"win_probability", p}};
    return out;
  }

  if (role == "retrieve") {
    out.latency_ms = latency_from_uniform(spec.latency, unit_uniform(node_seed(t, node.id, spec.name, attempt)));
    out.cost = spec.cost.per_invocation;
    out.payload = {{"text", ""}};
    return out;
  }

  if (role == "invoke" || role == "model") {
    std::string subtask = node.binding.value("subtask", t.query);
    req.prompt = "Question: " + subtask + "\nContext:\n" + t.context;
    // Raw extractions read directly (fixed pipelines skip contextualization);
    // several extractions of one attachment read the same source once.
    std::map<std::size_t, std::size_t> source;
    for (const auto* u : up) {
      req.prompt += "\n" + text_of(u);
      if (!u->output.contains("source_tokens")) continue;
      auto& s = source[u->output.value("attachment", std::size_t{0})];
      s = std::max(s, u->output["source_tokens"].get<std::size_t>());
    }
    for (const auto& [_, n] : source) req.extra_tokens += n;
    std::string model = node.binding.value("model", "");
    req.draft = "[" + model + "] Answer to \"" + subtask + "\"";
    auto reply = ask_language(t, node, spec, req, attempt, out);
    out.payload = {{"text", reply.text}, {"model", model}};
    return out;
  }

  if (role == "contextualize") {
    if (up.empty()) throw NodeFailure("contextualize node " + node.id + " has no evidence", false);
    auto p = raw_payload_from_json(up.front()->output);
    auto ev = contextualize(p, p.kind, t.query, up.front()->node_id, &contextualizer_);
    req.prompt = "Question: " + t.query + "\nEvidence:\n" + ev.summary_text;
    req.extra_tokens = p.source_tokens;
    req.draft = ev.summary_text;
    auto reply = ask_language(t, node, spec, req, attempt, out);
    out.payload = {{"text", reply.text},
                   {"evidence_kind", to_string(p.kind)},
                   {"evidence_confidence", p.confidence},
                   {"source", up.front()->node_id}};
    if (p.kind == TaskKind::DetectObjects && p.frames > 1)
      out.payload["timestamps"] = render_timeline(align_timeline(p.detections, {}));
    return out;
  }

  if (role == "align") {
    RawPayload det, tr;
    std::size_t extra = 0;
    for (const auto* u : up) {
      auto p = raw_payload_from_json(u->output);
      extra += p.source_tokens;
      if (p.kind == TaskKind::DetectObjects) det = p;
      if (p.kind == TaskKind::Transcribe) tr = p;
    }
    double tol = node.binding.value("tolerance_s", kDefaultAlignToleranceS);
    auto timeline = align_timeline(det.detections, tr.transcript, tol);
    auto objects = contextualize(det, TaskKind::DetectObjects, t.query, "", &contextualizer_).summary_text;
    auto stamps = render_timeline(timeline);
    req.prompt = "Question: " + t.query + "\nObjects:\n" + objects + "\nTimeline:\n" + stamps;
    req.extra_tokens = extra;
    req.draft = stamps;
    auto reply = ask_language(t, node, spec, req, attempt, out);
    json tl = json::array();
    for (const auto& e : timeline)
      tl.push_back({{"t_start", e.t_start}, {"t_end", e.t_end}, {"label", e.label}, {"mentions", e.mentions}});
    out.payload = {{"text", reply.text}, {"objects", objects}, {"timestamps", reply.text}, {"timeline", tl}};
    return out;
  }

  if (role == "aggregate") {
    const NodeResult* best = nullptr;
    for (const auto* u : up)
      if (!best || u->confidence > best->confidence) best = u;
    req.prompt = "Question: " + t.query + "\nCandidates:";
    for (const auto* u : up) req.prompt += "\n- " + text_of(u);
    req.draft = text_of(best);
    auto reply = ask_language(t, node, spec, req, attempt, out);
    out.payload = {{"text", reply.text}, {"chosen", best ? best->node_id : ""}};
    return out;
  }

  if (role == "decompose") {
    std::vector<std::string> subs = node.binding.value("subtasks", std::vector<std::string>{});
    req.prompt = "Split into independent subtasks: " + t.query;
    req.draft = join(subs, "; ");
    auto reply = ask_language(t, node, spec, req, attempt, out);
    out.payload = {{"text", reply.text}, {"subtasks", subs}};
    return out;
  }

  if (role == "synthesize") {
    std::vector<std::string> parts;
    for (const auto* u : up) {
      auto s = text_of(u);
      if (s.empty()) s = text_of(u, "timestamps");
      if (!s.empty()) parts.push_back(s);
    }
    req.prompt = "Question: " + t.query + "\nFindings:\n" + join(parts, "\n") + "\nContext:\n" + t.context;
    req.draft = parts.empty() ? "" : "Combined findings from " + std::to_string(parts.size()) + " part(s):\n" + join(parts, "\n");
    auto reply = ask_language(t, node, spec, req, attempt, out);
    out.payload = {{"text", reply.text}, {"parts", parts.size()}};
    return out;
  }

  throw NodeFailure("no handler for node role " + role, false);
}

void Engine::execute_graph(Turn& t, TurnResult& r, const ExecutionResult* resume_from) {
  auto opts = exec_options(t.st, t.clock);
  opts.resume_from = resume_from;
  NodeInvoker inv = [this, &t](const GraphNode& n, const ToolSpec& s, const NodeInputs& in, int attempt) {
    int bump = 0;
    if (auto it = t.bump.find(n.id); it != t.bump.end()) bump = it->second;
    return invoke_node(t, n, s, in, attempt + bump);
  };
  try {
    r.execution = execute(r.graph, registry_, inv, opts);
  } catch (PipelineFailed& pf) {
    r.execution = std::move(pf.partial());
    r.status = TurnStatus::Failed;
    r.failure = pf.what();
  }
  t.clock += r.execution.total_latency_ms;
  r.cost += r.execution.total_cost;
  r.trace.insert(r.trace.end(), r.execution.trace.begin(), r.execution.trace.end());
}

FinalAnswer Engine::assemble(const Turn&, const TurnResult& r) const {
  FinalAnswer a;
  const auto& ex = r.execution;
  auto seg = [&](std::string name, const std::vector<std::string>& nodes, const char* key = "text") {
    AnswerSegment s;
    s.name = std::move(name);
    std::vector<std::string> texts;
    for (const auto& id : nodes) {
      if (auto* n = ex.find(id)) {
        auto txt = text_of(n, key);
        if (!txt.empty()) texts.push_back(txt);
        s.cited_nodes.push_back(id);
      }
    }
    s.text = join(texts, "\n");
    a.segments.push_back(std::move(s));
  };
  auto by_role = [&](const std::string& role) {
    std::vector<std::string> ids;
    for (const auto& n : r.graph.nodes())
      if (n.role == role) ids.push_back(n.id);
    return ids;
  };
  if (r.referent) a.segments.push_back({"context", "Earlier in this conversation: " + r.referent->content, {}});

  switch (r.flag) {
    case ExecutionFlag::RouteLlm: seg("answer", {"invoke"}); break;
    case ExecutionFlag::Moe: seg("answer", {"aggregate"}); break;
    case ExecutionFlag::Complex: seg("synthesis", {"synthesize"}); break;
    case ExecutionFlag::Video: {
      auto aligns = by_role("align");
      auto ctxs = by_role("contextualize");
      std::vector<std::string> objs = aligns, stamps = aligns;
      objs.insert(objs.end(), ctxs.begin(), ctxs.end());
      stamps.insert(stamps.end(), ctxs.begin(), ctxs.end());
      AnswerSegment o, ts;
      seg("objects", aligns, "objects");
      o = a.segments.back();
      a.segments.pop_back();
      for (const auto& id : ctxs)
        if (auto* n = ex.find(id)) {
          auto txt = text_of(n);
          if (!txt.empty()) o.text += (o.text.empty() ? "" : "\n") + txt;
          o.cited_nodes.push_back(id);
        }
      seg("timestamps", stamps, "timestamps");
      ts = a.segments.back();
      a.segments.pop_back();
      a.segments.push_back(std::move(o));
      a.segments.push_back(std::move(ts));
      break;
    }
    default: {
      auto name = required_segments(r.flag).front();
      auto synth = by_role("synthesize");
      seg(name, synth.empty() ? by_role("contextualize") : synth);
    }
  }
  return a;
}

TurnResult Engine::ask(Turn& t, TurnResult r, QueryState& state, MemoryStore* memory, ClarifyReason why,
                       ClarificationRequest q) {
  r.status = TurnStatus::NeedsClarification;
  r.clarify_reason = why;
  r.clarification_rounds += 1;
  r.trace.push_back(supervisor_event(TraceKind::Clarify, t.clock, q.question, q.node_id.empty() ? "supervisor" : q.node_id));
  r.clarification = std::move(q);
  r.tta_ms = t.clock;
  commit(t, r, state);
  state.clarify_question = r.clarification->question;
  state.clarify_response.reset();
  if (memory) memory->add("Assistant asked: " + r.clarification->question, Modality::Text, t.turn_index, *embedder_,
                          state.session.created_at_ms);
  return r;
}

void Engine::commit(Turn& t, TurnResult& r, QueryState& state) {
  Money delta = r.cost - r.charged;
  Money total = state.session.cumulative_cost + delta;
  if (cfg_.budget && total > *cfg_.budget)
    throw BudgetExceeded("session cost " + total.to_string() + " would exceed budget " + cfg_.budget->to_string());
  QueryState next = t.st;
  next.trace = state.trace;
  next.trace.insert(next.trace.end(), r.trace.begin() + static_cast<std::ptrdiff_t>(r.trace_committed), r.trace.end());
  next.session = state.session;
  next.session.cumulative_cost = total;
  next.clarify_question = state.clarify_question;
  next.clarify_response = state.clarify_response;
  state = std::move(next);
  r.charged = r.cost;
  r.trace_committed = r.trace.size();
}

void Engine::finish(Turn& t, TurnResult& r, QueryState& state, MemoryStore* memory) {
  bool best_effort = r.answer.best_effort;
  if (r.status != TurnStatus::Failed) {
    r.answer = assemble(t, r);
    if (cfg_.verify) {
      r.verification = verify_output(r.answer, r.trace, r.flag, &verifier_);
      for (int k = 0; k < cfg_.verify_retries && r.verification.verdict == Verdict::Fail; ++k) {
        r.internal_rework += 1;
        r.trace.push_back(supervisor_event(TraceKind::Verify, t.clock, "fail: " + join(r.verification.problems, "; ")));
        // Re-run whatever fed the incomplete segments.
        std::set<std::size_t> rerun;
        for (const auto& s : r.answer.segments)
          if (s.text.empty())
            for (const auto& id : s.cited_nodes)
              for (auto i : with_descendants(r.graph, r.graph.index_of(id))) rerun.insert(i);
        if (rerun.empty()) break;
        for (auto i : rerun) {
          r.graph.node(i).status = NodeStatus::Pending;
          t.bump[r.graph.node(i).id] += 100;
        }
        ExecutionResult prev = r.execution;
        execute_graph(t, r, &prev);
        if (r.status == TurnStatus::Failed) break;
        r.answer = assemble(t, r);
        r.verification = verify_output(r.answer, r.trace, r.flag, &verifier_);
      }
      r.trace.push_back(supervisor_event(TraceKind::Verify, t.clock, std::string(to_string(r.verification.verdict))));
    } else {
      r.verification = {Verdict::Unverified, {"verification disabled"}};
    }
  }
  if (r.status == TurnStatus::Failed) {
    r.answer = assemble(t, r);
    best_effort = true;
    r.verification = {Verdict::Fail, {r.failure}};
  }
  r.answer.best_effort = best_effort;
  r.tta_ms = t.clock;
  r.clarification.reset();

  commit(t, r, state);
  state.clarify_question.reset();
  state.clarify_response.reset();
  state.session.turn_count = t.turn_index;

  if (memory) {
    auto ts = state.session.created_at_ms;
    memory->add("User: " + state.user_query, Modality::Text, t.turn_index, *embedder_, ts);
    for (const auto& n : r.graph.nodes()) {
      if (n.role != "contextualize" && n.role != "align") continue;
      const auto* res = r.execution.find(n.id);
      if (!res) continue;
      Modality m = Modality::Text;
      for (auto p : r.graph.predecessors(r.graph.index_of(n.id))) {
        const auto& b = r.graph.node(p).binding;
        if (b.contains("attachment")) m = planning_modality(t.st.attachments.at(b["attachment"].get<std::size_t>()));
      }
      auto txt = text_of(res);
      if (!txt.empty()) memory->add(txt, m, t.turn_index, *embedder_, ts);
    }
    auto answer = r.answer.render();
    if (!answer.empty()) memory->add("Assistant: " + answer, Modality::Text, t.turn_index, *embedder_, ts);
    auto c = maybe_compress(*memory, whitespace_counter(), compressor_, false, cfg_.compression_trigger);
    if (c.warning) r.warnings.push_back(*c.warning);
  }
}

TurnResult Engine::after_execute(Turn& t, TurnResult r, QueryState& state, MemoryStore* memory) {
  if (r.status != TurnStatus::Failed) {
    auto q = check_clarification(r.graph, r.execution, registry_, cfg_.clarify_threshold);
    if (q) {
      ClarificationLoop loop(cfg_.clarify_rounds);
      for (int i = 0; i < r.confidence_rounds; ++i) loop.next(true);
      auto step = loop.next(true);
      r.confidence_rounds = loop.rounds();
      if (step == ClarificationLoop::Step::Ask) return ask(t, std::move(r), state, memory, ClarifyReason::Confidence, *q);
      r.answer.best_effort = true;
      r.warnings.push_back("clarification bound reached; answering with best effort");
    }
  }
  finish(t, r, state, memory);
  return r;
}

TurnResult Engine::plan_and_run(QueryState& state, MemoryStore* memory, TurnResult r) {
  validate(state);
  if (cfg_.budget && state.session.cumulative_cost >= *cfg_.budget)
    throw BudgetExceeded("session already spent " + state.session.cumulative_cost.to_string() + " of budget " +
                         cfg_.budget->to_string());
  Turn t;
  t.st = state;
  t.turn_index = state.session.turn_count + 1;
  t.clock = r.tta_ms;
  t.query = state.user_query;
  if (state.clarify_response) t.query += " " + *state.clarify_response;
  r.status = TurnStatus::Answered;
  r.clarification.reset();

  for (auto& a : t.st.attachments) {
    a.detected_modality = detect_modality(a, *prober_);
    if (a.kind == Attachment::SourceKind::Url) {
      std::optional<Modality> expected;
      if (*a.detected_modality != Modality::Unknown) expected = *a.detected_modality;
      auto v = validate_url(a.location, *prober_, expected);
      if (v.resolved_mime) a.mime = v.resolved_mime;
      if (v.fallback_local_path) {
        r.warnings.push_back("using local file " + *v.fallback_local_path + " for " + a.location);
        a.kind = Attachment::SourceKind::Path;
        a.location = *v.fallback_local_path;
      }
    }
    t.modalities.insert(*a.detected_modality);
    if (t.query_modality == Modality::Text && *a.detected_modality != Modality::Unknown)
      t.query_modality = *a.detected_modality;
  }

  r.decision = classify_flag(t.query, t.modalities, *classifier_);
  r.flag = reconcile_flag(r.decision.flag, t.modalities);
  t.st.flag = r.flag;
  if (r.decision.fell_back) r.warnings.push_back(r.decision.note);
  std::string flag_note = "flag=" + std::string(to_string(r.flag));
  if (r.flag != r.decision.flag) flag_note += " (reassigned from " + std::string(to_string(r.decision.flag)) + ")";
  r.trace.push_back(supervisor_event(TraceKind::Route, t.clock, flag_note, "decompose-query", "supervisor"));

  if (memory && cfg_.use_memory && memory->size() > 0) {
    auto emb = embedder_->embed(t.query);
    auto retrieved = memory->retrieve_relevant(emb, t.query_modality, cfg_.retrieve_k, t.turn_index);
    t.st.context = integrate_context(*memory, retrieved);
    auto tool = registry_.match_tools(Requirement{{}, {"retrieve"}, {}}).front();
    const auto& spec = registry_.spec(tool);
    double lat = latency_from_uniform(spec.latency, unit_uniform(node_seed(t, "retrieve", spec.name, 0)));
    TraceEvent s = supervisor_event(TraceKind::Start, t.clock, "retrieve", "retrieve", spec.name);
    TraceEvent d = supervisor_event(TraceKind::Done, t.clock + lat, "retrieved " + std::to_string(retrieved.size()),
                                    "retrieve", spec.name);
    d.start_ms = t.clock;
    d.cost = spec.cost.per_invocation;
    d.confidence = 1.0;
    r.trace.push_back(s);
    r.trace.push_back(d);
    t.clock += lat;
    r.cost += spec.cost.per_invocation;
    if (is_anaphoric(state.user_query) && t.st.attachments.empty()) {
      const MemoryRecord* best = nullptr;
      double best_sim = cfg_.referent_min_similarity;
      for (const auto& rec : retrieved) {
        double sim = cosine(emb, rec.embedding);
        if (sim >= best_sim && (!best || sim > best_sim)) {
          best = &rec;
          best_sim = sim;
        }
      }
      if (best) r.referent = *best;
    }
  } else {
    t.st.context = {};
  }
  t.context = t.st.context.render();

  if (is_anaphoric(state.user_query) && t.st.attachments.empty() && !r.referent) {
    if (!state.clarify_response)
      return ask(t, std::move(r), state, memory, ClarifyReason::Referent,
                 {"", "Which earlier item do you mean? I could not find it in this conversation.", 0});
    r.warnings.push_back("referent taken from the clarification answer");
  }

  RouterConfig rc = router();
  if (r.flag == ExecutionFlag::RouteLlm) {
    r.routing = route_strong_weak(t.query, catalog_, t.st.cost_knob, rc);
    t.st.subflag = r.routing->subflag;
    if (r.routing->weak_fallback) r.warnings.push_back(r.routing->note);
    r.trace.push_back(supervisor_event(TraceKind::Route, t.clock,
                                       "route=" + std::string(to_string(r.routing->route)) + " model=" +
                                           r.routing->chosen_model + " p=" + fmt2(r.routing->win_probability),
                                       "route-query", "supervisor"));
  }

  PlanContext ctx;
  ctx.catalog = &catalog_;
  ctx.routing = r.routing;
  ctx.router = &rc;
  ctx.backend = backend_.get();
  ctx.moe_models = cfg_.moe_models;
  ctx.lenient_intent = state.clarify_response.has_value();
  if (state.clarify_response) ctx.focus = *state.clarify_response;
  QueryState plan_state = t.st;
  plan_state.user_query = t.query;
  try {
    r.graph = build_graph(r.flag, plan_state, registry_, ctx);
  } catch (const AmbiguousIntent& e) {
    std::vector<std::string> names;
    for (const auto& a : t.st.attachments) names.push_back(a.display_name());
    return ask(t, std::move(r), state, memory, ClarifyReason::Intent,
               {"", "What would you like me to do with " + join(names, ", ") + "?", 0});
  }
  if (r.routing) {
    auto i = r.graph.index_of("route");
    r.graph.node(i).binding["decision"] = {{"route", to_string(r.routing->route)},
                                           {"win_probability", r.routing->win_probability}};
  }
  execute_graph(t, r, nullptr);
  return after_execute(t, std::move(r), state, memory);
}

ExecutionResult Engine::run_graph(const QueryState& state, ExecutionGraph& graph, const std::string& context,
                                  ExecuteOptions opts, int attempt_offset) {
  Turn t;
  t.st = state;
  t.query = state.user_query;
  t.context = context;
  t.turn_index = state.session.turn_count + 1;
  opts.state = &t.st;
  NodeInvoker inv = [this, &t, attempt_offset](const GraphNode& n, const ToolSpec& s, const NodeInputs& in,
                                               int attempt) { return invoke_node(t, n, s, in, attempt + attempt_offset); };
  return execute(graph, registry_, inv, opts);
}

TurnResult Engine::run(QueryState& state, MemoryStore* memory) { return plan_and_run(state, memory, TurnResult{}); }

TurnResult Engine::resume(QueryState& state, MemoryStore* memory, TurnResult pending, const std::string& response) {
  if (pending.status != TurnStatus::NeedsClarification || !pending.clarification)
    throw InvalidState("turn is not waiting for a clarification");
  state.set_clarify_response(response);
  if (memory)
    memory->add("User clarified: " + response, Modality::Text, state.session.turn_count + 1, *embedder_,
                state.session.created_at_ms);
  if (pending.clarify_reason != ClarifyReason::Confidence) return plan_and_run(state, memory, std::move(pending));

  Turn t;
  t.st = state;
  t.turn_index = state.session.turn_count + 1;
  t.clock = pending.tta_ms;
  t.query = state.user_query + " " + response;
  t.context = state.context.render();
  for (const auto& a : t.st.attachments)
    if (a.detected_modality) t.modalities.insert(*a.detected_modality);

  TurnResult r = std::move(pending);
  r.status = TurnStatus::Answered;
  auto weak = r.graph.index_of(r.clarification->node_id);
  r.clarification.reset();
  auto& wn = r.graph.node(weak);
  if (wn.binding.contains("parameters")) wn.binding["parameters"]["focus"] = response;
  for (auto i : with_descendants(r.graph, weak)) {
    r.graph.node(i).status = NodeStatus::Pending;
    t.bump[r.graph.node(i).id] += 100 * r.clarification_rounds;
  }
  ExecutionResult prev = r.execution;
  execute_graph(t, r, &prev);
  return after_execute(t, std::move(r), state, memory);
}

json to_json(const TurnResult& r, const ToolRegistry& registry) {
  json j;
  j["status"] = to_string(r.status);
  j["flag"] = to_string(r.flag);
  json scores = json::object();
  for (auto f : kAllFlags) scores[std::string(to_string(f))] = r.decision.scores[static_cast<std::size_t>(f)];
  j["flag_scores"] = scores;
  if (r.routing)
    j["routing"] = {{"route", to_string(r.routing->route)},
                    {"win_probability", r.routing->win_probability},
                    {"subflag", r.routing->subflag ? json(to_string(*r.routing->subflag)) : json(nullptr)},
                    {"model", r.routing->chosen_model}};
  j["graph"] = r.graph.to_json(registry);
  j["critical_path"] = r.execution.critical_path;
  j["answer"] = to_json(r.answer);
  j["answer_text"] = r.answer.render();
  j["verification"] = {{"verdict", to_string(r.verification.verdict)}, {"problems", r.verification.problems}};
  j["clarification"] = r.clarification ? json{{"node_id", r.clarification->node_id},
                                              {"question", r.clarification->question},
                                              {"confidence", r.clarification->confidence},
                                              {"reason", to_string(r.clarify_reason)}}
                                       : json(nullptr);
  j["clarification_rounds"] = r.clarification_rounds;
  j["tta_ms"] = r.tta_ms;
  j["cost_usd"] = r.cost.to_string();
  j["internal_rework"] = r.internal_rework;
  j["repairs"] = r.graph.repair_log.size();
  j["referent"] = r.referent ? json(r.referent->content) : json(nullptr);
  j["warnings"] = r.warnings;
  j["failure"] = r.failure.empty() ? json(nullptr) : json(r.failure);
  json tr = json::array();
  for (const auto& e : r.trace) tr.push_back(to_json(e));
  j["trace"] = tr;
  return j;
}

}  // namespace supervisor
