#include "supervisor/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <queue>
#include <thread>

#include "supervisor/engine.hpp"
#include "supervisor/errors.hpp"
#include "supervisor/util.hpp"

namespace supervisor {

using json = nlohmann::json;

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double failure_probability(const WorkloadSpec& spec, const std::string& tool) {
  if (auto it = spec.failure_injection.find(tool); it != spec.failure_injection.end()) return it->second;
  if (auto it = spec.failure_injection.find("*"); it != spec.failure_injection.end()) return it->second;
  return 0.0;
}

std::vector<Interval> intervals_from_trace(const std::vector<TraceEvent>& events, double shift) {
  std::vector<Interval> out;
  for (const auto& e : events) {
    bool attempt = e.kind == TraceKind::Done || e.kind == TraceKind::Failed || e.kind == TraceKind::Warning;
    if (!attempt || e.tool.empty() || e.tool == "supervisor" || !(e.end_ms > e.start_ms)) continue;
    out.push_back({e.tool, e.start_ms + shift, e.end_ms + shift});
  }
  return out;
}

const NodeResult* task_result(const ExecutionGraph& g, const ExecutionResult& ex, TaskKind kind, std::size_t idx) {
  for (const auto& n : g.nodes()) {
    if (!n.binding.contains("kind") || !n.binding.contains("attachment")) continue;
    if (n.binding["kind"] != to_string(kind) || n.binding["attachment"].get<std::size_t>() != idx) continue;
    if (const auto* r = ex.find(n.id)) return r;
  }
  return nullptr;
}

bool evidence_ok(const ExecutionGraph& g, const ExecutionResult& ex, const WorkloadQuery& q) {
  for (std::size_t idx = 0; idx < q.state.attachments.size(); ++idx) {
    for (std::size_t k = 0; k < q.truth.expected_tasks.size(); ++k) {
      const auto* r = task_result(g, ex, q.truth.expected_tasks[k], idx);
      if (!r || r->confidence < 0.5) return false;
      const auto& key = q.truth.expected_evidence.at(std::min(k, q.truth.expected_evidence.size() - 1));
      if (!r->output.contains(key) || r->output[key].empty()) return false;
    }
  }
  return true;
}

MemoryStore build_memory(const WorkloadQuery& q, const Embedder& emb) {
  MemoryStore m(emb.dimension());
  for (const auto& h : q.history) m.add(h.content, h.modality, h.turn, emb, q.state.session.created_at_ms);
  return m;
}

std::string short_term_context(const WorkloadQuery& q) {
  std::vector<std::string> lines;
  auto n = q.history.size();
  for (std::size_t i = n > kShortTermWindow ? n - kShortTermWindow : 0; i < n; ++i) lines.push_back(q.history[i].content);
  return join(lines, "\n");
}

std::shared_ptr<SimulatedBackend> backend_for(const WorkloadQuery& q, bool reformulated) {
  auto b = std::make_shared<SimulatedBackend>();
  for (const auto& [name, f] : q.fixtures) b->add_fixture(name, reformulated ? reformulated_fixture(f) : f);
  return b;
}

class QueryRunner {
 public:
  QueryRunner(const WorkloadQuery& q, const WorkloadSpec& spec, const HarnessConfig& cfg)
      : q_(q), spec_(spec), cfg_(cfg) {
    rec_.id = q.id;
    rec_.category = q.truth.category;
    rec_.submissions = 0;
  }

  QueryRecord run(PolicyKind policy) {
    for (int s = 0; s < cfg_.max_submissions; ++s) {
      if (s > 0) user_wait(cfg_.reformulation_ms);
      rec_.submissions = s + 1;
      bool ok = policy == PolicyKind::Centralized ? centralized(s) : fixed(policy, s);
      if (ok) {
        rec_.correct = true;
        break;
      }
      // A wrong or missing answer sends the user back to rewrite the request.
      if (s + 1 < cfg_.max_submissions) rec_.rework_user = true;
    }
    // The timeline must cover the whole TTA for the throughput replay.
    double end = 0;
    for (const auto& iv : rec_.timeline) end = std::max(end, iv.end_ms);
    if (clock_ > end) rec_.timeline.push_back({"", end, clock_});
    rec_.tta_ms = clock_;
    return std::move(rec_);
  }

 private:
  void user_wait(double ms) {
    rec_.timeline.push_back({"", clock_, clock_ + ms});
    clock_ += ms;
  }

  bool fail_draw(const std::string& node, const std::string& tool, int attempt, int submission, int restart) const {
    double p = failure_probability(spec_, tool);
    if (p <= 0) return false;
    return unit_uniform(mix_seed({cfg_.seed, fnv1a64(q_.id), fnv1a64(node), fnv1a64(tool),
                                  static_cast<std::uint64_t>(attempt), static_cast<std::uint64_t>(submission),
                                  static_cast<std::uint64_t>(restart)})) < p;
  }

  bool model_wrong(const std::string& model, int submission) const {
    if (spec_.model_error_scale <= 0 || model.empty()) return false;
    double cap = cfg_.catalog.find(model).capability;
    double u = unit_uniform(mix_seed({cfg_.seed, fnv1a64(q_.id), fnv1a64("model"), static_cast<std::uint64_t>(submission)}));
    return u < spec_.model_error_scale * (1.0 - cap);
  }

  QueryState submission_state(int s) const {
    QueryState st = state_;
    if (s > 0) st.user_query = q_.truth.explicit_query;
    return st;
  }

  bool centralized(int s) {
    EngineConfig ec;
    ec.parallel = cfg_.parallel;
    ec.repair = cfg_.repair;
    ec.use_memory = cfg_.use_memory;
    ec.seed = mix_seed({cfg_.seed, fnv1a64(q_.id), static_cast<std::uint64_t>(s)});
    Engine engine(cfg_.registry, cfg_.catalog, backend_for(q_, s > 0), ec);
    bool single = q_.state.attachments.size() <= 1;
    bool truncated = q_.truth.truncated && s == 0;
    EngineHooks hooks;
    hooks.fail = [this, s](const std::string& node, const std::string& tool, int attempt) {
      return fail_draw(node, tool, attempt, s, 0);
    };
    hooks.truncate = [truncated, single](const std::string& node, int attempt) {
      if (!truncated || attempt != 0) return false;
      return node == "invoke" || node == "synthesize" || node == "aggregate" ||
             (single && (node == "contextualize_0" || node == "align_0"));
    };
    engine.set_hooks(hooks);
    if (s == 0) {
      state_ = q_.state;
      memory_ = build_memory(q_, engine.embedder());
    }
    QueryState st = submission_state(s);
    bool informed = s > 0;
    double base = clock_;
    double shift = clock_;
    std::size_t seen = 0;
    TurnResult r;
    auto absorb = [&]() {
      std::vector<TraceEvent> fresh(r.trace.begin() + static_cast<std::ptrdiff_t>(seen), r.trace.end());
      auto iv = intervals_from_trace(fresh, shift);
      rec_.timeline.insert(rec_.timeline.end(), iv.begin(), iv.end());
      seen = r.trace.size();
      clock_ = shift + r.tta_ms;
    };
    try {
      r = engine.run(st, &memory_);
      absorb();
      for (int round = 0; r.status == TurnStatus::NeedsClarification && round < 3; ++round) {
        rec_.rework_user = true;
        informed = true;
        user_wait(cfg_.clarify_response_ms);
        shift = clock_ - r.tta_ms;
        r = engine.resume(st, &memory_, std::move(r), q_.truth.clarification);
        absorb();
      }
    } catch (const Error&) {
      rec_.cost += r.cost;
      state_ = st;
      return false;
    }
    (void)base;
    rec_.cost += r.cost;
    rec_.rework_internal += r.internal_rework + static_cast<int>(r.graph.repair_log.size());
    state_ = st;
    if (r.status != TurnStatus::Answered) return false;
    if (q_.truth.ambiguous && !informed) return false;
    if (r.flag != q_.truth.expected_flag) return false;
    if (!evidence_ok(r.graph, r.execution, q_)) return false;
    if (!q_.truth.referent_fact.empty() && !informed) {
      if (!r.referent || to_lower(r.referent->content).find(q_.truth.referent_fact) == std::string::npos) return false;
    }
    if (r.answer.render().empty() || r.verification.verdict == Verdict::Fail) return false;
    for (const auto& seg : r.answer.segments)
      if (seg.name != "context" && seg.text.empty()) return false;
    std::string model = r.routing ? r.routing->chosen_model
                                  : cfg_.catalog.weak_model(st.cost_knob, Subflag::General).model_name;
    return !model_wrong(model, s);
  }

  // Hierarchical and monolithic: a fixed sequential pipeline per flag, no
  // repair, no confidence checks, whole-query restart on failure.
  bool fixed(PolicyKind policy, int s) {
    if (s == 0) state_ = q_.state;
    QueryState st = submission_state(s);
    bool informed = s > 0;
    EngineConfig ec;
    ec.seed = mix_seed({cfg_.seed, fnv1a64(q_.id), static_cast<std::uint64_t>(s)});
    Engine engine(cfg_.registry, cfg_.catalog, backend_for(q_, s > 0), ec);
    int restart = 0;
    bool truncated = q_.truth.truncated && s == 0;
    std::string sink = policy == PolicyKind::Hierarchical ? "synthesize" : "answer";
    EngineHooks hooks;
    hooks.fail = [this, s, &restart](const std::string& node, const std::string& tool, int attempt) {
      return fail_draw(node, tool, attempt, s, restart);
    };
    hooks.truncate = [truncated, sink](const std::string& node, int attempt) {
      return truncated && attempt == 0 && node == sink;
    };
    engine.set_hooks(hooks);

    ExecutionFlag flag;
    ExecutionGraph g;
    try {
      flag = static_flag(st);
      g = policy == PolicyKind::Hierarchical ? hierarchical_graph(flag, st) : monolithic_graph(st);
    } catch (const Error&) {
      return false;
    }
    std::string context = short_term_context(q_);
    ExecuteOptions opts;
    opts.parallelism = 1;
    opts.repair = false;
    opts.repair_confidence = 0;
    for (; restart <= cfg_.max_restarts; ++restart) {
      ExecutionGraph run = g;
      opts.start_ms = clock_;
      ExecutionResult ex;
      bool failed = false;
      try {
        ex = engine.run_graph(st, run, context, opts);
      } catch (PipelineFailed& pf) {
        ex = std::move(pf.partial());
        failed = true;
      }
      for (const auto& a : ex.attempts) rec_.timeline.push_back({a.tool, a.start_ms, a.end_ms});
      clock_ += ex.total_latency_ms;
      rec_.cost += ex.total_cost;
      if (failed) continue;

      state_ = st;
      state_.session.turn_count += 1;
      if (flag != q_.truth.expected_flag) return false;
      if (q_.truth.ambiguous && !informed) return false;
      if (!evidence_ok(run, ex, q_)) return false;
      if (!q_.truth.referent_fact.empty() && !informed && q_.truth.referent_age >= kShortTermWindow) return false;
      const auto* out = ex.find(sink);
      if (!out || !out->output.contains("text") || out->output["text"].get<std::string>().empty()) return false;
      std::string model = policy == PolicyKind::Hierarchical
                              ? cfg_.catalog.strong_model(st.cost_knob).model_name
                              : cfg_.catalog.strong_model(CostKnob::ClosedSrc).model_name;
      return !model_wrong(model, s);
    }
    state_ = st;
    return false;
  }

  ExecutionFlag static_flag(const QueryState& st) const {
    std::set<Modality> mods;
    for (const auto& a : st.attachments) mods.insert(planning_modality(a));
    RuleFlagClassifier rules;
    return reconcile_flag(classify_flag(st.user_query, mods, rules).flag, mods);
  }

  GraphNode node(const std::string& id, const std::string& role, ToolId tool, json binding) const {
    GraphNode n;
    n.id = id;
    n.role = role;
    n.tool = tool;
    n.binding = std::move(binding);
    return n;
  }

  ToolId tool_for(const Requirement& r, const QueryState& st) const {
    return cfg_.registry.match_tools(r, &st).front();
  }

  static json task_binding(std::size_t idx, TaskKind kind, Modality m) {
    json params = json::object();
    if (kind == TaskKind::Ocr || kind == TaskKind::Transcribe) params["language"] = "auto";
    if (kind == TaskKind::DetectObjects && m == Modality::Video) params["frame_interval_s"] = "1";
    return {{"attachment", idx}, {"kind", std::string(to_string(kind))}, {"parameters", params}};
  }

  // Chains nodes in insertion order and feeds every extraction to `reader`.
  static void chain(ExecutionGraph& g, const std::vector<std::string>& order, const std::vector<std::string>& extra_to,
                    const std::string& reader) {
    for (std::size_t i = 1; i < order.size(); ++i) g.add_edge(order[i - 1], order[i]);
    for (const auto& e : extra_to)
      if (std::find(order.begin(), order.end(), e) + 1 != std::find(order.begin(), order.end(), reader))
        g.add_edge(e, reader);
  }

  ExecutionGraph hierarchical_graph(ExecutionFlag flag, const QueryState& st) const {
    using K = TaskKind;
    ExecutionGraph g;
    std::vector<std::string> order, extractions;
    auto add = [&](GraphNode n) {
      order.push_back(n.id);
      g.add_node(std::move(n));
    };
    add(node("complexity", "route", tool_for({{}, {"route"}, {}}, st), json::object()));
    add(node("memory", "retrieve", tool_for({{}, {"retrieve"}, {}}, st), json::object()));

    std::vector<std::size_t> idxs;
    for (std::size_t i = 0; i < st.attachments.size(); ++i) {
      auto m = planning_modality(st.attachments[i]);
      bool take = false;
      switch (flag) {
        case ExecutionFlag::Vision: take = m == Modality::Image; break;
        case ExecutionFlag::Document: take = m == Modality::Document; break;
        case ExecutionFlag::Audio: take = m == Modality::Audio; break;
        case ExecutionFlag::Video: take = m == Modality::Video; break;
        case ExecutionFlag::Complex:
          take = m == Modality::Image || m == Modality::Document || m == Modality::Audio || m == Modality::Video;
          break;
        default: break;
      }
      if (take) idxs.push_back(i);
    }
    for (auto i : idxs) {
      auto m = planning_modality(st.attachments[i]);
      std::vector<K> kinds;
      switch (m) {
        case Modality::Image: kinds = {K::DetectObjects, K::EmbedImage, K::Ocr}; break;
        case Modality::Document: kinds = {K::ParsePdf, K::ExtractTables, K::Ocr}; break;
        case Modality::Audio: kinds = {K::Transcribe}; break;
        case Modality::Video: kinds = {K::DetectObjects, K::Transcribe}; break;
        default: break;
      }
      std::vector<std::string> ids;
      for (auto k : kinds) {
        auto id = std::string(to_string(k)) + "_" + std::to_string(i);
        add(node(id, "perceive", tool_for({{m}, {task_tag(k)}, {}}, st), task_binding(i, k, m)));
        ids.push_back(id);
      }
      if (m == Modality::Video) {
        auto id = "align_" + std::to_string(i);
        add(node(id, "align", tool_for({{}, {"align"}, {}}, st), {{"tolerance_s", kDefaultAlignToleranceS}}));
        for (const auto& p : ids)
          if (p != ids.back()) g.add_edge(p, id);
        ids.push_back(id);
      }
      extractions.insert(extractions.end(), ids.begin(), ids.end());
    }
    if (flag == ExecutionFlag::Imagen) {
      add(node("generate", "generate", tool_for({{Modality::Text}, {"generate_image"}, {}}, st), {{"prompt", st.user_query}}));
      extractions.push_back("generate");
    }
    Requirement llm{{Modality::Text}, {"answer"}, st.cost_knob};
    add(node("answer", "invoke", tool_for(llm, st), {{"model", cfg_.catalog.strong_model(st.cost_knob).model_name}}));
    add(node("synthesize", "synthesize", tool_for({{}, {"synthesize"}, {}}, st), {{"branches", 1}}));
    chain(g, order, extractions, "answer");
    g.validate();
    return g;
  }

  // One strong model for everything; it reads media through its own vision
  // and speech front ends.
  ExecutionGraph monolithic_graph(const QueryState& st) const {
    ExecutionGraph g;
    std::vector<std::string> order, extractions;
    auto add = [&](GraphNode n) {
      order.push_back(n.id);
      g.add_node(std::move(n));
    };
    add(node("memory", "retrieve", tool_for({{}, {"retrieve"}, {}}, st), json::object()));
    auto vision = cfg_.registry.id_of("vision-qa");
    auto speech = cfg_.registry.id_of("whisper-transcribe");
    for (std::size_t i = 0; i < st.attachments.size(); ++i) {
      const auto& a = st.attachments[i];
      auto m = planning_modality(a);
      auto sfx = "_" + std::to_string(i);
      auto kind = [&](Modality mm) {
        try {
          return parse_intent(st.user_query, mm, a, q_.fixtures.count(a.display_name()) &&
                                                         q_.fixtures.at(a.display_name()).value("scanned", false))
              .kind;
        } catch (const AmbiguousIntent&) {
          return mm == Modality::Image ? TaskKind::DetectObjects : TaskKind::ParsePdf;
        }
      };
      if (m == Modality::Image || m == Modality::Document) {
        auto k = kind(m);
        add(node(std::string(to_string(k)) + sfx, "perceive", vision, task_binding(i, k, m)));
        extractions.push_back(order.back());
      } else if (m == Modality::Video) {
        add(node("detect_objects" + sfx, "perceive", vision, task_binding(i, TaskKind::DetectObjects, m)));
        extractions.push_back(order.back());
        add(node("transcribe" + sfx, "perceive", speech, task_binding(i, TaskKind::Transcribe, m)));
        extractions.push_back(order.back());
      } else if (m == Modality::Audio) {
        add(node("transcribe" + sfx, "perceive", speech, task_binding(i, TaskKind::Transcribe, m)));
        extractions.push_back(order.back());
      }
    }
    const auto& strong = cfg_.catalog.strong_model(CostKnob::ClosedSrc);
    Requirement llm{{Modality::Text}, {"answer"}, CostKnob::ClosedSrc};
    add(node("answer", "invoke", tool_for(llm, st), {{"model", strong.model_name}}));
    chain(g, order, extractions, "answer");
    g.validate();
    return g;
  }

  const WorkloadQuery& q_;
  const WorkloadSpec& spec_;
  const HarnessConfig& cfg_;
  QueryRecord rec_;
  QueryState state_;
  MemoryStore memory_;
  double clock_ = 0;
};

// Interval j waits for every interval that ended before it began on the
// query's own timeline, keeping the original gap.
struct ReplayQuery {
  std::vector<Interval> iv;
  std::vector<std::vector<std::size_t>> preds, succs;
};

ReplayQuery replay_shape(const QueryRecord& q) {
  ReplayQuery r;
  r.iv = q.timeline;
  std::stable_sort(r.iv.begin(), r.iv.end(), [](const Interval& a, const Interval& b) { return a.start_ms < b.start_ms; });
  auto n = r.iv.size();
  r.preds.assign(n, {});
  r.succs.assign(n, {});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i)
      if (i != j && r.iv[i].end_ms <= r.iv[j].start_ms + 1e-9) {
        r.preds[j].push_back(i);
        r.succs[i].push_back(j);
      }
  return r;
}

}  // namespace

std::string_view to_string(PolicyKind p) {
  switch (p) {
    case PolicyKind::Centralized: return "centralized";
    case PolicyKind::Hierarchical: return "hierarchical";
    case PolicyKind::Monolithic: return "monolithic";
  }
  return "centralized";
}

std::optional<PolicyKind> parse_policy(std::string_view s) {
  for (auto p : {PolicyKind::Centralized, PolicyKind::Hierarchical, PolicyKind::Monolithic})
    if (to_string(p) == s) return p;
  return std::nullopt;
}

json to_json(const HarnessConfig& c) {
  return {{"seed", c.seed},
          {"clarify_response_ms", c.clarify_response_ms},
          {"reformulation_ms", c.reformulation_ms},
          {"max_submissions", c.max_submissions},
          {"max_restarts", c.max_restarts},
          {"sessions", c.sessions},
          {"parallel", c.parallel},
          {"use_memory", c.use_memory},
          {"repair", c.repair}};
}

double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) return 0;
  std::sort(xs.begin(), xs.end());
  double pos = q * double(xs.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  auto hi = std::min(lo + 1, xs.size() - 1);
  double frac = pos - double(lo);
  return xs[lo] + (xs[hi] - xs[lo]) * frac;
}

double replay_throughput(const std::vector<QueryRecord>& queries, const ToolRegistry& registry, std::size_t sessions) {
  if (queries.empty()) return 0;
  sessions = std::max<std::size_t>(1, std::min(sessions, queries.size()));
  std::vector<ReplayQuery> shapes;
  shapes.reserve(queries.size());
  for (const auto& q : queries) shapes.push_back(replay_shape(q));

  // Slots per tool; unbounded tools and user time never queue.
  std::map<std::string, std::vector<double>> slots;
  auto slot_for = [&](const std::string& tool) -> std::vector<double>* {
    if (tool.empty()) return nullptr;
    auto it = slots.find(tool);
    if (it == slots.end()) {
      unsigned cap = 0;
      if (auto id = registry.find(tool)) cap = registry.spec(*id).max_concurrency;
      it = slots.emplace(tool, std::vector<double>(cap, 0.0)).first;
    }
    return it->second.empty() ? nullptr : &it->second;
  };

  struct Ready {
    double t;
    std::size_t q, j;
    bool operator>(const Ready& o) const { return std::tie(t, q, j) > std::tie(o.t, o.q, o.j); }
  };
  std::priority_queue<Ready, std::vector<Ready>, std::greater<>> heap;
  std::vector<std::vector<std::size_t>> waiting(queries.size());
  std::vector<std::vector<double>> ready_at(queries.size()), end_at(queries.size());
  std::vector<std::size_t> left(queries.size());
  std::vector<double> q_start(queries.size(), 0), q_end(queries.size(), 0);

  auto start_query = [&](std::size_t qi, double t) {
    const auto& s = shapes[qi];
    q_start[qi] = t;
    q_end[qi] = t;
    left[qi] = s.iv.size();
    waiting[qi].assign(s.iv.size(), 0);
    ready_at[qi].assign(s.iv.size(), 0);
    end_at[qi].assign(s.iv.size(), 0);
    for (std::size_t j = 0; j < s.iv.size(); ++j) {
      waiting[qi][j] = s.preds[j].size();
      ready_at[qi][j] = t + s.iv[j].start_ms;
      if (waiting[qi][j] == 0) heap.push({ready_at[qi][j], qi, j});
    }
    return s.iv.empty();
  };

  double makespan = 0;
  std::function<void(std::size_t, double)> next_in_session = [&](std::size_t qi, double t) {
    // Sessions take queries qi, qi + S, qi + 2S, ...
    for (std::size_t k = qi; k < queries.size(); k += sessions) {
      if (!start_query(k, t)) return;
      q_end[k] = t;
    }
  };
  for (std::size_t s = 0; s < sessions; ++s) next_in_session(s, 0);

  while (!heap.empty()) {
    auto r = heap.top();
    heap.pop();
    const auto& s = shapes[r.q];
    const auto& iv = s.iv[r.j];
    double dur = iv.end_ms - iv.start_ms;
    double start = r.t;
    if (auto* sl = slot_for(iv.tool)) {
      auto it = std::min_element(sl->begin(), sl->end());
      start = std::max(start, *it);
      *it = start + dur;
    }
    double end = start + dur;
    end_at[r.q][r.j] = end;
    q_end[r.q] = std::max(q_end[r.q], end);
    for (auto succ : s.succs[r.j]) {
      double gap = s.iv[succ].start_ms - iv.end_ms;
      ready_at[r.q][succ] = std::max(ready_at[r.q][succ], end + gap);
      if (--waiting[r.q][succ] == 0) heap.push({ready_at[r.q][succ], r.q, succ});
    }
    if (--left[r.q] == 0) {
      makespan = std::max(makespan, q_end[r.q]);
      if (r.q + sessions < queries.size()) next_in_session(r.q + sessions, q_end[r.q]);
    }
  }
  for (auto e : q_end) makespan = std::max(makespan, e);
  return makespan > 0 ? double(queries.size()) * 1000.0 / makespan : 0.0;
}

Aggregates aggregate(const std::vector<QueryRecord>& qs, const ToolRegistry& registry, std::size_t sessions) {
  Aggregates a;
  a.n = qs.size();
  if (qs.empty()) return a;
  std::vector<double> tta;
  double sum_tta = 0, rework = 0, internal = 0, correct = 0;
  std::int64_t micros = 0;
  for (const auto& q : qs) {
    tta.push_back(q.tta_ms);
    sum_tta += q.tta_ms;
    rework += q.rework_user ? 1 : 0;
    internal += q.rework_internal;
    correct += q.correct ? 1 : 0;
    micros += q.cost.micros();
  }
  double n = double(qs.size());
  a.median_tta_ms = quantile(tta, 0.5);
  a.tta_q1_ms = quantile(tta, 0.25);
  a.tta_q3_ms = quantile(tta, 0.75);
  a.mean_tta_ms = sum_tta / n;
  a.rework_rate = rework / n;
  a.internal_rework_mean = internal / n;
  a.mean_cost_usd = double(micros) / n / 1e6;
  a.accuracy = correct / n;
  a.throughput_qps = replay_throughput(qs, registry, sessions);
  return a;
}

MetricsReport run_policy(const Workload& w, PolicyKind policy, const HarnessConfig& cfg) {
  MetricsReport rep;
  rep.policy = policy;
  rep.workload_digest = w.digest();
  rep.seed = cfg.seed;
  rep.sessions = cfg.sessions;
  rep.queries.resize(w.queries.size());
  unsigned threads = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, w.queries.size())));
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  auto worker = [&]() {
    for (std::size_t i; (i = next.fetch_add(1)) < w.queries.size();) {
      try {
        rep.queries[i] = QueryRunner(w.queries[i], w.spec, cfg).run(policy);
      } catch (...) {
        std::lock_guard lk(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  rep.aggregates = aggregate(rep.queries, cfg.registry, cfg.sessions);
  return rep;
}

double throughput_run(const Workload& w, PolicyKind policy, std::size_t sessions, const HarnessConfig& cfg) {
  if (sessions < 1) throw std::invalid_argument("throughput_run needs at least one session");
  auto rep = run_policy(w, policy, cfg);
  return replay_throughput(rep.queries, cfg.registry, sessions);
}

json to_json(const MetricsReport& r) {
  json qs = json::array();
  for (const auto& q : r.queries) {
    json tl = json::array();
    for (const auto& iv : q.timeline) tl.push_back({iv.tool, iv.start_ms, iv.end_ms});
    qs.push_back({{"id", q.id},
                  {"category", to_string(q.category)},
                  {"tta_ms", q.tta_ms},
                  {"correct", q.correct},
                  {"rework_user", q.rework_user},
                  {"rework_internal", q.rework_internal},
                  {"cost_usd", q.cost.to_string()},
                  {"submissions", q.submissions},
                  {"timeline", tl}});
  }
  const auto& a = r.aggregates;
  return {{"policy", to_string(r.policy)},
          {"workload_digest", r.workload_digest},
          {"seed", r.seed},
          {"sessions", r.sessions},
          {"aggregates",
           {{"n", a.n},
            {"median_tta_ms", a.median_tta_ms},
            {"tta_q1_ms", a.tta_q1_ms},
            {"tta_q3_ms", a.tta_q3_ms},
            {"mean_tta_ms", a.mean_tta_ms},
            {"rework_rate", a.rework_rate},
            {"internal_rework_mean", a.internal_rework_mean},
            {"mean_cost_usd", a.mean_cost_usd},
            {"throughput_qps", a.throughput_qps},
            {"accuracy", a.accuracy}}},
          {"queries", qs}};
}

MetricsReport report_from_json(const json& j) {
  try {
    MetricsReport r;
    auto p = parse_policy(j.at("policy").get<std::string>());
    if (!p) throw InvalidWorkload("report: unknown policy");
    r.policy = *p;
    r.workload_digest = j.at("workload_digest").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.sessions = j.at("sessions").get<std::size_t>();
    for (const auto& qj : j.at("queries")) {
      QueryRecord q;
      q.id = qj.at("id").get<std::string>();
      auto c = parse_category(qj.at("category").get<std::string>());
      if (!c) throw InvalidWorkload("report: unknown category");
      q.category = *c;
      q.tta_ms = qj.at("tta_ms").get<double>();
      q.correct = qj.at("correct").get<bool>();
      q.rework_user = qj.at("rework_user").get<bool>();
      q.rework_internal = qj.at("rework_internal").get<int>();
      q.cost = Money::parse(qj.at("cost_usd").get<std::string>());
      q.submissions = qj.value("submissions", 1);
      for (const auto& iv : qj.value("timeline", json::array()))
        q.timeline.push_back({iv.at(0).get<std::string>(), iv.at(1).get<double>(), iv.at(2).get<double>()});
      r.queries.push_back(std::move(q));
    }
    const auto& a = j.at("aggregates");
    r.aggregates.n = a.at("n").get<std::size_t>();
    r.aggregates.median_tta_ms = a.at("median_tta_ms").get<double>();
    r.aggregates.tta_q1_ms = a.at("tta_q1_ms").get<double>();
    r.aggregates.tta_q3_ms = a.at("tta_q3_ms").get<double>();
    r.aggregates.mean_tta_ms = a.at("mean_tta_ms").get<double>();
    r.aggregates.rework_rate = a.at("rework_rate").get<double>();
    r.aggregates.internal_rework_mean = a.at("internal_rework_mean").get<double>();
    r.aggregates.mean_cost_usd = a.at("mean_cost_usd").get<double>();
    r.aggregates.throughput_qps = a.at("throughput_qps").get<double>();
    r.aggregates.accuracy = a.at("accuracy").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw InvalidWorkload(std::string("report: ") + e.what());
  }
}

std::string render_table(const MetricsReport& r) {
  const auto& a = r.aggregates;
  std::string s;
  s += "policy            " + std::string(to_string(r.policy)) + "\n";
  s += "queries           " + std::to_string(a.n) + "\n";
  s += "median TTA        " + fmt("%.0f ms", a.median_tta_ms) + fmt(" (IQR %.0f", a.tta_q1_ms) +
       fmt("-%.0f ms)", a.tta_q3_ms) + "\n";
  s += "mean TTA          " + fmt("%.0f ms", a.mean_tta_ms) + "\n";
  s += "user rework       " + fmt("%.1f%%", 100 * a.rework_rate) + "\n";
  s += "internal rework   " + fmt("%.3f per query", a.internal_rework_mean) + "\n";
  s += "mean cost         " + fmt("$%.6f", a.mean_cost_usd) + "\n";
  s += "throughput        " + fmt("%.2f q/s", a.throughput_qps) + " (" + std::to_string(r.sessions) + " sessions)\n";
  s += "accuracy          " + fmt("%.1f%%", 100 * a.accuracy) + "\n";
  return s;
}

DeltaReport compare(const MetricsReport& a, const MetricsReport& b) {
  if (a.workload_digest != b.workload_digest || a.queries.size() != b.queries.size())
    throw IncomparableReports("reports come from different workloads (" + a.workload_digest + " vs " +
                              b.workload_digest + ")");
  for (std::size_t i = 0; i < a.queries.size(); ++i)
    if (a.queries[i].id != b.queries[i].id)
      throw IncomparableReports("query " + std::to_string(i) + " differs: " + a.queries[i].id + " vs " +
                                b.queries[i].id);
  DeltaReport d;
  d.baseline = a.policy;
  d.candidate = b.policy;
  std::vector<double> red;
  for (std::size_t i = 0; i < a.queries.size(); ++i) {
    double ta = a.queries[i].tta_ms, tb = b.queries[i].tta_ms;
    red.push_back(ta > 0 ? (ta - tb) / ta : 0.0);
  }
  d.tta_reduction_median = quantile(red, 0.5);
  d.tta_reduction_q1 = quantile(red, 0.25);
  d.tta_reduction_q3 = quantile(red, 0.75);
  const auto &x = a.aggregates, &y = b.aggregates;
  d.rework_reduction = x.rework_rate > 0 ? (x.rework_rate - y.rework_rate) / x.rework_rate : 0.0;
  d.cost_reduction = x.mean_cost_usd > 0 ? (x.mean_cost_usd - y.mean_cost_usd) / x.mean_cost_usd : 0.0;
  d.throughput_ratio = x.throughput_qps > 0 ? y.throughput_qps / x.throughput_qps : 1.0;
  d.accuracy_baseline = x.accuracy;
  d.accuracy_candidate = y.accuracy;
  d.accuracy_delta = y.accuracy - x.accuracy;
  double na = double(std::max<std::size_t>(x.n, 1)), nb = double(std::max<std::size_t>(y.n, 1));
  double se = std::sqrt(x.accuracy * (1 - x.accuracy) / na + y.accuracy * (1 - y.accuracy) / nb);
  d.accuracy_ci_low = d.accuracy_delta - 1.96 * se;
  d.accuracy_ci_high = d.accuracy_delta + 1.96 * se;
  return d;
}

json to_json(const DeltaReport& d) {
  return {{"baseline", to_string(d.baseline)},
          {"candidate", to_string(d.candidate)},
          {"tta_reduction", {{"median", d.tta_reduction_median}, {"q1", d.tta_reduction_q1}, {"q3", d.tta_reduction_q3}}},
          {"rework_reduction", d.rework_reduction},
          {"cost_reduction", d.cost_reduction},
          {"throughput_ratio", d.throughput_ratio},
          {"accuracy",
           {{"baseline", d.accuracy_baseline},
            {"candidate", d.accuracy_candidate},
            {"delta", d.accuracy_delta},
            {"ci95", {d.accuracy_ci_low, d.accuracy_ci_high}}}}};
}

std::string render_table(const DeltaReport& d) {
  std::string s;
  s += std::string(to_string(d.candidate)) + " vs " + std::string(to_string(d.baseline)) + "\n";
  s += "TTA reduction     " + fmt("%.1f%%", 100 * d.tta_reduction_median) + fmt(" (IQR %.1f", 100 * d.tta_reduction_q1) +
       fmt("-%.1f%%)", 100 * d.tta_reduction_q3) + "\n";
  s += "rework reduction  " + fmt("%.1f%%", 100 * d.rework_reduction) + "\n";
  s += "cost reduction    " + fmt("%.1f%%", 100 * d.cost_reduction) + "\n";
  s += "throughput ratio  " + fmt("%.3f", d.throughput_ratio) + "\n";
  s += "accuracy delta    " + fmt("%+.2f pp", 100 * d.accuracy_delta) + fmt(" (95%% CI %+.2f", 100 * d.accuracy_ci_low) +
       fmt(" to %+.2f pp)", 100 * d.accuracy_ci_high) + "\n";
  return s;
}

std::string deltas_csv(const MetricsReport& a, const MetricsReport& b) {
  compare(a, b);
  std::string s = "id,category,tta_ms_" + std::string(to_string(a.policy)) + ",tta_ms_" + std::string(to_string(b.policy)) +
                  ",tta_reduction,cost_usd_" + std::string(to_string(a.policy)) + ",cost_usd_" +
                  std::string(to_string(b.policy)) + ",correct_a,correct_b,rework_a,rework_b\n";
  for (std::size_t i = 0; i < a.queries.size(); ++i) {
    const auto &x = a.queries[i], &y = b.queries[i];
    double red = x.tta_ms > 0 ? (x.tta_ms - y.tta_ms) / x.tta_ms : 0.0;
    s += x.id + "," + std::string(to_string(x.category)) + "," + fmt("%.3f", x.tta_ms) + "," + fmt("%.3f", y.tta_ms) +
         "," + fmt("%.6f", red) + "," + x.cost.to_string() + "," + y.cost.to_string() + "," +
         (x.correct ? "1" : "0") + "," + (y.correct ? "1" : "0") + "," + (x.rework_user ? "1" : "0") + "," +
         (y.rework_user ? "1" : "0") + "\n";
  }
  return s;
}

}  // namespace supervisor
