#include "supervisor/planner.hpp"

#include <algorithm>
#include <regex>

#include "supervisor/decomposition.hpp"
#include "supervisor/errors.hpp"
#include "supervisor/util.hpp"

namespace supervisor {

namespace {

constexpr std::size_t kMaxSubtasks = 6;

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  while (!s.empty() && (s.back() == '.' || s.back() == ',')) s.pop_back();
  return s;
}

bool perceptual(Modality m) {
  return m == Modality::Image || m == Modality::Audio || m == Modality::Video || m == Modality::Document;
}

class Planner {
 public:
  Planner(const QueryState& st, const ToolRegistry& reg, const PlanContext& ctx)
      : st_(st), reg_(reg), ctx_(ctx), catalog_(ctx.catalog ? *ctx.catalog : fallback_catalog()) {}

  ExecutionGraph build(ExecutionFlag flag);

 private:
  static const ModelCatalog& fallback_catalog() {
    static const ModelCatalog c = default_catalog();
    return c;
  }

  std::string add(std::string id, std::string role, Requirement req, nlohmann::json binding,
                  std::optional<Requirement> fallback = std::nullopt) {
    GraphNode n;
    n.id = id;
    n.role = std::move(role);
    try {
      n.tool = reg_.match_tools(req, &st_).front();
    } catch (const NoCapableTool& e) {
      throw UnplannableQuery(e.unmet_requirement());
    }
    n.requirement = std::move(req);
    n.fallback = std::move(fallback);
    n.binding = std::move(binding);
    g_.add_node(std::move(n));
    return id;
  }

  Requirement llm(const std::string& output) const {
    Requirement r;
    r.inputs = {Modality::Text};
    r.outputs = {output};
    r.tier = st_.cost_knob;
    return r;
  }

  static Requirement produces(const std::string& tag) {
    Requirement r;
    r.outputs = {tag};
    return r;
  }

  std::string weak_general() const { return catalog_.weak_model(st_.cost_knob, Subflag::General).model_name; }

  bool scanned(const Attachment& a) const { return ctx_.backend && ctx_.backend->is_scanned(a.display_name()); }

  PerceptualTask intent(std::size_t idx, Modality m, bool lenient) const {
    const auto& a = st_.attachments[idx];
    try {
      return parse_intent(st_.user_query, m, a, scanned(a), ctx_.parser);
    } catch (const AmbiguousIntent&) {
      if (!lenient) throw;
      // Inside a larger plan a vague branch still gets the broad default.
      PerceptualTask t;
      t.source = a;
      t.attachment_id = a.display_name();
      t.kind = m == Modality::Image ? TaskKind::DetectObjects : TaskKind::ParsePdf;
      return t;
    }
  }

  nlohmann::json task_binding(std::size_t idx, PerceptualTask task) const {
    if (ctx_.focus && !ctx_.focus->empty()) task.parameters["focus"] = *ctx_.focus;
    validate_task(task);
    nlohmann::json params = nlohmann::json::object();
    for (const auto& [k, v] : task.parameters) params[k] = v;
    return {{"attachment", idx}, {"kind", std::string(to_string(task.kind))}, {"parameters", params}};
  }

  std::string perceive_node(const std::string& id, const std::string& role, std::size_t idx, Modality m,
                            const PerceptualTask& task) {
    Requirement req;
    req.inputs = {m};
    req.outputs = {task_tag(task.kind)};
    Requirement wide;
    wide.inputs = {m};
    wide.outputs = {evidence_tag(task.kind)};
    return add(id, role, req, task_binding(idx, task), wide);
  }

  // Returns {first node, last node} of one attachment's branch.
  std::pair<std::string, std::string> branch(std::size_t idx, bool lenient) {
    const auto& a = st_.attachments[idx];
    Modality m = planning_modality(a);
    auto sfx = "_" + std::to_string(idx);
    if (m == Modality::Video) {
      auto task = intent(idx, m, lenient);
      auto detect = perceive_node("detect" + sfx, "detect", idx, m, task);
      bool audio = !ctx_.backend || ctx_.backend->has_audio_track(a.display_name());
      if (!audio) {
        auto ctxz = add("contextualize" + sfx, "contextualize", llm("contextualize"), {{"model", weak_general()}});
        g_.add_edge(detect, ctxz);
        return {detect, ctxz};
      }
      PerceptualTask tr;
      tr.kind = TaskKind::Transcribe;
      tr.source = a;
      tr.attachment_id = a.display_name();
      tr.parameters["language"] = "auto";
      auto transcribe = perceive_node("transcribe" + sfx, "transcribe", idx, m, tr);
      auto align = add("align" + sfx, "align", produces("align"), {{"tolerance_s", kDefaultAlignToleranceS}},
                       produces("timeline"));
      g_.add_edge(detect, align);
      g_.add_edge(transcribe, align);
      // Two entry points; callers wire both.
      entry_extra_ = transcribe;
      return {detect, align};
    }
    auto task = intent(idx, m, lenient);
    auto perceive = perceive_node("perceive" + sfx, "perceive", idx, m, task);
    auto ctxz = add("contextualize" + sfx, "contextualize", llm("contextualize"), {{"model", weak_general()}});
    g_.add_edge(perceive, ctxz);
    return {perceive, ctxz};
  }

  std::vector<std::size_t> attachments_of(std::optional<Modality> only) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < st_.attachments.size(); ++i) {
      auto m = planning_modality(st_.attachments[i]);
      if (only ? m == *only : perceptual(m)) out.push_back(i);
    }
    return out;
  }

  void single_modality(Modality m) {
    auto idxs = attachments_of(m);
    if (idxs.empty()) throw UnplannableQuery("attachment of modality " + std::string(to_string(m)));
    std::vector<std::string> tails;
    for (auto i : idxs) tails.push_back(branch(i, ctx_.lenient_intent).second);
    if (tails.size() > 1) {
      auto synth = add("synthesize", "synthesize", produces("synthesize"), {{"branches", tails.size()}},
                       produces("synthesis"));
      for (const auto& t : tails) g_.add_edge(t, synth);
    }
  }

  std::string invoke_node(const std::string& id, const std::string& text) {
    RoutingDecision d = ctx_.routing && id == "invoke"
                            ? *ctx_.routing
                            : route_strong_weak(text, catalog_, st_.cost_knob, ctx_.router ? *ctx_.router : RouterConfig{});
    return add(id, "invoke", llm("answer"),
               {{"model", d.chosen_model},
                {"route", std::string(to_string(d.route))},
                {"subflag", d.subflag ? std::string(to_string(*d.subflag)) : "none"},
                {"subtask", text}});
  }

  const QueryState& st_;
  const ToolRegistry& reg_;
  const PlanContext& ctx_;
  const ModelCatalog& catalog_;
  ExecutionGraph g_;
  std::string entry_extra_;
};

ExecutionGraph Planner::build(ExecutionFlag flag) {
  switch (flag) {
    case ExecutionFlag::RouteLlm: {
      auto route = add("route", "route", produces("route"), {{"threshold", ctx_.router ? ctx_.router->threshold : kDefaultWinThreshold}},
                       produces("complexity"));
      auto inv = invoke_node("invoke", st_.user_query);
      g_.add_edge(route, inv);
      break;
    }
    case ExecutionFlag::Audio: single_modality(Modality::Audio); break;
    case ExecutionFlag::Vision: single_modality(Modality::Image); break;
    case ExecutionFlag::Document: single_modality(Modality::Document); break;
    case ExecutionFlag::Video: single_modality(Modality::Video); break;
    case ExecutionFlag::Imagen: {
      Requirement req;
      req.inputs = {Modality::Text};
      req.outputs = {"generate_image"};
      auto gen = add("generate", "generate", req, {{"prompt", st_.user_query}});
      auto ctxz = add("contextualize", "contextualize", llm("contextualize"), {{"model", weak_general()}});
      g_.add_edge(gen, ctxz);
      break;
    }
    case ExecutionFlag::Moe: {
      std::vector<std::string> names;
      for (const auto& e : catalog_.entries())
        if (e.tier == st_.cost_knob && e.subflag_affinity && *e.subflag_affinity != Subflag::General &&
            std::find(names.begin(), names.end(), e.model_name) == names.end())
          names.push_back(e.model_name);
      if (names.size() < ctx_.moe_models) {
        auto general = weak_general();
        if (std::find(names.begin(), names.end(), general) == names.end()) names.push_back(general);
      }
      if (names.size() < ctx_.moe_models) names.push_back(catalog_.strong_model(st_.cost_knob).model_name);
      names.resize(std::min(names.size(), std::max<std::size_t>(ctx_.moe_models, 1)));
      std::vector<std::string> ids;
      for (std::size_t i = 0; i < names.size(); ++i)
        ids.push_back(add("model_" + std::to_string(i), "model", llm("answer"), {{"model", names[i]}}));
      auto agg = add("aggregate", "aggregate", produces("aggregate"), {{"models", names.size()}},
                     produces("aggregate_answer"));
      for (const auto& id : ids) g_.add_edge(id, agg);
      break;
    }
    case ExecutionFlag::Complex: {
      auto idxs = attachments_of(std::nullopt);
      auto subtasks = split_subtasks(st_.user_query);
      auto dec = add("decompose", "decompose", produces("decompose"),
                     {{"subtasks", subtasks}, {"attachments", idxs.size()}}, produces("subtasks"));
      std::vector<std::string> tails;
      if (!idxs.empty()) {
        for (auto i : idxs) {
          entry_extra_.clear();
          auto [head, tail] = branch(i, true);
          g_.add_edge(dec, head);
          if (!entry_extra_.empty()) g_.add_edge(dec, entry_extra_);
          tails.push_back(tail);
        }
      } else {
        for (std::size_t i = 0; i < subtasks.size(); ++i) {
          auto id = invoke_node("subtask_" + std::to_string(i), subtasks[i]);
          g_.add_edge(dec, id);
          tails.push_back(id);
        }
      }
      auto synth = add("synthesize", "synthesize", produces("synthesize"), {{"branches", tails.size()}},
                       produces("synthesis"));
      for (const auto& t : tails) g_.add_edge(t, synth);
      break;
    }
  }
  g_.validate();
  return std::move(g_);
}

}  // namespace

std::vector<std::string> split_subtasks(const std::string& query) {
  static const std::regex sep(R"((?:\s*;\s*|,\s*and then\s+|,\s*then\s+|\s+and then\s+|,\s*and\s+|,\s*|\s+\(?[0-9]+[.)]\s+))",
                              std::regex::icase);
  std::vector<std::string> out;
  std::sregex_token_iterator it(query.begin(), query.end(), sep, -1), end;
  for (; it != end; ++it) {
    auto part = trim(it->str());
    if (whitespace_tokens(part) == 0) continue;
    // Fragments too short to stand alone belong to the previous clause.
    if (!out.empty() && whitespace_tokens(part) < 2) {
      out.back() += ", " + part;
      continue;
    }
    out.push_back(part);
  }
  if (out.empty()) out.push_back(trim(query));
  while (out.size() > kMaxSubtasks) {
    out[kMaxSubtasks - 1] += ", " + out.back();
    out.pop_back();
  }
  return out;
}

Modality planning_modality(const Attachment& a) {
  if (a.detected_modality) return *a.detected_modality;
  if (auto m = modality_from_extension(extension_of(a.display_name()))) return *m;
  return Modality::Unknown;
}

ExecutionGraph build_graph(ExecutionFlag flag, const QueryState& state, const ToolRegistry& registry,
                           const PlanContext& ctx) {
  if (auto m = required_modality(flag)) {
    bool present = std::any_of(state.attachments.begin(), state.attachments.end(),
                               [&](const Attachment& a) { return planning_modality(a) == *m; });
    if (!present) throw InvalidState("flag " + std::string(to_string(flag)) + " has no matching attachment");
  }
  return Planner(state, registry, ctx).build(flag);
}

}  // namespace supervisor
