#include "supervisor/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "supervisor/engine.hpp"
#include "supervisor/errors.hpp"
#include "supervisor/harness.hpp"
#include "supervisor/trace.hpp"
#include "supervisor/util.hpp"

namespace supervisor {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string fmt_ms(double ms) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.0f ms", ms);
  return buf;
}

// Values given on the command line; unset ones fall through to env, config
// file and defaults in that order.
struct GlobalFlags {
  std::string config, store_root, tools, models, flag_rules, fixtures, backend, clock, budget;
  std::uint64_t seed = 0;
  std::size_t parallelism = 0;
  bool json_out = false;
  CLI::Option *o_store = nullptr, *o_tools = nullptr, *o_models = nullptr, *o_rules = nullptr, *o_fixtures = nullptr,
              *o_backend = nullptr, *o_clock = nullptr, *o_seed = nullptr, *o_budget = nullptr, *o_par = nullptr;
};

CliConfig resolve(const GlobalFlags& g) {
  CliConfig c;
  if (!g.config.empty()) c = apply_config_json(c, read_file(g.config));
  c = apply_env(c);
  if (g.o_store->count()) c.store_root = g.store_root;
  if (g.o_tools->count()) c.tools_path = g.tools;
  if (g.o_models->count()) c.models_path = g.models;
  if (g.o_rules->count()) c.flag_rules_path = g.flag_rules;
  if (g.o_fixtures->count()) c.fixtures_path = g.fixtures;
  if (g.o_backend->count()) c.backend = g.backend;
  if (g.o_clock->count()) c.clock_mode = *parse_clock_mode(g.clock);
  if (g.o_seed->count()) c.seed = g.seed;
  if (g.o_budget->count()) c.budget_usd = Money::parse(g.budget);
  if (g.o_par->count()) c.parallelism = g.parallelism;
  if (c.parallelism < 1) throw InvalidSpec("parallelism: must be at least 1");
  if (c.backend != "sim" && c.backend != "http") throw InvalidSpec("backend: expected sim or http");
  return c;
}

struct Runtime {
  CliConfig cfg;
  std::shared_ptr<SimulatedBackend> sim;
  std::unique_ptr<Engine> engine;
};

ToolRegistry load_registry(const CliConfig& c) {
  return c.tools_path.empty() ? default_registry() : ToolRegistry::load(c.tools_path);
}

ModelCatalog load_catalog(const CliConfig& c) {
  return c.models_path.empty() ? default_catalog() : ModelCatalog::load(c.models_path);
}

Runtime make_runtime(const CliConfig& c) {
  Runtime rt;
  rt.cfg = c;
  std::shared_ptr<Backend> backend;
  if (c.backend == "http") {
    backend = std::make_shared<HttpBackend>();
  } else {
    rt.sim = std::make_shared<SimulatedBackend>();
    if (!c.fixtures_path.empty()) rt.sim->load_fixture_dir(c.fixtures_path);
    backend = rt.sim;
  }
  EngineConfig ec;
  ec.clock = c.clock_mode;
  ec.parallelism = c.parallelism;
  ec.seed = c.seed;
  ec.budget = c.budget_usd;
  rt.engine = std::make_unique<Engine>(load_registry(c), load_catalog(c), backend, ec);
  if (c.flag_rules_path)
    rt.engine->set_flag_classifier(std::make_shared<RuleFlagClassifier>(RuleFlagClassifier::load(*c.flag_rules_path)));
  if (c.backend == "http") {
    rt.engine->set_prober(std::make_shared<HttpProber>());
    rt.engine->set_language(std::make_shared<HttpLanguageBackend>());
  }
  return rt;
}

// A local attachment may carry a `<stem>.json` fixture next to it.
void load_sidecars(Runtime& rt, const std::vector<Attachment>& atts) {
  if (!rt.sim) return;
  for (const auto& a : atts) {
    if (a.kind != Attachment::SourceKind::Path) continue;
    fs::path p(a.location);
    auto side = p.parent_path() / (p.stem().string() + ".json");
    if (side != p && fs::exists(side) && !rt.sim->has_fixture(p.stem().string()))
      rt.sim->add_fixture(p.stem().string(), json::parse(read_file(side.string())));
  }
}

Attachment parse_attachment(const std::string& s) {
  if (s.rfind("http://", 0) == 0 || s.rfind("https://", 0) == 0) return Attachment::url(s);
  return Attachment::path(s);
}

SessionMeta fresh_session(const CliConfig& c, bool seeded) {
  // Seeded runs get reproducible session ids.
  return new_session(system_clock_ms(), seeded ? seeded_entropy(c.seed) : system_entropy());
}

void persist(const CliConfig& c, const QueryState& st, const MemoryStore& mem, const std::vector<TraceEvent>& events) {
  fs::create_directories(c.store_root);
  save_state(c.store_root, st);
  save_memory(c.store_root, st.session.session_id, mem);
  append_trace(c.store_root, st.session.session_id, events);
}

void print_turn(std::ostream& out, const TurnResult& r, const QueryState& st, const CliConfig& c,
                const ToolRegistry& reg, bool as_json) {
  if (as_json) {
    json j = to_json(r, reg);
    j["session_id"] = st.session.session_id;
    j["session_cost_usd"] = st.session.cumulative_cost.to_string();
    j["trace_path"] = trace_path(c.store_root, st.session.session_id);
    out << j.dump(2) << "\n";
    return;
  }
  if (r.status == TurnStatus::NeedsClarification) {
    out << "? " << r.clarification->question << "\n";
    out << "session " << st.session.session_id << " (answer with --session " << st.session.session_id
        << " --answer \"...\")\n";
    return;
  }
  out << r.answer.render() << "\n";
  for (const auto& w : r.warnings) out << "warning: " << w << "\n";
  out << "flag " << to_string(r.flag);
  if (r.routing) out << "  model " << r.routing->chosen_model;
  out << "  cost $" << r.cost.to_string() << "  TTA " << fmt_ms(r.tta_ms) << "\n";
  out << "session " << st.session.session_id << "  total $" << st.session.cumulative_cost.to_string() << "\n";
  out << "trace " << trace_path(c.store_root, st.session.session_id) << "\n";
}

int turn_exit(const TurnResult& r) {
  if (r.status == TurnStatus::NeedsClarification) return exit_code::kClarificationNeeded;
  if (r.status == TurnStatus::Failed) return exit_code::kFailed;
  return exit_code::kOk;
}

struct RunArgs {
  std::string query, knob = "closed_src", session, answer;
  std::vector<std::string> attach;
};

int cmd_run(const CliConfig& c, const RunArgs& a, bool seeded, bool as_json, std::ostream& out) {
  auto rt = make_runtime(c);
  QueryState st;
  MemoryStore mem(rt.engine->embedder().dimension());
  if (!a.session.empty()) {
    st = load_state(c.store_root, a.session);
    mem = load_memory(c.store_root, a.session, rt.engine->embedder().dimension());
  } else {
    st.session = fresh_session(c, seeded);
  }
  if (!a.answer.empty()) {
    if (!st.clarify_question) throw InvalidState("session has no pending question to answer");
    st.set_clarify_response(a.answer);
    mem.add("User clarified: " + a.answer, Modality::Text, st.session.turn_count + 1, rt.engine->embedder(),
            st.session.created_at_ms);
  } else {
    if (a.query.empty()) throw InvalidState("a query is required unless --answer is given");
    auto knob = parse_cost_knob(a.knob);
    if (!knob) throw InvalidSpec("knob: expected open_src, closed_src or trad_couplet");
    st.user_query = a.query;
    st.cost_knob = *knob;
    st.attachments.clear();
    for (const auto& s : a.attach) st.attachments.push_back(parse_attachment(s));
    st.clarify_question.reset();
    st.clarify_response.reset();
  }
  load_sidecars(rt, st.attachments);
  auto r = rt.engine->run(st, &mem);
  persist(c, st, mem, r.trace);
  print_turn(out, r, st, c, rt.engine->registry(), as_json);
  return turn_exit(r);
}

void print_memory(std::ostream& out, const MemoryStore& mem) {
  auto st = mem.short_term();
  out << "short-term (" << st.size() << " of last " << kShortTermWindow << "):\n";
  for (const auto& r : st) out << "  [" << r.turn_index << "] " << r.content << "\n";
  auto rel = mem.relevant_cache();
  out << "relevant (" << rel.size() << "):\n";
  for (const auto& r : rel) out << "  [" << r.turn_index << "] " << r.content << "\n";
  if (auto cs = mem.compressed())
    out << "compressed: " << cs->text << "\n";
  else
    out << "compressed: (none)\n";
  out << "history: " << mem.size() << " records\n";
}

json memory_json(const MemoryStore& mem) {
  auto list = [](const std::vector<MemoryRecord>& rs) {
    json a = json::array();
    for (const auto& r : rs) a.push_back({{"turn", r.turn_index}, {"modality", to_string(r.modality)}, {"content", r.content}});
    return a;
  };
  json j = {{"short_term", list(mem.short_term())}, {"relevant", list(mem.relevant_cache())}, {"records", mem.size()}};
  j["compressed"] = mem.compressed() ? json(mem.compressed()->text) : json(nullptr);
  return j;
}

int cmd_session(const CliConfig& c, const std::string& session, const std::string& knob_s, bool seeded, bool as_json,
                std::istream& in, std::ostream& out) {
  auto rt = make_runtime(c);
  QueryState st;
  MemoryStore mem(rt.engine->embedder().dimension());
  if (!session.empty()) {
    st = load_state(c.store_root, session);
    mem = load_memory(c.store_root, session, rt.engine->embedder().dimension());
  } else {
    st.session = fresh_session(c, seeded);
  }
  auto knob = parse_cost_knob(knob_s);
  if (!knob) throw InvalidSpec("knob: expected open_src, closed_src or trad_couplet");
  std::vector<Attachment> pending;
  if (!as_json) out << "session " << st.session.session_id << " (:help for commands)\n";
  std::string line;
  auto prompt = [&] {
    if (!as_json) out << "> " << std::flush;
  };
  prompt();
  while (std::getline(in, line)) {
    if (line.empty()) {
      prompt();
      continue;
    }
    if (line == ":quit" || line == ":q") break;
    if (line == ":help") {
      out << ":attach <path|url>  :cost  :memory  :summary  :trace  :quit\n";
    } else if (line == ":cost") {
      if (as_json)
        out << json{{"session_cost_usd", st.session.cumulative_cost.to_string()}, {"turns", st.session.turn_count}}.dump()
            << "\n";
      else
        out << "$" << st.session.cumulative_cost.to_string() << " over " << st.session.turn_count << " turns\n";
    } else if (line == ":memory") {
      if (as_json)
        out << memory_json(mem).dump() << "\n";
      else
        print_memory(out, mem);
    } else if (line == ":summary") {
      auto o = maybe_compress(mem, whitespace_counter(), ExtractiveCompressor{}, true);
      save_memory(c.store_root, st.session.session_id, mem);
      if (as_json) {
        out << json{{"compressed", o.compressed}, {"history_tokens", o.history_tokens}, {"ratio", o.ratio}}.dump() << "\n";
      } else {
        char buf[96];
        std::snprintf(buf, sizeof buf, "compressed %zu tokens (ratio %.1f:1)", o.history_tokens, o.ratio);
        out << (o.compressed ? std::string(buf) : "nothing to compress") << "\n";
        if (o.warning) out << "warning: " << *o.warning << "\n";
      }
    } else if (line == ":trace") {
      out << render_trace(st.trace);
    } else if (line.rfind(":attach ", 0) == 0) {
      pending.push_back(parse_attachment(line.substr(8)));
      out << "attached " << pending.back().display_name() << "\n";
    } else if (line[0] == ':') {
      out << "unknown command " << line << "\n";
    } else {
      st.user_query = line;
      st.cost_knob = *knob;
      st.attachments = pending;
      pending.clear();
      st.clarify_question.reset();
      st.clarify_response.reset();
      load_sidecars(rt, st.attachments);
      std::vector<TraceEvent> events;
      try {
        auto r = rt.engine->run(st, &mem);
        events = r.trace;
        while (r.status == TurnStatus::NeedsClarification) {
          // Persist the paused turn so an interrupted session can resume.
          persist(c, st, mem, events);
          events.clear();
          print_turn(out, r, st, c, rt.engine->registry(), as_json);
          if (!as_json) out << "? " << std::flush;
          std::string answer;
          if (!std::getline(in, answer)) return exit_code::kClarificationNeeded;
          auto before = r.trace.size();
          r = rt.engine->resume(st, &mem, std::move(r), answer);
          events.assign(r.trace.begin() + static_cast<std::ptrdiff_t>(std::min(before, r.trace.size())), r.trace.end());
        }
        persist(c, st, mem, events);
        print_turn(out, r, st, c, rt.engine->registry(), as_json);
      } catch (const UnreachableAttachment& e) {
        out << "error: " << e.what() << "\n";
      } catch (const UnplannableQuery& e) {
        out << "error: " << e.what() << "\n";
      } catch (const BudgetExceeded& e) {
        out << "error: " << e.what() << "\n";
      }
    }
    prompt();
  }
  save_state(c.store_root, st);
  save_memory(c.store_root, st.session.session_id, mem);
  return exit_code::kOk;
}

struct SimArgs {
  std::string spec_path, policies = "centralized,hierarchical", out_dir = "simulation";
  std::size_t sessions = 64;
  unsigned threads = 0;
  bool no_parallel = false, no_memory = false, no_repair = false;
};

int cmd_simulate(const CliConfig& c, const SimArgs& a, bool seeded, bool as_json, std::ostream& out) {
  json j;
  try {
    j = json::parse(read_file(a.spec_path));
  } catch (const json::parse_error& e) {
    throw InvalidWorkload(std::string("spec: not valid JSON: ") + e.what());
  }
  Workload w;
  if (j.contains("queries")) {
    w = workload_from_json(j);
  } else {
    auto spec = workload_spec_from_json(j);
    if (seeded) spec.seed = c.seed;
    w = generate_workload(spec);
  }
  std::vector<PolicyKind> policies;
  for (const auto& p : words(a.policies)) {
    auto k = parse_policy(p);
    if (!k) throw InvalidWorkload("policies: unknown policy " + p);
    policies.push_back(*k);
  }
  if (policies.empty()) throw InvalidWorkload("policies: none given");

  HarnessConfig hc;
  hc.registry = load_registry(c);
  hc.catalog = load_catalog(c);
  hc.seed = seeded ? c.seed : 1;
  hc.sessions = a.sessions;
  hc.threads = a.threads;
  hc.parallel = !a.no_parallel;
  hc.use_memory = !a.no_memory;
  hc.repair = !a.no_repair;

  fs::create_directories(a.out_dir);
  std::vector<MetricsReport> reports;
  json summary = {{"workload_digest", w.digest()}, {"reports", json::array()}, {"comparisons", json::array()}};
  for (std::size_t i = 0; i < policies.size(); ++i) {
    auto rep = run_policy(w, policies[i], hc);
    auto name = "report_" + std::to_string(i) + "_" + std::string(to_string(policies[i]));
    write_file_atomic((fs::path(a.out_dir) / (name + ".json")).string(), to_json(rep).dump(2) + "\n");
    write_file_atomic((fs::path(a.out_dir) / (name + ".txt")).string(), render_table(rep));
    summary["reports"].push_back({{"file", name + ".json"}, {"policy", to_string(policies[i])},
                                  {"aggregates", to_json(rep)["aggregates"]}});
    if (!as_json) out << render_table(rep) << "\n";
    reports.push_back(std::move(rep));
  }
  // The first policy is the candidate; each later one is a baseline.
  for (std::size_t i = 1; i < reports.size(); ++i) {
    auto d = compare(reports[i], reports[0]);
    auto name = "compare_" + std::to_string(i) + "_" + std::string(to_string(reports[0].policy)) + "_vs_" +
                std::string(to_string(reports[i].policy));
    write_file_atomic((fs::path(a.out_dir) / (name + ".json")).string(), to_json(d).dump(2) + "\n");
    write_file_atomic((fs::path(a.out_dir) / (name + ".txt")).string(), render_table(d));
    write_file_atomic((fs::path(a.out_dir) / (name + ".csv")).string(), deltas_csv(reports[i], reports[0]));
    summary["comparisons"].push_back(to_json(d));
    if (!as_json) out << render_table(d) << "\n";
  }
  if (as_json) out << summary.dump(2) << "\n";
  return exit_code::kOk;
}

int cmd_inspect(const CliConfig& c, const std::string& id, bool as_json, std::ostream& out) {
  auto st = load_state(c.store_root, id);
  auto mem = load_memory(c.store_root, id);
  std::vector<json> trace;
  auto tp = trace_path(c.store_root, id);
  if (fs::exists(tp)) trace = parse_jsonl(read_file(tp));
  if (as_json) {
    out << json{{"state", to_json(st)}, {"memory", memory_json(mem)}, {"trace", trace}}.dump(2) << "\n";
    return exit_code::kOk;
  }
  out << "session   " << st.session.session_id << "\n";
  out << "turns     " << st.session.turn_count << "\n";
  out << "cost      $" << st.session.cumulative_cost.to_string() << "\n";
  out << "knob      " << to_string(st.cost_knob) << "\n";
  out << "query     " << st.user_query << "\n";
  if (st.flag) out << "flag      " << to_string(*st.flag) << "\n";
  if (st.clarify_question) out << "pending   " << *st.clarify_question << "\n";
  for (const auto& a : st.attachments) out << "attach    " << a.display_name() << "\n";
  out << "\n";
  print_memory(out, mem);
  out << "\ntrace (" << st.trace.size() << " events, " << trace.size() << " lines in " << tp << ")\n";
  out << render_trace(st.trace);
  return exit_code::kOk;
}

int cmd_tools(const CliConfig& c, bool as_json, std::ostream& out) {
  auto reg = load_registry(c);
  if (as_json) {
    out << reg.to_json().dump(2) << "\n";
    return exit_code::kOk;
  }
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-30s %-18s %-26s %s\n", "name", "category", "latency ms", "outputs");
  out << buf;
  for (auto id : reg.ids()) {
    const auto& s = reg.spec(id);
    std::vector<std::string> tags(s.output_tags.begin(), s.output_tags.end());
    std::snprintf(buf, sizeof buf, "%-30s %-18s %8.0f-%-17.0f %s\n", s.name.c_str(),
                  std::string(to_string(s.category)).c_str(), s.latency.min_ms, s.latency.max_ms,
                  join(tags, ",").c_str());
    out << buf;
  }
  return exit_code::kOk;
}

int cmd_models(const CliConfig& c, bool as_json, std::ostream& out) {
  auto cat = load_catalog(c);
  if (as_json) {
    out << cat.to_json().dump(2) << "\n";
    return exit_code::kOk;
  }
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-28s %-13s %-24s %12s %10s\n", "model", "tier", "subflag", "$/MTok", "capability");
  out << buf;
  for (const auto& e : cat.entries()) {
    std::string sub = e.subflag_affinity ? std::string(to_string(*e.subflag_affinity)) : "strong";
    std::snprintf(buf, sizeof buf, "%-28s %-13s %-24s %12s %10.2f\n", e.model_name.c_str(),
                  std::string(to_string(e.tier)).c_str(), sub.c_str(), e.cost_per_mtok.to_string().c_str(),
                  e.capability);
    out << buf;
  }
  return exit_code::kOk;
}

int report_error(std::ostream& err, std::ostream& out, bool as_json, const char* kind, const std::exception& e,
                 int code) {
  if (as_json) out << json{{"error", kind}, {"message", e.what()}, {"exit_code", code}}.dump() << "\n";
  err << "supervisord: " << kind << ": " << e.what() << "\n";
  return code;
}

}  // namespace

CliConfig apply_config_json(CliConfig c, const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw InvalidSpec("config: expected a JSON object");
  auto str = [&](const char* key) {
    if (!j[key].is_string()) throw InvalidSpec(std::string("config.") + key + ": expected a string");
    return j[key].get<std::string>();
  };
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k == "store_root") c.store_root = str("store_root");
    else if (k == "tools") c.tools_path = str("tools");
    else if (k == "models") c.models_path = str("models");
    else if (k == "flag_rules") c.flag_rules_path = str("flag_rules");
    else if (k == "fixtures") c.fixtures_path = str("fixtures");
    else if (k == "backend") c.backend = str("backend");
    else if (k == "clock") {
      auto m = parse_clock_mode(str("clock"));
      if (!m) throw InvalidSpec("config.clock: expected virtual or wall");
      c.clock_mode = *m;
    } else if (k == "seed") {
      if (!it->is_number_unsigned()) throw InvalidSpec("config.seed: expected a non-negative integer");
      c.seed = it->get<std::uint64_t>();
    } else if (k == "budget_usd") {
      c.budget_usd = it->is_string() ? Money::parse(it->get<std::string>()) : Money::from_usd(it->get<double>());
    } else if (k == "parallelism") {
      if (!it->is_number_unsigned() || it->get<std::size_t>() < 1)
        throw InvalidSpec("config.parallelism: expected a positive integer");
      c.parallelism = it->get<std::size_t>();
    } else {
      throw InvalidSpec("config." + k + ": unknown key");
    }
  }
  return c;
}

CliConfig apply_env(CliConfig c) {
  if (const char* v = std::getenv("SUPERVISORD_STORE_ROOT"); v && *v) c.store_root = v;
  if (const char* v = std::getenv("SUPERVISORD_BUDGET_USD"); v && *v) c.budget_usd = Money::parse(v);
  return c;
}

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal query supervisor", "supervisord"};
  app.require_subcommand(1);
  // Global flags may follow the subcommand.
  app.fallthrough();
  GlobalFlags g;
  app.add_option("--config", g.config, "JSON config file")->check(CLI::ExistingFile);
  g.o_store = app.add_option("--store-root", g.store_root, "Directory for session state, memory and traces");
  g.o_tools = app.add_option("--tools", g.tools, "Tool catalog JSON")->check(CLI::ExistingFile);
  g.o_models = app.add_option("--models", g.models, "Model catalog JSON")->check(CLI::ExistingFile);
  g.o_rules = app.add_option("--flag-rules", g.flag_rules, "Flag rule table JSON")->check(CLI::ExistingFile);
  g.o_fixtures = app.add_option("--fixtures", g.fixtures, "Directory of simulated backend fixtures")
                     ->check(CLI::ExistingDirectory);
  g.o_backend = app.add_option("--backend", g.backend, "sim or http");
  g.o_seed = app.add_option("--seed", g.seed, "Seed for simulation and session ids");
  g.o_clock = app.add_option("--clock", g.clock, "virtual or wall")->check(CLI::IsMember({"virtual", "wall"}));
  g.o_budget = app.add_option("--budget-usd", g.budget, "Session budget cap in USD");
  g.o_par = app.add_option("--parallelism", g.parallelism, "Concurrent nodes per turn");
  app.add_flag("--json", g.json_out, "Machine-readable output");

  RunArgs ra;
  auto* run = app.add_subcommand("run", "Answer one query");
  run->add_option("query", ra.query, "Query text");
  run->add_option("--attach,-a", ra.attach, "Attachment path or URL (repeatable)");
  run->add_option("--knob", ra.knob, "open_src, closed_src or trad_couplet");
  run->add_option("--session", ra.session, "Continue an existing session");
  run->add_option("--answer", ra.answer, "Answer to the session's pending question");

  std::string sess_id, sess_knob = "closed_src";
  auto* session = app.add_subcommand("session", "Interactive session");
  session->add_option("--session", sess_id, "Resume a session");
  session->add_option("--knob", sess_knob, "open_src, closed_src or trad_couplet");

  SimArgs sa;
  auto* sim = app.add_subcommand("simulate", "Run policies over a workload and compare them");
  sim->add_option("spec", sa.spec_path, "Workload spec or materialized workload JSON")->required()->check(CLI::ExistingFile);
  sim->add_option("--policies", sa.policies, "Comma-separated; the first is compared against each later one");
  sim->add_option("--out", sa.out_dir, "Output directory for reports");
  sim->add_option("--sessions", sa.sessions, "Concurrent sessions for throughput")->check(CLI::PositiveNumber);
  sim->add_option("--threads", sa.threads, "Worker threads (0 = all cores)");
  sim->add_flag("--no-parallel", sa.no_parallel, "Centralized ablation: sequential nodes");
  sim->add_flag("--no-memory", sa.no_memory, "Centralized ablation: no memory retrieval");
  sim->add_flag("--no-repair", sa.no_repair, "Centralized ablation: no local repair");

  std::string inspect_id;
  auto* inspect = app.add_subcommand("inspect", "Print a session's state, memory and trace");
  inspect->add_option("session", inspect_id, "Session id")->required();

  auto* tools = app.add_subcommand("tools", "Tool catalog");
  tools->require_subcommand(1);
  tools->fallthrough();
  auto* tools_list = tools->add_subcommand("list", "List registered tools");
  auto* models = app.add_subcommand("models", "Model catalog");
  models->require_subcommand(1);
  models->fallthrough();
  auto* models_list = models->add_subcommand("list", "List catalog models");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return exit_code::kOk;
    }
    err << "supervisord: " << e.what() << "\n" << "run with --help for usage\n";
    return exit_code::kUsage;
  }
  (void)tools_list;
  (void)models_list;

  bool as_json = g.json_out;
  try {
    auto cfg = resolve(g);
    bool seeded = g.o_seed->count() > 0;
    if (run->parsed()) return cmd_run(cfg, ra, seeded, as_json, out);
    if (session->parsed()) return cmd_session(cfg, sess_id, sess_knob, seeded, as_json, in, out);
    if (sim->parsed()) return cmd_simulate(cfg, sa, seeded, as_json, out);
    if (inspect->parsed()) return cmd_inspect(cfg, inspect_id, as_json, out);
    if (tools->parsed()) return cmd_tools(cfg, as_json, out);
    if (models->parsed()) return cmd_models(cfg, as_json, out);
  } catch (const UnreachableAttachment& e) {
    return report_error(err, out, as_json, "UnreachableAttachment", e, exit_code::kUnreachableAttachment);
  } catch (const UnplannableQuery& e) {
    return report_error(err, out, as_json, "UnplannableQuery", e, exit_code::kUnplannableQuery);
  } catch (const BudgetExceeded& e) {
    return report_error(err, out, as_json, "BudgetExceeded", e, exit_code::kBudgetExceeded);
  } catch (const UnknownSession& e) {
    return report_error(err, out, as_json, "UnknownSession", e, exit_code::kUnknownSession);
  } catch (const CorruptState& e) {
    return report_error(err, out, as_json, "CorruptState", e, exit_code::kCorruptState);
  } catch (const VersionMismatch& e) {
    return report_error(err, out, as_json, "VersionMismatch", e, exit_code::kCorruptState);
  } catch (const InvalidWorkload& e) {
    return report_error(err, out, as_json, "InvalidWorkload", e, exit_code::kSchema);
  } catch (const InvalidSpec& e) {
    return report_error(err, out, as_json, "InvalidSpec", e, exit_code::kSchema);
  } catch (const Error& e) {
    return report_error(err, out, as_json, "Error", e, exit_code::kUsage);
  } catch (const json::exception& e) {
    return report_error(err, out, as_json, "InvalidJson", e, exit_code::kSchema);
  } catch (const std::exception& e) {
    return report_error(err, out, as_json, "Error", e, exit_code::kUsage);
  }
  return exit_code::kUsage;
}

}  // namespace supervisor
