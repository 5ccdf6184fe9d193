#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "supervisor/cli.hpp"
#include "supervisor/decomposition.hpp"
#include "supervisor/harness.hpp"
#include "supervisor/memory.hpp"
#include "supervisor/routing.hpp"
#include "supervisor/workload.hpp"

namespace py = pybind11;
using namespace supervisor;
using nlohmann::json;

namespace {

template <class E, class F>
E parse_or_throw(const std::string& s, F parse, const char* what) {
  auto v = parse(s);
  if (!v) throw py::value_error(std::string("unknown ") + what + ": " + s);
  return *v;
}

Modality modality_of(const std::string& s) { return parse_or_throw<Modality>(s, parse_modality, "modality"); }

Workload workload_of(const std::string& text) {
  auto j = json::parse(text);
  if (j.contains("queries")) return workload_from_json(j);
  auto spec = workload_spec_from_json(j);
  return generate_workload(spec);
}

py::dict record_dict(const MemoryRecord& r) {
  py::dict d;
  d["record_id"] = r.record_id;
  d["content"] = r.content;
  d["modality"] = std::string(to_string(r.modality));
  d["turn_index"] = r.turn_index;
  return d;
}

class PyMemory {
 public:
  explicit PyMemory(std::size_t dim) : store_(dim), embedder_(dim) {}

  std::uint64_t add(const std::string& content, const std::string& modality, std::uint64_t turn) {
    return store_.add(content, modality_of(modality), turn, embedder_).record_id;
  }

  py::list retrieve(const std::string& query, const std::string& modality, std::size_t k,
                    std::optional<std::uint64_t> now_turn) {
    py::list out;
    for (const auto& r : store_.retrieve_relevant(embedder_.embed(query), modality_of(modality), k, now_turn))
      out.append(record_dict(r));
    return out;
  }

  py::list short_term() const {
    py::list out;
    for (const auto& r : store_.short_term()) out.append(record_dict(r));
    return out;
  }

  std::size_t size() const { return store_.size(); }
  std::string to_json() const { return store_.to_json().dump(); }

 private:
  MemoryStore store_;
  HashingEmbedder embedder_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Centralized multimodal supervisor: flag decomposition, routing, memory, scheduling and the harness.";

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args, const std::string& stdin_text) {
        std::istringstream in(stdin_text);
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, in, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), py::arg("stdin") = "", "Runs the supervisord command line; returns (exit code, stdout, stderr).");

  m.def(
      "classify",
      [](const std::string& query, const std::vector<std::string>& modalities) {
        std::set<Modality> mods;
        for (const auto& s : modalities) mods.insert(modality_of(s));
        RuleFlagClassifier rules;
        auto d = classify_flag(query, mods, rules);
        return py::make_tuple(std::string(to_string(d.flag)), std::string(to_string(reconcile_flag(d.flag, mods))));
      },
      py::arg("query"), py::arg("modalities") = std::vector<std::string>{},
      "Rule-based execution flag; returns (raw flag, flag after attachment reconciliation).");

  m.def(
      "detect_modality",
      [](const std::string& path) {
        FilesystemProber prober;
        return std::string(to_string(detect_modality(Attachment::path(path), prober)));
      },
      py::arg("path"));

  m.def(
      "route",
      [](const std::string& query, const std::string& tier) {
        auto d = route_strong_weak(query, default_catalog(),
                                   parse_or_throw<CostKnob>(tier, parse_cost_knob, "cost knob"));
        py::dict out;
        out["route"] = std::string(to_string(d.route));
        out["win_probability"] = d.win_probability;
        out["subflag"] = d.subflag ? py::cast(std::string(to_string(*d.subflag))) : py::none();
        out["model"] = d.chosen_model;
        return out;
      },
      py::arg("query"), py::arg("tier") = "closed_src");

  m.def(
      "token_cost",
      [](const std::string& price_per_mtok, std::uint64_t tokens) {
        return token_cost(Money::parse(price_per_mtok), tokens).to_string();
      },
      py::arg("price_per_mtok"), py::arg("tokens"), "USD string with six decimals.");

  m.def(
      "default_workload_spec", [] { return to_json(default_workload_spec()).dump(); },
      "Calibrated default workload spec as JSON text.");

  m.def(
      "generate_workload", [](const std::string& spec_json) { return to_json(workload_of(spec_json)).dump(); },
      py::arg("spec_json"));

  m.def(
      "run_policy",
      [](const std::string& workload_json, const std::string& policy, std::uint64_t seed, unsigned threads,
         std::size_t sessions, bool parallel, bool use_memory, bool repair) {
        auto w = workload_of(workload_json);
        HarnessConfig cfg;
        cfg.seed = seed;
        cfg.threads = threads;
        cfg.sessions = sessions;
        cfg.parallel = parallel;
        cfg.use_memory = use_memory;
        cfg.repair = repair;
        auto p = parse_or_throw<PolicyKind>(policy, parse_policy, "policy");
        py::gil_scoped_release release;
        return to_json(run_policy(w, p, cfg)).dump();
      },
      py::arg("workload_json"), py::arg("policy") = "centralized", py::arg("seed") = 1, py::arg("threads") = 0,
      py::arg("sessions") = 64, py::arg("parallel") = true, py::arg("use_memory") = true, py::arg("repair") = true,
      "Runs one policy over a workload (or a spec, generated first); returns the report as JSON text.");

  m.def(
      "compare",
      [](const std::string& baseline_json, const std::string& candidate_json) {
        return to_json(compare(report_from_json(json::parse(baseline_json)),
                               report_from_json(json::parse(candidate_json))))
            .dump();
      },
      py::arg("baseline_json"), py::arg("candidate_json"));

  py::class_<PyMemory>(m, "MemoryStore")
      .def(py::init<std::size_t>(), py::arg("dimension") = kDefaultEmbeddingDim)
      .def("add", &PyMemory::add, py::arg("content"), py::arg("modality") = "text", py::arg("turn") = 0)
      .def("retrieve", &PyMemory::retrieve, py::arg("query"), py::arg("modality") = "text",
           py::arg("k") = kDefaultRetrieveK, py::arg("now_turn") = py::none())
      .def("short_term", &PyMemory::short_term)
      .def("to_json", &PyMemory::to_json)
      .def("__len__", &PyMemory::size);
}
