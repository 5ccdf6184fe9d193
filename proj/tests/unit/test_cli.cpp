#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "supervisor/cli.hpp"
#include "supervisor/errors.hpp"
#include "supervisor/registry.hpp"
#include "supervisor/routing.hpp"
#include "supervisor/trace.hpp"
#include "supervisor/util.hpp"
#include "supervisor/workload.hpp"

using namespace supervisor;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kData = SUPERVISOR_DATA_DIR;
const std::string kCases = kData + "/case_studies";

struct Out {
  int code;
  std::string out, err;
};

Out cli(std::vector<std::string> args, const std::string& input = "") {
  std::istringstream in(input);
  std::ostringstream out, err;
  int code = run_cli(args, in, out, err);
  return {code, out.str(), err.str()};
}

std::string scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("supervisor_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

json parse_json(const std::string& s) {
  auto j = json::parse(s, nullptr, false);
  REQUIRE_FALSE(j.is_discarded());
  return j;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("hello takes the routellm path to a weak general model") {
  auto root = scratch("hello");
  auto r = cli({"run", "hello", "--store-root", root, "--json"});
  REQUIRE(r.code == exit_code::kOk);
  auto j = parse_json(r.out);
  CHECK(j["flag"] == "routellm");
  CHECK(j["routing"]["route"] == "weak");
  CHECK(j["routing"]["subflag"] == "general");
  CHECK(j["routing"]["model"] == default_catalog().weak_model(CostKnob::ClosedSrc, Subflag::General).model_name);
  CHECK(fs::exists(trace_path(root, j["session_id"])));
}

TEST_CASE("transcribe an mp3 on the couplet tier") {
  auto root = scratch("transcribe");
  auto r = cli({"run", "transcribe", "--attach", "a.mp3", "--knob", "trad_couplet", "--fixtures", kCases,
                "--store-root", root, "--json"});
  REQUIRE(r.code == exit_code::kOk);
  auto j = parse_json(r.out);
  CHECK(j["flag"] == "audio");
  CHECK(j["answer_text"].get<std::string>().find("call me back about the invoice") != std::string::npos);
}

TEST_CASE("handwriting pauses with exit 20 and resumes with the answer") {
  auto root = scratch("handwriting");
  auto r = cli({"run", "Analyze this document", "--attach", kCases + "/handwritten_notes.png", "--store-root", root,
                "--json"});
  REQUIRE(r.code == exit_code::kClarificationNeeded);
  auto j = parse_json(r.out);
  auto question = j["clarification"]["question"].get<std::string>();
  CHECK(question.find("handwritten") != std::string::npos);
  CHECK(question.find("What specific information are you looking for?") != std::string::npos);
  std::string sid = j["session_id"];
  auto r2 = cli({"run", "--session", sid, "--answer", "dates and names", "--store-root", root, "--json"});
  REQUIRE(r2.code == exit_code::kOk);
  auto j2 = parse_json(r2.out);
  auto text = j2["answer_text"].get<std::string>();
  CHECK(text.find("March 14, 2024") != std::string::npos);
  CHECK(text.find("Ana Rivera") != std::string::npos);
}

TEST_CASE("session keeps a five-turn window") {
  auto root = scratch("window");
  std::string input;
  for (int i = 1; i <= 6; ++i) input += "tell me fact number " + std::to_string(i) + "\n";
  input += ":memory\n:quit\n";
  auto r = cli({"session", "--store-root", root, "--json"}, input);
  REQUIRE(r.code == exit_code::kOk);
  json mem;
  std::istringstream lines(r.out);
  for (std::string line; std::getline(lines, line);) {
    auto j = json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.contains("short_term")) mem = j;
  }
  REQUIRE(mem.contains("short_term"));
  CHECK(mem["short_term"].size() == 5);
}

TEST_CASE("session answers the handwriting question inline") {
  auto root = scratch("session_hw");
  auto input = ":attach " + kCases + "/handwritten_notes.png\nAnalyze this document\ndates and names\n:quit\n";
  auto r = cli({"session", "--store-root", root}, input);
  REQUIRE(r.code == exit_code::kOk);
  CHECK(r.out.find("I notice this is handwritten") != std::string::npos);
  CHECK(r.out.find("Jordan Lee") != std::string::npos);
}

TEST_CASE("session cost after two weak turns is the sum of request fees") {
  auto root = scratch("cost");
  // zero-priced tools and a fee-only catalog, so each weak answer costs exactly its fee
  auto tools = default_registry().to_json();
  for (auto& t : tools) {
    t["cost"]["per_invocation_usd"] = "0";
    t["cost"]["per_mtok_usd"] = "0";
  }
  auto models = default_catalog().to_json();
  for (auto& m : models) {
    m["cost_per_mtok"] = "0";
    m["per_request_fee"] = "0.0015";
  }
  write_file_atomic(root + "/tools.json", tools.dump());
  write_file_atomic(root + "/models.json", models.dump());
  auto r = cli({"session", "--store-root", root, "--tools", root + "/tools.json", "--models", root + "/models.json",
                "--json"},
               "hello\nwhat is the capital of France\n:cost\n:quit\n");
  REQUIRE(r.code == exit_code::kOk);
  json cost;
  std::istringstream lines(r.out);
  for (std::string line; std::getline(lines, line);) {
    auto j = json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.contains("session_cost_usd")) cost = j;
  }
  REQUIRE(cost.contains("session_cost_usd"));
  // 2 x (0 $/MTok x tokens / 10^6 + $0.0015)
  CHECK(cost["session_cost_usd"] == "0.003000");
  CHECK(cost["turns"] == 2);
}

TEST_CASE("simulate compares policies and is reproducible") {
  auto dir = scratch("simulate");
  auto spec = default_workload_spec();
  spec.total_queries = 40;
  write_file_atomic(dir + "/spec.json", to_json(spec).dump());

  auto self = cli({"simulate", dir + "/spec.json", "--policies", "centralized,centralized", "--out", dir + "/self",
                   "--threads", "2", "--json"});
  REQUIRE(self.code == exit_code::kOk);
  auto delta = parse_json(read_file(dir + "/self/compare_1_centralized_vs_centralized.json"));
  CHECK(delta["tta_reduction"]["median"] == 0.0);
  CHECK(delta["cost_reduction"] == 0.0);
  CHECK(delta["throughput_ratio"] == 1.0);

  for (auto out : {"/a", "/b"}) {
    auto r = cli({"simulate", dir + "/spec.json", "--seed", "7", "--out", dir + out, "--threads", "2"});
    REQUIRE(r.code == exit_code::kOk);
  }
  std::size_t files = 0;
  for (auto& e : fs::directory_iterator(dir + "/a")) {
    ++files;
    auto other = fs::path(dir + "/b") / e.path().filename();
    REQUIRE(fs::exists(other));
    CHECK(read_file(e.path().string()) == read_file(other.string()));
  }
  CHECK(files >= 5);
  CHECK(fs::exists(dir + "/a/compare_1_centralized_vs_hierarchical.csv"));
}

TEST_CASE("bad spec exits 2 naming the field") {
  auto dir = scratch("badspec");
  write_file_atomic(dir + "/spec.json", R"({"total_queries": 10, "ambiguity_rate": 3})");
  auto r = cli({"simulate", dir + "/spec.json", "--out", dir + "/o"});
  CHECK(r.code == exit_code::kSchema);
  CHECK(r.err.find("ambiguity_rate") != std::string::npos);
}

TEST_CASE("inspect fresh, populated, unknown and corrupt sessions") {
  auto root = scratch("inspect");
  auto fresh = cli({"session", "--store-root", root, "--json"}, ":quit\n");
  REQUIRE(fresh.code == exit_code::kOk);
  std::string fresh_id;
  for (auto& e : fs::directory_iterator(root)) {
    auto name = e.path().filename().string();
    if (name.ends_with(".state.json")) fresh_id = name.substr(0, name.size() - 11);
  }
  REQUIRE_FALSE(fresh_id.empty());
  auto i1 = cli({"inspect", fresh_id, "--store-root", root, "--json"});
  REQUIRE(i1.code == exit_code::kOk);
  auto j1 = parse_json(i1.out);
  CHECK(j1["memory"]["short_term"].empty());
  CHECK(j1["memory"]["records"] == 0);

  auto run = cli({"run", "hello", "--store-root", root, "--json"});
  std::string sid = parse_json(run.out)["session_id"];
  auto i2 = cli({"inspect", sid, "--store-root", root, "--json"});
  REQUIRE(i2.code == exit_code::kOk);
  auto j2 = parse_json(i2.out);
  auto file = parse_jsonl(read_file(trace_path(root, sid)));
  CHECK(j2["trace"] == json(file));
  CHECK(j2["state"]["trace"].size() == file.size());

  CHECK(cli({"inspect", "0-0000000000000000", "--store-root", root}).code == exit_code::kUnknownSession);
  write_file_atomic(state_path(root, sid), "{\"version\": 1, \"sta");
  CHECK(cli({"inspect", sid, "--store-root", root}).code == exit_code::kCorruptState);
}

TEST_CASE("typed failures map to their exit codes") {
  auto root = scratch("codes");
  CHECK(cli({"run", "describe this image", "--attach", "https://unreachable.invalid/x.png", "--store-root", root})
            .code == exit_code::kUnreachableAttachment);
  CHECK(cli({"run", "hello", "--budget-usd", "0.000001", "--store-root", root}).code ==
        exit_code::kBudgetExceeded);
  ToolRegistry tiny;
  tiny.register_tool(default_registry().spec(default_registry().id_of("memory-retrieve")));
  write_file_atomic(root + "/tiny.json", tiny.to_json().dump());
  CHECK(cli({"run", "hello", "--tools", root + "/tiny.json", "--store-root", root}).code ==
        exit_code::kUnplannableQuery);
  CHECK(cli({"frobnicate"}).code == exit_code::kUsage);
}

TEST_CASE("tools and models list as JSON") {
  auto t = cli({"tools", "list", "--json"});
  REQUIRE(t.code == exit_code::kOk);
  CHECK(parse_json(t.out) == default_registry().to_json());
  auto m = cli({"--json", "models", "list"});
  REQUIRE(m.code == exit_code::kOk);
  CHECK(parse_json(m.out) == default_catalog().to_json());
}

TEST_CASE("config precedence: flags over env over file over defaults") {
  CliConfig d;
  auto f = apply_config_json(d, R"({"store_root": "from-file", "seed": 9, "budget_usd": "1.5", "parallelism": 3})");
  CHECK(f.store_root == "from-file");
  CHECK(f.seed == 9);
  CHECK(f.budget_usd == Money::parse("1.5"));
  CHECK(f.parallelism == 3);
  CHECK_THROWS_AS(apply_config_json(d, R"({"colour": "blue"})"), InvalidSpec);
  CHECK_THROWS_AS(apply_config_json(d, R"({"parallelism": 0})"), InvalidSpec);

  ::setenv("SUPERVISORD_STORE_ROOT", "from-env", 1);
  ::setenv("SUPERVISORD_BUDGET_USD", "2.25", 1);
  auto e = apply_env(f);
  CHECK(e.store_root == "from-env");
  CHECK(e.budget_usd == Money::parse("2.25"));
  ::unsetenv("SUPERVISORD_STORE_ROOT");
  ::unsetenv("SUPERVISORD_BUDGET_USD");

  // the flag wins over the environment
  auto root = scratch("precedence");
  ::setenv("SUPERVISORD_STORE_ROOT", (root + "/env").c_str(), 1);
  auto r = cli({"run", "hello", "--store-root", root + "/flag", "--json"});
  ::unsetenv("SUPERVISORD_STORE_ROOT");
  REQUIRE(r.code == exit_code::kOk);
  CHECK(fs::exists(root + "/flag"));
  CHECK_FALSE(fs::exists(root + "/env"));
}

}  // TEST_SUITE
