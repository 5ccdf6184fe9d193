#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "supervisor/errors.hpp"
#include "supervisor/harness.hpp"

using namespace supervisor;

namespace {

WorkloadSpec only(Category c, std::size_t n, std::uint64_t seed = 3) {
  auto s = uniform_workload_spec(n, seed);
  for (auto& [k, v] : s.category_mix) v = k == c ? 1.0 : 0.0;
  return s;
}

HarnessConfig quick() {
  HarnessConfig c;
  c.threads = 2;
  c.sessions = 8;
  return c;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("degenerate audio mix") {
  auto w = generate_workload(only(Category::AudioTranscription, 10));
  REQUIRE(w.queries.size() == 10);
  for (auto& q : w.queries) {
    CHECK(q.truth.expected_flag == ExecutionFlag::Audio);
    REQUIRE(q.state.attachments.size() == 1);
    auto it = q.fixtures.find(q.state.attachments[0].display_name());
    REQUIRE(it != q.fixtures.end());
    CHECK(it->second.contains("transcript"));
  }
}

TEST_CASE("generation is deterministic") {
  auto spec = default_workload_spec();
  spec.total_queries = 300;
  auto a = generate_workload(spec), b = generate_workload(spec);
  CHECK(a.digest() == b.digest());
  CHECK(to_json(a) == to_json(b));
  spec.seed += 1;
  CHECK(generate_workload(spec).digest() != a.digest());
}

TEST_CASE("ambiguity rate matches within binomial tolerance") {
  auto spec = uniform_workload_spec(1000, 5);
  spec.ambiguity_rate = 0.1;
  auto w = generate_workload(spec);
  std::size_t n = 0;
  for (auto& q : w.queries) n += q.truth.ambiguous;
  // three standard deviations of Binomial(1000, 0.1)
  double tol = 3 * std::sqrt(1000 * 0.1 * 0.9);
  CHECK(std::abs(double(n) - 100.0) <= tol);
}

TEST_CASE("materialized workload JSON round-trips") {
  auto spec = default_workload_spec();
  spec.total_queries = 60;
  auto w = generate_workload(spec);
  auto j = to_json(w);
  auto back = workload_from_json(nlohmann::json::parse(j.dump()));
  CHECK(to_json(back) == j);
  CHECK(back.digest() == w.digest());
  auto cfg = quick();
  CHECK(to_json(run_policy(back, PolicyKind::Centralized, cfg)) == to_json(run_policy(w, PolicyKind::Centralized, cfg)));
}

TEST_CASE("spec validation") {
  auto s = uniform_workload_spec(10);
  s.category_mix[Category::GeneralQa] += 0.5;
  CHECK_THROWS_AS(validate(s), InvalidWorkload);
  s = uniform_workload_spec(0);
  CHECK_THROWS_AS(validate(s), InvalidWorkload);
  s = uniform_workload_spec(10);
  s.category_mix.erase(Category::VideoAnalysis);
  CHECK_THROWS_AS(validate(s), InvalidWorkload);
  s = uniform_workload_spec(10);
  s.failure_injection["*"] = 1.5;
  CHECK_THROWS_AS(validate(s), InvalidWorkload);
  CHECK_THROWS_AS(workload_spec_from_json(nlohmann::json{{"total_queries", "many"}}), InvalidWorkload);
  auto d = default_workload_spec();
  CHECK(to_json(workload_spec_from_json(to_json(d))) == to_json(d));
}

TEST_CASE("no failure sources means full accuracy for both policies") {
  auto w = generate_workload(uniform_workload_spec(150, 2));
  auto cfg = quick();
  auto c = run_policy(w, PolicyKind::Centralized, cfg);
  auto h = run_policy(w, PolicyKind::Hierarchical, cfg);
  CHECK(c.aggregates.accuracy == 1.0);
  CHECK(h.aggregates.accuracy == 1.0);
}

TEST_CASE("parallel branches: centralized is never slower on multi-document queries") {
  auto w = generate_workload(only(Category::ComplexOrchestration, 30));
  auto cfg = quick();
  auto c = run_policy(w, PolicyKind::Centralized, cfg);
  auto h = run_policy(w, PolicyKind::Hierarchical, cfg);
  for (std::size_t i = 0; i < w.queries.size(); ++i) {
    if (w.queries[i].state.attachments.size() < 2) continue;
    CHECK(c.queries[i].tta_ms < h.queries[i].tta_ms);
  }
}

TEST_CASE("forced OCR failure: local repair versus restart") {
  auto spec = only(Category::OcrExtraction, 1);
  spec.failure_injection["tesseract-ocr"] = 1.0;
  auto w = generate_workload(spec);
  auto cfg = quick();
  auto c = run_policy(w, PolicyKind::Centralized, cfg);
  auto h = run_policy(w, PolicyKind::Hierarchical, cfg);
  auto count = [](const QueryRecord& r, const std::string& tool) {
    std::size_t n = 0;
    for (auto& iv : r.timeline) n += iv.tool == tool;
    return n;
  };
  // centralized: one failed OCR attempt, then the substitute runs once
  CHECK(c.queries[0].correct);
  CHECK(c.queries[0].rework_internal >= 1);
  CHECK(count(c.queries[0], "tesseract-ocr") == 1);
  // hierarchical: the whole query restarts each time the OCR tool fails, and
  // the user submits again once the restarts run out
  CHECK_FALSE(h.queries[0].correct);
  CHECK(count(h.queries[0], "tesseract-ocr") == std::size_t((cfg.max_restarts + 1) * cfg.max_submissions));
  CHECK(count(h.queries[0], "") == std::size_t(cfg.max_submissions - 1));
  CHECK(h.queries[0].tta_ms > c.queries[0].tta_ms);
}

TEST_CASE("self comparison gives zero deltas") {
  auto spec = default_workload_spec();
  spec.total_queries = 120;
  auto w = generate_workload(spec);
  auto r = run_policy(w, PolicyKind::Centralized, quick());
  auto d = compare(r, r);
  CHECK(d.tta_reduction_median == 0);
  CHECK(d.rework_reduction == 0);
  CHECK(d.cost_reduction == 0);
  CHECK(d.throughput_ratio == 1);
  CHECK(d.accuracy_delta == 0);
}

TEST_CASE("different workloads are incomparable") {
  auto a = run_policy(generate_workload(uniform_workload_spec(20, 1)), PolicyKind::Centralized, quick());
  auto b = run_policy(generate_workload(uniform_workload_spec(20, 2)), PolicyKind::Centralized, quick());
  CHECK_THROWS_AS(compare(a, b), IncomparableReports);
}

TEST_CASE("reports are self-consistent, deterministic and round-trip") {
  auto spec = default_workload_spec();
  spec.total_queries = 100;
  auto w = generate_workload(spec);
  auto cfg = quick();
  auto r = run_policy(w, PolicyKind::Hierarchical, cfg);
  auto again = aggregate(r.queries, cfg.registry, r.sessions);
  CHECK(to_json(MetricsReport{r.policy, r.workload_digest, r.seed, r.sessions, r.queries, again}) == to_json(r));
  cfg.threads = 5;
  CHECK(to_json(run_policy(w, PolicyKind::Hierarchical, cfg)).dump() == to_json(r).dump());
  CHECK(to_json(report_from_json(to_json(r))) == to_json(r));
  CHECK_FALSE(render_table(r).empty());
  auto csv = deltas_csv(r, r);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 101);
}

TEST_CASE("single serial session runs at 1000 over mean TTA") {
  auto w = generate_workload(uniform_workload_spec(60, 4));
  auto cfg = quick();
  auto r = run_policy(w, PolicyKind::Centralized, cfg);
  double q = replay_throughput(r.queries, cfg.registry, 1);
  CHECK(q == doctest::Approx(1000.0 / r.aggregates.mean_tta_ms).epsilon(1e-9));
  CHECK(throughput_run(w, PolicyKind::Centralized, 1, cfg) == doctest::Approx(q).epsilon(1e-9));
}

TEST_CASE("more sessions below saturation raise throughput") {
  auto w = generate_workload(uniform_workload_spec(128, 6));
  auto cfg = quick();
  auto r = run_policy(w, PolicyKind::Centralized, cfg);
  double prev = 0;
  for (std::size_t s : {1, 2, 4, 8}) {
    double q = replay_throughput(r.queries, cfg.registry, s);
    CHECK(q > prev);
    prev = q;
  }
}

TEST_CASE("heavier failure injection never speeds up the hierarchical baseline") {
  double prev = 0;
  for (double p : {0.0, 0.05, 0.15}) {
    auto spec = uniform_workload_spec(120, 8);
    spec.failure_injection["*"] = p;
    auto r = run_policy(generate_workload(spec), PolicyKind::Hierarchical, quick());
    CHECK(r.aggregates.median_tta_ms >= prev);
    prev = r.aggregates.median_tta_ms;
  }
}

TEST_CASE("policies share one registry") {
  auto spec = default_workload_spec();
  spec.total_queries = 80;
  auto w = generate_workload(spec);
  auto cfg = quick();
  for (auto p : {PolicyKind::Centralized, PolicyKind::Hierarchical, PolicyKind::Monolithic}) {
    auto r = run_policy(w, p, cfg);
    for (auto& q : r.queries)
      for (auto& iv : q.timeline)
        if (!iv.tool.empty()) CHECK(cfg.registry.find(iv.tool).has_value());
  }
}

TEST_CASE("quantile interpolates") {
  CHECK(quantile({1, 2, 3, 4}, 0.5) == 2.5);
  CHECK(quantile({5}, 0.25) == 5);
  CHECK(quantile({4, 1, 3, 2}, 0.25) == doctest::Approx(1.75));
}

}  // TEST_SUITE
