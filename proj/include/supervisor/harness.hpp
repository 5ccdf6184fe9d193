#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "supervisor/money.hpp"
#include "supervisor/registry.hpp"
#include "supervisor/routing.hpp"
#include "supervisor/workload.hpp"

namespace supervisor {

enum class PolicyKind { Centralized, Hierarchical, Monolithic };
std::string_view to_string(PolicyKind p);
std::optional<PolicyKind> parse_policy(std::string_view s);

struct HarnessConfig {
  ToolRegistry registry = default_registry();
  ModelCatalog catalog = default_catalog();
  std::uint64_t seed = 1;
  // User time: answering a targeted question vs noticing a wrong answer and
  // writing the request again.
  double clarify_response_ms = 3000;
  double reformulation_ms = 15000;
  // Submissions per query, the first included.
  int max_submissions = 2;
  // Whole-query restarts for the fixed pipelines before giving up.
  int max_restarts = 3;
  // Concurrent sessions for the throughput replay stored in reports.
  std::size_t sessions = 64;
  // Centralized ablations.
  bool parallel = true;
  bool use_memory = true;
  bool repair = true;
  // Worker threads for run_policy; 0 = hardware concurrency. Results do not
  // depend on it.
  unsigned threads = 0;
};

nlohmann::json to_json(const HarnessConfig& c);

/// One tool occupancy on a query's own timeline. An empty tool is user time.
struct Interval {
  std::string tool;
  double start_ms = 0;
  double end_ms = 0;
};

struct QueryRecord {
  std::string id;
  Category category = Category::GeneralQa;
  double tta_ms = 0;
  bool correct = false;
  bool rework_user = false;
  int rework_internal = 0;
  Money cost;
  int submissions = 1;
  std::vector<Interval> timeline;
};

struct Aggregates {
  std::size_t n = 0;
  double median_tta_ms = 0;
  double tta_q1_ms = 0;
  double tta_q3_ms = 0;
  double mean_tta_ms = 0;
  double rework_rate = 0;
  double internal_rework_mean = 0;
  double mean_cost_usd = 0;
  double throughput_qps = 0;
  double accuracy = 0;
};

struct MetricsReport {
  PolicyKind policy = PolicyKind::Centralized;
  std::string workload_digest;
  std::uint64_t seed = 0;
  std::size_t sessions = 64;
  std::vector<QueryRecord> queries;
  Aggregates aggregates;
};

/// Linear-interpolated quantile of an unsorted sample.
double quantile(std::vector<double> xs, double q);

/// Aggregates from per-query records; the throughput comes from replaying the
/// timelines over `sessions` concurrent sessions.
Aggregates aggregate(const std::vector<QueryRecord>& queries, const ToolRegistry& registry, std::size_t sessions);

/// Completed queries per simulated second. Queries are dealt round-robin to
/// `sessions` closed-loop sessions; each replays its timeline with tool
/// occupancies competing for the tools' max_concurrency slots. One session
/// with no contention gives 1000 / mean TTA.
double replay_throughput(const std::vector<QueryRecord>& queries, const ToolRegistry& registry,
                         std::size_t sessions);

MetricsReport run_policy(const Workload& workload, PolicyKind policy, const HarnessConfig& cfg = {});
double throughput_run(const Workload& workload, PolicyKind policy, std::size_t sessions,
                      const HarnessConfig& cfg = {});

nlohmann::json to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);
std::string render_table(const MetricsReport& r);

struct DeltaReport {
  PolicyKind baseline = PolicyKind::Hierarchical;
  PolicyKind candidate = PolicyKind::Centralized;
  // Per-query TTA reductions of the candidate against the baseline.
  double tta_reduction_median = 0;
  double tta_reduction_q1 = 0;
  double tta_reduction_q3 = 0;
  double rework_reduction = 0;
  double cost_reduction = 0;
  double throughput_ratio = 1;
  double accuracy_delta = 0;
  // 95% two-proportion (Wald) interval for accuracy_delta.
  double accuracy_ci_low = 0;
  double accuracy_ci_high = 0;
  double accuracy_baseline = 0;
  double accuracy_candidate = 0;
};

/// Candidate against baseline over the same workload. Throws
/// IncomparableReports when the workloads differ.
DeltaReport compare(const MetricsReport& baseline, const MetricsReport& candidate);

nlohmann::json to_json(const DeltaReport& d);
std::string render_table(const DeltaReport& d);
/// One row per query: id, category, TTA, cost, correctness and rework of both.
std::string deltas_csv(const MetricsReport& baseline, const MetricsReport& candidate);

}  // namespace supervisor
