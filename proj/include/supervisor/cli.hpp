#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "supervisor/money.hpp"
#include "supervisor/scheduler.hpp"

namespace supervisor {

/// Process exit codes; stable across releases.
namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kSchema = 2;
inline constexpr int kUnknownSession = 3;
inline constexpr int kCorruptState = 4;
inline constexpr int kUnreachableAttachment = 10;
inline constexpr int kUnplannableQuery = 11;
inline constexpr int kBudgetExceeded = 12;
inline constexpr int kClarificationNeeded = 20;
inline constexpr int kFailed = 21;
}  // namespace exit_code

struct CliConfig {
  std::string store_root = ".supervisord";
  std::string tools_path;  // empty: built-in registry
  std::string models_path;  // empty: built-in catalog
  std::optional<std::string> flag_rules_path;
  std::string fixtures_path;  // directory of <attachment>.json fixtures
  std::string backend = "sim";  // sim | http
  ClockMode clock_mode = ClockMode::Virtual;
  std::uint64_t seed = 0;
  std::optional<Money> budget_usd;
  std::size_t parallelism = 8;
};

/// Applies a JSON config object on top of `base`. Throws InvalidSpec naming
/// the offending key.
CliConfig apply_config_json(CliConfig base, const std::string& json_text);
/// SUPERVISORD_STORE_ROOT and SUPERVISORD_BUDGET_USD.
CliConfig apply_env(CliConfig base);

/// Entry point shared by the binary and the tests. `in` feeds the session
/// REPL.
int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace supervisor
