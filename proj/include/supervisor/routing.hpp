#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "supervisor/money.hpp"
#include "supervisor/state.hpp"
#include "supervisor/types.hpp"

namespace supervisor {

struct ModelCatalogEntry {
  std::string model_name;
  CostKnob tier = CostKnob::ClosedSrc;
  std::optional<Subflag> subflag_affinity;  // empty for the tier's strong model
  Money cost_per_mtok;
  Money per_request_fee;
  // Relative quality used by the simulator; the strong entry has the highest.
  double capability = 1.0;

  friend bool operator==(const ModelCatalogEntry&, const ModelCatalogEntry&) = default;
};

nlohmann::json to_json(const ModelCatalogEntry& e);
ModelCatalogEntry model_entry_from_json(const nlohmann::json& j);  // throws InvalidSpec

class ModelCatalog {
 public:
  ModelCatalog() = default;
  explicit ModelCatalog(std::vector<ModelCatalogEntry> entries);

  const std::vector<ModelCatalogEntry>& entries() const { return entries_; }

  // Throws UnknownModel.
  const ModelCatalogEntry& find(std::string_view name, std::optional<CostKnob> tier = {}) const;
  // Weak cell for (tier, subflag); falls back to the tier's general cell.
  const ModelCatalogEntry& weak_model(CostKnob tier, Subflag subflag) const;
  // Entry without affinity with the highest per-token price in the tier.
  const ModelCatalogEntry& strong_model(CostKnob tier) const;

  nlohmann::json to_json() const;
  static ModelCatalog from_json(const nlohmann::json& j);
  static ModelCatalog load(const std::string& path);

 private:
  std::vector<ModelCatalogEntry> entries_;
};

/// One model per (tier, subflag) cell priced at the low end of the tier's
/// band, plus a strong model per tier at the high end.
ModelCatalog default_catalog();

// Inclusive per-MTok price band of a tier.
std::pair<Money, Money> tier_price_band(CostKnob tier);

/// Exact match on the snake_case tier names; anything else is closed_src.
CostKnob select_tier(std::string_view requested);

/// Query encoder feeding the win scorer.
using QueryEncoder = std::function<std::vector<double>(const std::string&)>;

/// [whitespace tokens, reasoning markers, sub-questions, math-symbol density]
std::vector<double> structural_features(const std::string& query);

class WinScorer {
 public:
  virtual ~WinScorer() = default;
  // Probability the strong model is needed. May throw ScorerUnavailable.
  virtual double win_probability(const std::vector<double>& features) const = 0;
};

/// sigmoid(bias + w . x)
class LogisticWinScorer : public WinScorer {
 public:
  LogisticWinScorer();  // default coefficients
  LogisticWinScorer(double bias, std::vector<double> weights);
  double win_probability(const std::vector<double>& features) const override;

  double bias() const { return bias_; }
  const std::vector<double>& weights() const { return weights_; }

 private:
  double bias_;
  std::vector<double> weights_;
};

class ConstantWinScorer : public WinScorer {
 public:
  explicit ConstantWinScorer(double p) : p_(p) {}
  double win_probability(const std::vector<double>&) const override { return p_; }

 private:
  double p_;
};

using SubflagScores = std::array<double, 4>;  // indexed by Subflag

class SubflagClassifier {
 public:
  virtual ~SubflagClassifier() = default;
  virtual SubflagScores scores(const std::string& query) const = 0;
};

/// Keyword hit counts per category; general scores zero.
class RuleSubflagClassifier : public SubflagClassifier {
 public:
  SubflagScores scores(const std::string& query) const override;
};

/// Argmax; ties (including all-zero) go to general, as does classifier failure.
Subflag classify_subflag(const std::string& query, const SubflagClassifier& classifier);

enum class Route { Strong, Weak };
std::string_view to_string(Route r);

struct RoutingDecision {
  Route route = Route::Weak;
  double win_probability = 0;
  std::optional<Subflag> subflag;
  std::string chosen_model;
  // Set when the scorer failed and the decision defaulted to weak/general.
  bool weak_fallback = false;
  std::string note;
};

inline constexpr double kDefaultWinThreshold = 0.4;

struct RouterConfig {
  const QueryEncoder* encoder = nullptr;  // null: structural_features
  const WinScorer* scorer = nullptr;      // null: default logistic scorer
  const SubflagClassifier* subflags = nullptr;
  double threshold = kDefaultWinThreshold;
};

/// Strong iff win probability > threshold. Throws std::invalid_argument for a
/// threshold outside (0, 1).
RoutingDecision route_strong_weak(const std::string& query, const ModelCatalog& catalog, CostKnob tier,
                                  const RouterConfig& cfg = {});

/// cumulative_cost += cost_per_mtok * tokens / 1e6 + fee. Throws BudgetExceeded
/// (leaving `session` untouched) when the result would exceed `budget`.
SessionMeta accumulate_cost(const SessionMeta& session, std::uint64_t token_count,
                            const ModelCatalogEntry& model, std::optional<Money> budget = {});

}  // namespace supervisor
