#include <doctest.h>

#include <algorithm>
#include <random>

#include "supervisor/errors.hpp"
#include "supervisor/routing.hpp"
#include "supervisor/workload.hpp"

using namespace supervisor;

namespace {

class BrokenScorer : public WinScorer {
 public:
  double win_probability(const std::vector<double>&) const override { throw ScorerUnavailable("down"); }
};

class BrokenSubflags : public SubflagClassifier {
 public:
  SubflagScores scores(const std::string&) const override { throw std::runtime_error("down"); }
};

ModelCatalogEntry priced(const char* per_mtok, const char* fee) {
  ModelCatalogEntry e;
  e.model_name = "m";
  e.cost_per_mtok = Money::parse(per_mtok);
  e.per_request_fee = Money::parse(fee);
  return e;
}

}  // namespace

TEST_SUITE("routing") {

TEST_CASE("tier selection is exact") {
  CHECK(select_tier("trad_couplet") == CostKnob::TradCouplet);
  CHECK(select_tier("open_src") == CostKnob::OpenSrc);
  CHECK(select_tier("closed_src") == CostKnob::ClosedSrc);
  CHECK(select_tier("") == CostKnob::ClosedSrc);
  CHECK(select_tier("OPEN_SRC") == CostKnob::ClosedSrc);
  CHECK(select_tier(" open_src") == CostKnob::ClosedSrc);
}

TEST_CASE("threshold is strict") {
  auto cat = default_catalog();
  RouterConfig cfg;
  ConstantWinScorer above(0.45), at(0.40), zero(0.0);
  cfg.scorer = &above;
  auto d = route_strong_weak("anything", cat, CostKnob::ClosedSrc, cfg);
  CHECK(d.route == Route::Strong);
  CHECK_FALSE(d.subflag);
  CHECK(d.chosen_model == cat.strong_model(CostKnob::ClosedSrc).model_name);
  cfg.scorer = &at;
  d = route_strong_weak("anything", cat, CostKnob::ClosedSrc, cfg);
  CHECK(d.route == Route::Weak);
  CHECK(d.subflag);
  cfg.scorer = &zero;
  for (const auto& q : standard_text_queries(200, 3))
    CHECK(route_strong_weak(q, cat, CostKnob::OpenSrc, cfg).route == Route::Weak);
}

TEST_CASE("threshold must lie in the open unit interval") {
  RouterConfig cfg;
  cfg.threshold = 1.0;
  CHECK_THROWS_AS(route_strong_weak("x", default_catalog(), CostKnob::ClosedSrc, cfg), std::invalid_argument);
  cfg.threshold = 0.0;
  CHECK_THROWS_AS(route_strong_weak("x", default_catalog(), CostKnob::ClosedSrc, cfg), std::invalid_argument);
}

TEST_CASE("scorer failure gives a weak general decision") {
  BrokenScorer broken;
  RouterConfig cfg;
  cfg.scorer = &broken;
  auto d = route_strong_weak("prove the theorem", default_catalog(), CostKnob::ClosedSrc, cfg);
  CHECK(d.route == Route::Weak);
  CHECK(d.weak_fallback);
  CHECK(d.subflag == Subflag::General);
  CHECK_FALSE(d.note.empty());
}

TEST_CASE("weak decisions pick the matching cell") {
  auto cat = default_catalog();
  ConstantWinScorer zero(0.0);
  RouterConfig cfg;
  cfg.scorer = &zero;
  auto d = route_strong_weak("fix this segfault in my parser", cat, CostKnob::OpenSrc, cfg);
  CHECK(d.subflag == Subflag::Coding);
  CHECK(d.chosen_model == "CodeLLaMA-34B");
}

TEST_CASE("subflag examples") {
  RuleSubflagClassifier c;
  CHECK(classify_subflag("fix this segfault in my parser", c) == Subflag::Coding);
  CHECK(classify_subflag("rewrite this paragraph formally", c) == Subflag::SummarizationRewriting);
  CHECK(classify_subflag("what time is it in Tokyo", c) == Subflag::General);
  CHECK(classify_subflag("solve the integral of x squared", c) == Subflag::AnalyticalMaths);
  CHECK(classify_subflag("fix this segfault", BrokenSubflags()) == Subflag::General);
}

TEST_CASE("raising the threshold never turns weak into strong") {
  auto cat = default_catalog();
  auto queries = standard_text_queries(300, 9);
  for (const auto& q : queries) {
    bool strong_before = true;
    for (double t : {0.1, 0.2, 0.3, 0.4, 0.5, 0.7, 0.9}) {
      RouterConfig cfg;
      cfg.threshold = t;
      bool strong = route_strong_weak(q, cat, CostKnob::ClosedSrc, cfg).route == Route::Strong;
      CHECK((strong_before || !strong));
      strong_before = strong;
    }
  }
}

TEST_CASE("default scorer sends about 96 percent weak") {
  auto cat = default_catalog();
  auto queries = standard_text_queries(1000, 7);
  std::size_t weak = 0;
  for (const auto& q : queries) {
    auto d = route_strong_weak(q, cat, CostKnob::ClosedSrc);
    CHECK(d.subflag.has_value() == (d.route == Route::Weak));
    weak += d.route == Route::Weak;
  }
  double frac = double(weak) / double(queries.size());
  CHECK(frac >= 0.94);
  CHECK(frac <= 0.98);
}

TEST_CASE("cost accounting examples") {
  SessionMeta s;
  auto a = accumulate_cost(s, 1000000, priced("2.50", "0"));
  CHECK(a.cumulative_cost == Money::parse("2.5"));
  CHECK(accumulate_cost(s, 0, priced("2.50", "0")).cumulative_cost == Money{});
  CHECK(accumulate_cost(s, 400000, priced("0.15", "0.001")).cumulative_cost == Money::parse("0.061"));
}

TEST_CASE("budget cap freezes the session") {
  SessionMeta s;
  s.cumulative_cost = Money::parse("0.9");
  CHECK_THROWS_AS(accumulate_cost(s, 1000000, priced("0.2", "0"), Money::parse("1.0")), BudgetExceeded);
  CHECK(s.cumulative_cost == Money::parse("0.9"));
  CHECK(accumulate_cost(s, 500000, priced("0.2", "0"), Money::parse("1.0")).cumulative_cost == Money::parse("1.0"));
}

TEST_CASE("accumulation is order independent and never decreasing") {
  std::mt19937_64 rng(3);
  auto cat = default_catalog();
  std::vector<std::pair<std::uint64_t, std::size_t>> calls;
  for (int i = 0; i < 50; ++i) calls.push_back({rng() % 3000000, rng() % cat.entries().size()});
  auto total = [&](const auto& seq) {
    SessionMeta s;
    for (auto [tok, m] : seq) {
      auto next = accumulate_cost(s, tok, cat.entries()[m]);
      CHECK(next.cumulative_cost >= s.cumulative_cost);
      s = next;
    }
    return s.cumulative_cost;
  };
  auto a = total(calls);
  std::shuffle(calls.begin(), calls.end(), rng);
  CHECK(total(calls) == a);
}

TEST_CASE("default catalog sits inside the tier bands") {
  auto cat = default_catalog();
  for (const auto& e : cat.entries()) {
    auto [lo, hi] = tier_price_band(e.tier);
    CHECK(e.cost_per_mtok >= lo);
    CHECK(e.cost_per_mtok <= hi);
  }
  CHECK(tier_price_band(CostKnob::TradCouplet) == std::pair{Money::parse("0.15"), Money::parse("0.25")});
  CHECK(tier_price_band(CostKnob::OpenSrc) == std::pair{Money::parse("0.30"), Money::parse("0.50")});
  CHECK(tier_price_band(CostKnob::ClosedSrc) == std::pair{Money::parse("2.50"), Money::parse("5.00")});
  for (auto k : kAllCostKnobs)
    for (auto s : kAllSubflags) CHECK(cat.weak_model(k, s).subflag_affinity == s);
  CHECK(cat.strong_model(CostKnob::ClosedSrc).model_name == "GPT-4o");
  CHECK_THROWS_AS(cat.find("nonexistent"), UnknownModel);
}

TEST_CASE("catalog JSON round-trips") {
  auto cat = default_catalog();
  CHECK(ModelCatalog::from_json(cat.to_json()).entries() == cat.entries());
  CHECK(ModelCatalog::load(std::string(SUPERVISOR_DATA_DIR) + "/models.json").entries() == cat.entries());
  auto bad = cat.to_json();
  bad[0]["tier"] = "platinum";
  CHECK_THROWS_AS(ModelCatalog::from_json(bad), InvalidSpec);
}

TEST_CASE("structural features") {
  auto f = structural_features("why does x + y = z? and how?");
  REQUIRE(f.size() == 4);
  CHECK(f[0] == 9);  // why does x + y = z? and how?
  CHECK(f[2] >= 2);
  CHECK(f[3] > 0);
}

}  // TEST_SUITE
