#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "supervisor/couplet.hpp"
#include "supervisor/state.hpp"
#include "supervisor/types.hpp"

namespace supervisor {

enum class Category {
  TextReasoning,
  CodingAssistance,
  AnalyticalMathematics,
  SummarizationRewriting,
  GeneralQa,
  DocumentQa,
  OcrExtraction,
  TableExtraction,
  VisionQa,
  ObjectDetection,
  AudioTranscription,
  AudioReasoning,
  VideoAnalysis,
  MixedRetrieval,
  ComplexOrchestration
};

inline constexpr std::array<Category, 15> kAllCategories{
    Category::TextReasoning,      Category::CodingAssistance, Category::AnalyticalMathematics,
    Category::SummarizationRewriting, Category::GeneralQa,    Category::DocumentQa,
    Category::OcrExtraction,      Category::TableExtraction,  Category::VisionQa,
    Category::ObjectDetection,    Category::AudioTranscription, Category::AudioReasoning,
    Category::VideoAnalysis,      Category::MixedRetrieval,   Category::ComplexOrchestration};

std::string_view to_string(Category c);
std::optional<Category> parse_category(std::string_view s);

struct WorkloadSpec {
  std::size_t total_queries = 1000;
  std::map<Category, double> category_mix;
  std::uint64_t seed = 7;
  // Per-tool failure probability per invocation; "*" applies to every tool
  // without its own entry.
  std::map<std::string, double> failure_injection;
  double ambiguity_rate = 0.0;

  // Perceptual inputs the first-choice tool reads badly (a capable
  // alternative exists).
  double degraded_rate = 0.0;
  // Share of OCR queries on handwriting: every tool stays unsure until the
  // user says what to look for.
  double handwritten_rate = 0.0;
  // Final language outputs that come back empty on the first attempt.
  double truncation_rate = 0.0;
  // A model of capability c answers wrongly with probability scale * (1 - c).
  double model_error_scale = 0.0;
  // Earlier turns in each query's session.
  int min_history_turns = 4;
  int max_history_turns = 16;
  std::map<CostKnob, double> knob_mix{{CostKnob::ClosedSrc, 1.0}};
};

/// Uniform mix with every failure source off.
WorkloadSpec uniform_workload_spec(std::size_t total_queries = 1000, std::uint64_t seed = 7);
/// Uniform mix with the calibrated failure, ambiguity and degradation rates.
WorkloadSpec default_workload_spec();

// Throws InvalidWorkload naming the offending field.
void validate(const WorkloadSpec& spec);

nlohmann::json to_json(const WorkloadSpec& spec);
// Missing fields take their defaults. Throws InvalidWorkload.
WorkloadSpec workload_spec_from_json(const nlohmann::json& j);

struct GroundTruth {
  Category category = Category::GeneralQa;
  ExecutionFlag expected_flag = ExecutionFlag::RouteLlm;
  // Perceptual task kinds that must succeed, and the payload keys they fill.
  std::vector<TaskKind> expected_tasks;
  std::vector<std::string> expected_evidence;
  bool ambiguous = false;
  bool degraded = false;
  bool handwritten = false;
  bool truncated = false;
  // The fact an anaphoric query points at, and how many memory records were
  // stored after the last record holding it.
  std::string referent_fact;
  std::size_t referent_age = 0;
  // What the user says when asked, and the rephrased request after a wrong
  // answer.
  std::string clarification;
  std::string explicit_query;
};

struct HistoryRecord {
  std::string content;
  Modality modality = Modality::Text;
  std::uint64_t turn = 0;
};

struct WorkloadQuery {
  std::string id;
  QueryState state;
  std::vector<HistoryRecord> history;
  std::map<std::string, nlohmann::json> fixtures;  // attachment display name -> fixture
  GroundTruth truth;
};

struct Workload {
  WorkloadSpec spec;
  std::vector<WorkloadQuery> queries;
  // Hash of the materialized queries; reports carry it for comparability.
  std::string digest() const;
};

/// Deterministic for a fixed spec.
Workload generate_workload(const WorkloadSpec& spec);

/// The fixture after the user fixed what was wrong with the input (rescan,
/// explicit instruction): per-tool degradations removed, refined content kept.
nlohmann::json reformulated_fixture(const nlohmann::json& fixture);

nlohmann::json to_json(const Workload& w);
/// Accepts a bare spec or {"spec", "queries"}. Throws InvalidWorkload.
Workload workload_from_json(const nlohmann::json& j);

/// Language-model-free queries used to calibrate the router: the text
/// categories of a uniform workload.
std::vector<std::string> standard_text_queries(std::size_t n, std::uint64_t seed);

}  // namespace supervisor
