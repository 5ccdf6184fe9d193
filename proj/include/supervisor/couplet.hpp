#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "supervisor/registry.hpp"
#include "supervisor/state.hpp"
#include "supervisor/types.hpp"

namespace supervisor {

enum class TaskKind { DetectObjects, EmbedImage, Ocr, Transcribe, ExtractTables, GenerateImage, ParsePdf };

std::string_view to_string(TaskKind k);
std::optional<TaskKind> parse_task_kind(std::string_view s);

/// Output tag a tool must produce to serve `kind` (same spelling as the kind).
std::string task_tag(TaskKind k);
/// Broader evidence tag any substitute tool must produce.
std::string evidence_tag(TaskKind k);

struct PerceptualTask {
  TaskKind kind = TaskKind::DetectObjects;
  std::map<std::string, std::string> parameters;
  Attachment source;
  // Key used to look up fixtures; defaults to the attachment's display name.
  std::string attachment_id;
};

// Throws InvalidTask on unknown parameters or malformed values.
void validate_task(const PerceptualTask& task);

struct Detection {
  std::string label;
  std::array<double, 4> box{};  // x, y, w, h
  double t_start = 0;
  double t_end = 0;
  double conf = 0;
};

struct TranscriptWord {
  std::string word;
  double t = 0;
  double conf = 0;
};

struct TableData {
  std::vector<std::string> headers;
  std::vector<std::vector<std::string>> rows;
};

struct TextBlock {
  std::string text;
  double conf = 0;
};

struct RawPayload {
  TaskKind kind = TaskKind::DetectObjects;
  std::string tool;
  std::vector<Detection> detections;
  std::vector<TranscriptWord> transcript;
  std::vector<TableData> tables;
  std::vector<TextBlock> text_blocks;
  std::vector<double> embedding;
  std::string image_ref;
  std::size_t frames = 0;
  // Size of the extracted content a language model would have to read.
  std::size_t source_tokens = 0;
  double confidence = 0;
  double latency_ms = 0;
  // Free-form notes from the backend, e.g. "handwritten".
  std::vector<std::string> notes;
};

struct TimelineEntry {
  double t_start = 0;
  double t_end = 0;
  std::string label;
  std::vector<std::string> mentions;
};

struct PerceptualEvidence {
  TaskKind kind = TaskKind::DetectObjects;
  std::string source_node;
  RawPayload payload;
  std::vector<TimelineEntry> timeline;
  std::string summary_text;
  double confidence = 0;
};

nlohmann::json to_json(const RawPayload& p);
RawPayload raw_payload_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PerceptualEvidence& e);

class IntentParser {
 public:
  virtual ~IntentParser() = default;
  virtual PerceptualTask parse(const std::string& query, Modality modality, const Attachment& source,
                               bool scanned) const = 0;
};

class RuleIntentParser : public IntentParser {
 public:
  PerceptualTask parse(const std::string& query, Modality modality, const Attachment& source,
                       bool scanned) const override;
};

/// Throws AmbiguousIntent when the query carries no usable instruction for a
/// modality with several plausible tasks, std::invalid_argument for a
/// non-perceptual modality.
PerceptualTask parse_intent(const std::string& query, Modality modality, const Attachment& source,
                            bool scanned = false, const IntentParser* parser = nullptr);

class Backend {
 public:
  virtual ~Backend() = default;
  // Throws NodeFailure.
  virtual RawPayload invoke(const PerceptualTask& task, const ToolSpec& tool, std::uint64_t seed) = 0;
  // Whether a document/image source is a scan (drives ocr vs parse_pdf).
  virtual bool is_scanned(const std::string& /*attachment_id*/) const { return false; }
  // Length of a video/audio source in seconds, when known.
  virtual std::optional<double> duration_s(const std::string& /*attachment_id*/) const { return std::nullopt; }
  virtual bool has_audio_track(const std::string& /*attachment_id*/) const { return true; }
};

/// Deterministic backend scripted by per-attachment fixtures:
///   {detections, transcript, tables, text_blocks, duration_s, frame_count,
///    scanned, has_audio, source_tokens, confidence, kind_confidence{},
///    tool_confidence{}, refined_confidence, refined_text_blocks, fail[], notes[]}
class SimulatedBackend : public Backend {
 public:
  SimulatedBackend();

  void add_fixture(const std::string& attachment_id, nlohmann::json fixture);
  // Loads every `<id>.json` in a directory; the id is the file stem.
  void load_fixture_dir(const std::string& dir);
  bool has_fixture(const std::string& attachment_id) const;

  // Per-frame latency for video detection, by tool name.
  void set_per_frame_ms(const std::string& tool, double ms);

  RawPayload invoke(const PerceptualTask& task, const ToolSpec& tool, std::uint64_t seed) override;
  bool is_scanned(const std::string& attachment_id) const override;
  std::optional<double> duration_s(const std::string& attachment_id) const override;
  bool has_audio_track(const std::string& attachment_id) const override;

 private:
  nlohmann::json fixture(const std::string& id) const;

  mutable std::mutex mu_;
  std::map<std::string, nlohmann::json> fixtures_;
  std::map<std::string, double> per_frame_ms_;
};

struct HttpBackendOptions {
  int timeout_ms = 10000;
  int retries = 1;  // on 5xx and transport errors
};

/// POSTs {"kind", "parameters", "source"} to the tool's endpoint and expects a
/// RawPayload JSON body back.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpBackendOptions opts = {}) : opts_(opts) {}
  RawPayload invoke(const PerceptualTask& task, const ToolSpec& tool, std::uint64_t seed) override;

 private:
  HttpBackendOptions opts_;
};

/// Runs the backend and fills in the tool name when absent.
RawPayload execute_perceptual(const PerceptualTask& task, Backend& backend, const ToolSpec& tool,
                              std::uint64_t seed);

class Contextualizer {
 public:
  virtual ~Contextualizer() = default;
  virtual std::string render(const PerceptualEvidence& evidence, const std::string& query) const = 0;
};

class TemplateContextualizer : public Contextualizer {
 public:
  std::string render(const PerceptualEvidence& evidence, const std::string& query) const override;
};

/// Throws EvidenceTypeError when the payload kind differs from `expected`.
PerceptualEvidence contextualize(const RawPayload& payload, TaskKind expected, const std::string& query,
                                 const std::string& source_node, const Contextualizer* ctx = nullptr);

inline constexpr double kDefaultAlignToleranceS = 1.0;

/// Pairs each detection with transcript words whose timestamps fall inside
/// [t_start - tol, t_end + tol].
std::vector<TimelineEntry> align_timeline(const std::vector<Detection>& detections,
                                          const std::vector<TranscriptWord>& transcript,
                                          double tolerance_s = kDefaultAlignToleranceS);

std::string format_timestamp(double seconds);  // "0:12"
std::string render_timeline(const std::vector<TimelineEntry>& timeline);

}  // namespace supervisor
