#include "supervisor/couplet.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <regex>
#include <set>
#include <sstream>

#include "supervisor/decomposition.hpp"
#include "supervisor/errors.hpp"
#include "supervisor/util.hpp"

namespace supervisor {

using nlohmann::json;

namespace {

constexpr std::array<TaskKind, 7> kAllTaskKinds{TaskKind::DetectObjects, TaskKind::EmbedImage,
                                                TaskKind::Ocr,           TaskKind::Transcribe,
                                                TaskKind::ExtractTables, TaskKind::GenerateImage,
                                                TaskKind::ParsePdf};

}  // namespace

std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::DetectObjects: return "detect_objects";
    case TaskKind::EmbedImage: return "embed_image";
    case TaskKind::Ocr: return "ocr";
    case TaskKind::Transcribe: return "transcribe";
    case TaskKind::ExtractTables: return "extract_tables";
    case TaskKind::GenerateImage: return "generate_image";
    case TaskKind::ParsePdf: return "parse_pdf";
  }
  return "detect_objects";
}

std::optional<TaskKind> parse_task_kind(std::string_view s) {
  for (auto k : kAllTaskKinds)
    if (to_string(k) == s) return k;
  return std::nullopt;
}

std::string task_tag(TaskKind k) { return std::string(to_string(k)); }

std::string evidence_tag(TaskKind k) {
  switch (k) {
    case TaskKind::DetectObjects: return "detections";
    case TaskKind::EmbedImage: return "tags";
    case TaskKind::Ocr: return "text_blocks";
    case TaskKind::Transcribe: return "transcript";
    case TaskKind::ExtractTables: return "tables";
    case TaskKind::GenerateImage: return "image_ref";
    case TaskKind::ParsePdf: return "text_blocks";
  }
  return "detections";
}

void validate_task(const PerceptualTask& task) {
  static const std::map<TaskKind, std::set<std::string>> schema = {
      {TaskKind::DetectObjects, {"frame_interval_s", "target_classes", "focus"}},
      {TaskKind::EmbedImage, {"focus"}},
      {TaskKind::Ocr, {"language", "focus"}},
      {TaskKind::Transcribe, {"language", "focus"}},
      {TaskKind::ExtractTables, {"pages", "focus"}},
      {TaskKind::GenerateImage, {"prompt"}},
      {TaskKind::ParsePdf, {"pages", "focus"}},
  };
  const auto& allowed = schema.at(task.kind);
  for (const auto& [k, v] : task.parameters) {
    if (!allowed.contains(k))
      throw InvalidTask("parameter '" + k + "' not allowed for task " + std::string(to_string(task.kind)));
    if (k == "frame_interval_s") {
      char* end = nullptr;
      double x = std::strtod(v.c_str(), &end);
      if (v.empty() || *end != '\0' || !(x > 0) || !std::isfinite(x))
        throw InvalidTask("frame_interval_s must be a positive number, got '" + v + "'");
    }
  }
  if (task.kind == TaskKind::GenerateImage && task.parameters.count("prompt") == 0)
    throw InvalidTask("generate_image needs a prompt");
}

json to_json(const RawPayload& p) {
  json dets = json::array(), words_j = json::array(), tables = json::array(), blocks = json::array();
  for (const auto& d : p.detections)
    dets.push_back({{"label", d.label}, {"box", d.box}, {"t_start", d.t_start}, {"t_end", d.t_end}, {"conf", d.conf}});
  for (const auto& w : p.transcript) words_j.push_back({{"word", w.word}, {"t", w.t}, {"conf", w.conf}});
  for (const auto& t : p.tables) tables.push_back({{"headers", t.headers}, {"rows", t.rows}});
  for (const auto& b : p.text_blocks) blocks.push_back({{"text", b.text}, {"conf", b.conf}});
  return {{"kind", to_string(p.kind)},   {"tool", p.tool},           {"detections", dets},
          {"transcript", words_j},       {"tables", tables},         {"text_blocks", blocks},
          {"embedding", p.embedding},    {"image_ref", p.image_ref}, {"frames", p.frames},
          {"source_tokens", p.source_tokens},
          {"confidence", p.confidence},  {"latency_ms", p.latency_ms}, {"notes", p.notes}};
}

namespace {

std::vector<Detection> detections_from(const json& arr) {
  std::vector<Detection> out;
  for (const auto& d : arr) {
    Detection x;
    x.label = d.at("label").get<std::string>();
    if (d.contains("box")) {
      auto b = d["box"].get<std::vector<double>>();
      for (std::size_t i = 0; i < 4 && i < b.size(); ++i) x.box[i] = b[i];
    }
    x.t_start = d.value("t_start", 0.0);
    x.t_end = d.value("t_end", x.t_start);
    x.conf = d.value("conf", 1.0);
    out.push_back(x);
  }
  return out;
}

std::vector<TranscriptWord> transcript_from(const json& arr) {
  std::vector<TranscriptWord> out;
  for (const auto& w : arr) out.push_back({w.at("word").get<std::string>(), w.value("t", 0.0), w.value("conf", 1.0)});
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
  return out;
}

std::vector<TableData> tables_from(const json& arr) {
  std::vector<TableData> out;
  for (const auto& t : arr) {
    TableData d;
    d.headers = t.value("headers", std::vector<std::string>{});
    d.rows = t.value("rows", std::vector<std::vector<std::string>>{});
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<TextBlock> blocks_from(const json& arr) {
  std::vector<TextBlock> out;
  for (const auto& b : arr) {
    if (b.is_string())
      out.push_back({b.get<std::string>(), 1.0});
    else
      out.push_back({b.at("text").get<std::string>(), b.value("conf", 1.0)});
  }
  return out;
}

}  // namespace

RawPayload raw_payload_from_json(const json& j) {
  try {
    RawPayload p;
    auto kind = parse_task_kind(j.at("kind").get<std::string>());
    if (!kind) throw EvidenceTypeError("unknown payload kind");
    p.kind = *kind;
    p.tool = j.value("tool", "");
    p.detections = detections_from(j.value("detections", json::array()));
    p.transcript = transcript_from(j.value("transcript", json::array()));
    p.tables = tables_from(j.value("tables", json::array()));
    p.text_blocks = blocks_from(j.value("text_blocks", json::array()));
    p.embedding = j.value("embedding", std::vector<double>{});
    p.image_ref = j.value("image_ref", "");
    p.frames = j.value("frames", std::size_t{0});
    p.source_tokens = j.value("source_tokens", std::size_t{0});
    p.confidence = j.value("confidence", 0.0);
    p.latency_ms = j.value("latency_ms", 0.0);
    p.notes = j.value("notes", std::vector<std::string>{});
    return p;
  } catch (const json::exception& e) {
    throw EvidenceTypeError(std::string("malformed payload: ") + e.what());
  }
}

json to_json(const PerceptualEvidence& e) {
  json tl = json::array();
  for (const auto& t : e.timeline)
    tl.push_back({{"t_start", t.t_start}, {"t_end", t.t_end}, {"label", t.label}, {"mentions", t.mentions}});
  return {{"kind", to_string(e.kind)},  {"source_node", e.source_node}, {"payload", to_json(e.payload)},
          {"timeline", tl},             {"summary_text", e.summary_text}, {"confidence", e.confidence}};
}

PerceptualTask RuleIntentParser::parse(const std::string& query, Modality modality, const Attachment& source,
                                       bool scanned) const {
  static const std::set<std::string> generic = {"analyze", "analyse", "this", "that", "it", "the", "a", "an",
                                                "please", "look", "at", "check", "process", "file", "here",
                                                "can", "you", "me", "for", "help", "with", "attached", "and", "hmm", "hm",
                                                "um", "uh", "ok", "okay", "so", "thoughts"};
  auto toks = words(query);
  auto has_any = [&](std::initializer_list<const char*> ks) {
    for (const char* k : ks)
      if (count_phrase(toks, k)) return true;
    return false;
  };
  bool only_generic = std::all_of(toks.begin(), toks.end(), [](const std::string& t) { return generic.contains(t); });

  PerceptualTask task;
  task.source = source;
  task.attachment_id = source.display_name();
  switch (modality) {
    case Modality::Image:
      if (has_any({"text", "read", "ocr", "document", "notes", "scan", "scanned", "handwritten", "handwriting",
                   "receipt", "written", "letter"}))
        task.kind = TaskKind::Ocr;
      else if (has_any({"table", "tables", "spreadsheet"}))
        task.kind = TaskKind::ExtractTables;
      else if (has_any({"similar", "similarity", "embed", "embedding", "search", "match"}))
        task.kind = TaskKind::EmbedImage;
      else if (scanned)
        task.kind = TaskKind::Ocr;
      else if (only_generic)
        throw AmbiguousIntent("not clear what to do with this image");
      else
        task.kind = TaskKind::DetectObjects;
      break;
    case Modality::Document:
      if (only_generic && !scanned) throw AmbiguousIntent("not clear what to extract from this document");
      if (has_any({"table", "tables", "metrics", "figures", "numbers", "financial", "revenue"}))
        task.kind = TaskKind::ExtractTables;
      else if (scanned || has_any({"scan", "scanned", "handwritten"}))
        task.kind = TaskKind::Ocr;
      else
        task.kind = TaskKind::ParsePdf;
      break;
    case Modality::Video: {
      task.kind = TaskKind::DetectObjects;
      std::string interval = "1";
      static const std::regex every(R"(every\s+([0-9]+(?:\.[0-9]+)?)\s*(?:s|sec|secs|second|seconds)\b)");
      std::smatch m;
      auto lower = to_lower(query);
      if (std::regex_search(lower, m, every)) interval = m[1].str();
      task.parameters["frame_interval_s"] = interval;
      break;
    }
    case Modality::Audio:
      task.kind = TaskKind::Transcribe;
      task.parameters["language"] = "auto";
      break;
    default:
      throw std::invalid_argument("no perceptual task for modality " + std::string(to_string(modality)));
  }
  if (task.kind == TaskKind::Ocr) task.parameters["language"] = "auto";
  validate_task(task);
  return task;
}

PerceptualTask parse_intent(const std::string& query, Modality modality, const Attachment& source, bool scanned,
                            const IntentParser* parser) {
  static const RuleIntentParser rules;
  return (parser ? *parser : static_cast<const IntentParser&>(rules)).parse(query, modality, source, scanned);
}

SimulatedBackend::SimulatedBackend() {
  per_frame_ms_["yolo-detect"] = 180.0;
  per_frame_ms_["vision-qa"] = 2400.0;
}

void SimulatedBackend::add_fixture(const std::string& id, json fixture) {
  std::lock_guard lk(mu_);
  fixtures_[id] = std::move(fixture);
}

void SimulatedBackend::load_fixture_dir(const std::string& dir) {
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    json j = json::parse(read_file(entry.path().string()), nullptr, false);
    if (j.is_discarded()) throw InvalidSpec("fixture " + entry.path().string() + " is not valid JSON");
    add_fixture(entry.path().stem().string(), std::move(j));
  }
}

bool SimulatedBackend::has_fixture(const std::string& id) const {
  std::lock_guard lk(mu_);
  return fixtures_.contains(id);
}

void SimulatedBackend::set_per_frame_ms(const std::string& tool, double ms) {
  std::lock_guard lk(mu_);
  per_frame_ms_[tool] = ms;
}

json SimulatedBackend::fixture(const std::string& id) const {
  std::lock_guard lk(mu_);
  if (auto it = fixtures_.find(id); it != fixtures_.end()) return it->second;
  // Fixtures may also be keyed by file stem.
  auto stem = std::filesystem::path(id).stem().string();
  if (auto it = fixtures_.find(stem); it != fixtures_.end()) return it->second;
  return json::object();
}

bool SimulatedBackend::is_scanned(const std::string& id) const { return fixture(id).value("scanned", false); }

bool SimulatedBackend::has_audio_track(const std::string& id) const { return fixture(id).value("has_audio", true); }

std::optional<double> SimulatedBackend::duration_s(const std::string& id) const {
  auto f = fixture(id);
  if (f.contains("duration_s")) return f["duration_s"].get<double>();
  return std::nullopt;
}

RawPayload SimulatedBackend::invoke(const PerceptualTask& task, const ToolSpec& tool, std::uint64_t seed) {
  validate_task(task);
  json f = fixture(task.attachment_id);
  for (const auto& name : f.value("fail", std::vector<std::string>{}))
    if (name == tool.name) throw NodeFailure(tool.name + " rejected input " + task.attachment_id, false);

  RawPayload p;
  p.kind = task.kind;
  p.tool = tool.name;
  p.notes = f.value("notes", std::vector<std::string>{});

  double conf = f.value("confidence", 0.9);
  if (auto kc = f.value("kind_confidence", json::object()); kc.contains(to_string(task.kind)))
    conf = kc[std::string(to_string(task.kind))].get<double>();
  if (auto tc = f.value("tool_confidence", json::object()); tc.contains(tool.name))
    conf = tc[tool.name].get<double>();
  if (task.parameters.count("focus") && f.contains("refined_confidence")) conf = f["refined_confidence"].get<double>();
  p.confidence = std::clamp(conf, 0.0, 1.0);

  double u = unit_uniform(mix_seed({seed, fnv1a64(tool.name), fnv1a64(task.attachment_id)}));
  p.latency_ms = latency_from_uniform(tool.latency, u);

  switch (task.kind) {
    case TaskKind::DetectObjects: {
      p.detections = detections_from(f.value("detections", json::array()));
      bool video = task.source.detected_modality == Modality::Video || f.contains("duration_s") ||
                   f.contains("frame_count");
      if (video) {
        double interval = 1.0;
        if (auto it = task.parameters.find("frame_interval_s"); it != task.parameters.end())
          interval = std::stod(it->second);
        if (f.contains("frame_count"))
          p.frames = f["frame_count"].get<std::size_t>();
        else
          p.frames = static_cast<std::size_t>(std::ceil(f.value("duration_s", 0.0) / interval));
        std::lock_guard lk(mu_);
        if (auto it = per_frame_ms_.find(tool.name); it != per_frame_ms_.end())
          p.latency_ms = it->second * static_cast<double>(p.frames);
      } else {
        p.frames = 1;
      }
      break;
    }
    case TaskKind::EmbedImage: {
      p.embedding.resize(8);
      for (std::size_t i = 0; i < 8; ++i)
        p.embedding[i] = unit_uniform(mix_seed({fnv1a64(task.attachment_id), i})) * 2 - 1;
      break;
    }
    case TaskKind::Ocr:
      p.text_blocks = blocks_from(f.value("text_blocks", json::array()));
      break;
    case TaskKind::Transcribe:
      p.transcript = transcript_from(f.value("transcript", json::array()));
      break;
    case TaskKind::ExtractTables:
      p.tables = tables_from(f.value("tables", json::array()));
      break;
    case TaskKind::ParsePdf:
      p.text_blocks = blocks_from(f.value("text_blocks", json::array()));
      p.tables = tables_from(f.value("tables", json::array()));
      break;
    case TaskKind::GenerateImage:
      p.image_ref = "sim://image/" + hex64(fnv1a64(task.parameters.at("prompt"), seed));
      break;
  }
  // Refinement narrows the output to what the user asked for.
  if (auto it = task.parameters.find("focus"); it != task.parameters.end() && f.contains("refined_text_blocks"))
    p.text_blocks = blocks_from(f["refined_text_blocks"]);
  if (f.contains("source_tokens")) {
    p.source_tokens = f["source_tokens"].get<std::size_t>();
  } else {
    for (const auto& b : p.text_blocks) p.source_tokens += whitespace_tokens(b.text);
    for (const auto& t : p.tables)
      for (const auto& row : t.rows) p.source_tokens += row.size();
    p.source_tokens += p.transcript.size() + p.detections.size() * 8;
  }
  return p;
}

RawPayload execute_perceptual(const PerceptualTask& task, Backend& backend, const ToolSpec& tool,
                              std::uint64_t seed) {
  auto p = backend.invoke(task, tool, seed);
  if (p.tool.empty()) p.tool = tool.name;
  if (p.kind != task.kind)
    throw EvidenceTypeError("backend returned " + std::string(to_string(p.kind)) + " for a " +
                            std::string(to_string(task.kind)) + " task");
  return p;
}

std::string format_timestamp(double seconds) {
  auto total = static_cast<long long>(std::floor(seconds + 1e-9));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%lld:%02lld", total / 60, total % 60);
  return buf;
}

std::vector<TimelineEntry> align_timeline(const std::vector<Detection>& detections,
                                          const std::vector<TranscriptWord>& transcript, double tol) {
  std::vector<TimelineEntry> out;
  for (const auto& d : detections) {
    TimelineEntry e{d.t_start, d.t_end, d.label, {}};
    for (const auto& w : transcript)
      if (w.t >= d.t_start - tol && w.t <= d.t_end + tol) e.mentions.push_back(w.word);
    out.push_back(std::move(e));
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.t_start < b.t_start; });
  return out;
}

std::string render_timeline(const std::vector<TimelineEntry>& timeline) {
  std::string s;
  for (const auto& e : timeline) {
    if (!s.empty()) s += '\n';
    s += "At " + format_timestamp(e.t_start) + "-" + format_timestamp(e.t_end) + ", " + e.label + " appears";
    if (!e.mentions.empty()) s += " while the narration mentions \"" + join(e.mentions, " ") + "\"";
    s += '.';
  }
  return s;
}

std::string TemplateContextualizer::render(const PerceptualEvidence& e, const std::string&) const {
  const auto& p = e.payload;
  char conf[32];
  std::snprintf(conf, sizeof conf, "%.2f", e.confidence);
  std::ostringstream out;
  switch (e.kind) {
    case TaskKind::DetectObjects:
      if (p.detections.empty()) {
        out << "No objects found.";
        break;
      }
      out << "Detected " << p.detections.size() << " object(s): ";
      for (std::size_t i = 0; i < p.detections.size(); ++i) {
        if (i) out << ", ";
        out << p.detections[i].label;
      }
      out << '.';
      if (!e.timeline.empty()) out << '\n' << render_timeline(e.timeline);
      break;
    case TaskKind::Transcribe: {
      if (p.transcript.empty()) {
        out << "Transcript is empty.";
        break;
      }
      std::vector<std::string> ws;
      for (const auto& w : p.transcript) ws.push_back(w.word);
      out << "Transcript (" << ws.size() << " words): " << join(ws, " ");
      break;
    }
    case TaskKind::ExtractTables:
    case TaskKind::ParsePdf:
    case TaskKind::Ocr: {
      if (!p.text_blocks.empty()) {
        std::vector<std::string> ts;
        for (const auto& b : p.text_blocks) ts.push_back(b.text);
        out << "Extracted " << p.text_blocks.size() << " text block(s): " << join(ts, " | ");
      }
      for (std::size_t i = 0; i < p.tables.size(); ++i) {
        if (out.tellp() > 0) out << '\n';
        out << "Table " << i + 1 << ": " << p.tables[i].rows.size() << " row(s); headers: "
            << join(p.tables[i].headers, ", ");
        for (const auto& row : p.tables[i].rows) out << "\n  " << join(row, " | ");
      }
      if (out.tellp() == 0) out << "No text found.";
      break;
    }
    case TaskKind::EmbedImage:
      out << "Computed a " << p.embedding.size() << "-dimensional image embedding.";
      break;
    case TaskKind::GenerateImage:
      out << "Generated image: " << p.image_ref;
      break;
  }
  bool multiline = out.str().find('\n') != std::string::npos;
  out << (multiline ? "\n" : " ") << "(confidence " << conf << ")";
  return out.str();
}

PerceptualEvidence contextualize(const RawPayload& payload, TaskKind expected, const std::string& query,
                                 const std::string& source_node, const Contextualizer* ctx) {
  if (payload.kind != expected)
    throw EvidenceTypeError("payload kind " + std::string(to_string(payload.kind)) + " does not match task kind " +
                            std::string(to_string(expected)));
  static const TemplateContextualizer templ;
  PerceptualEvidence e;
  e.kind = expected;
  e.source_node = source_node;
  e.payload = payload;
  e.confidence = std::clamp(payload.confidence, 0.0, 1.0);
  if (expected == TaskKind::DetectObjects && !payload.transcript.empty())
    e.timeline = align_timeline(payload.detections, payload.transcript);
  e.summary_text = (ctx ? *ctx : static_cast<const Contextualizer&>(templ)).render(e, query);
  return e;
}

}  // namespace supervisor
