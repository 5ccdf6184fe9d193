#include "supervisor/workload.hpp"

#include <algorithm>
#include <cmath>

#include "supervisor/errors.hpp"
#include "supervisor/util.hpp"

namespace supervisor {

using json = nlohmann::json;

namespace {

constexpr std::array<std::string_view, 15> kCategoryNames{
    "text_reasoning",  "coding_assistance", "analytical_mathematics", "summarization_rewriting",
    "general_qa",      "document_qa",       "ocr_extraction",         "table_extraction",
    "vision_qa",       "object_detection",  "audio_transcription",    "audio_reasoning",
    "video_analysis",  "mixed_retrieval",   "complex_orchestration"};

// Counter-based draws so adding a draw in one place does not shift others.
class Draws {
 public:
  Draws(std::uint64_t seed, std::uint64_t stream) : seed_(mix_seed({seed, stream})) {}
  double u() { return unit_uniform(mix_seed({seed_, n_++})); }
  bool chance(double p) { return u() < p; }
  std::size_t below(std::size_t n) { return std::min(n - 1, static_cast<std::size_t>(u() * double(n))); }
  int between(int lo, int hi) { return lo + static_cast<int>(below(static_cast<std::size_t>(hi - lo + 1))); }
  template <class T>
  const T& pick(const std::vector<T>& v) { return v[below(v.size())]; }

 private:
  std::uint64_t seed_;
  std::uint64_t n_ = 0;
};

std::string fill(std::string tpl, const std::string& value) {
  auto at = tpl.find("{}");
  if (at != std::string::npos) tpl.replace(at, 2, value);
  return tpl;
}

const std::vector<std::string> kReasoningTopics = {
    "leaves change color in autumn", "the sky looks red at sunset", "bread goes stale faster in the fridge",
    "airplanes leave white trails", "ice floats on water", "cities are warmer than the countryside at night",
    "prices rise when interest rates are low", "bees build hexagonal cells", "the moon always shows the same face",
    "onions make people cry"};
const std::vector<std::string> kReasoningTemplates = {
    "Explain why {}.", "Why is it that {}?", "Give me a short explanation of why {}.",
    "What is the reason {}?"};
const std::vector<std::string> kHardTemplates = {
    "Explain why {}, derive the mechanism from first principles, justify every assumption, critique the usual "
    "textbook account and evaluate the tradeoffs of each model in a rigorous way?",
    "Prove formally why {}, analyze the implications, evaluate the competing explanations, justify the strategy "
    "you pick and critique its weakest step?"};

const std::vector<std::string> kCodingTemplates = {
    "Fix the null pointer exception in this Java function: String name = user.getName().trim();",
    "Write a Python function that removes duplicate entries from a list while keeping order.",
    "Why does my regex [a-z]+@[a-z]+ not match addresses with dots?",
    "Refactor this loop into a list comprehension: for x in items: if x > 0: out.append(x * 2)",
    "How do I undo the last git commit without losing my changes?",
    "Implement binary search in Rust over a sorted vector of integers.",
    "My SQL query with a LEFT JOIN returns duplicate rows, how do I debug it?",
    "Write a unit test for a function that parses dates like 2024-03-09."};

const std::vector<std::string> kMathTemplates = {
    "Calculate the compound interest on 5000 dollars at 4 percent for 3 years.",
    "Solve 3x + 7 = 22 for x.",
    "What is the probability of rolling two sixes with two dice?",
    "Compute the average of 12, 18, 25 and 31.",
    "What is the derivative of x^3 * sin(x)?",
    "If a shirt costs 40 dollars after a 20 percent discount, what was the original price?",
    "What is the standard deviation of 2, 4, 4, 4, 5, 5, 7, 9?",
    "How many ways can 5 people sit around a round dinner party setting?"};

const std::vector<std::string> kParagraphs = {
    "Our team spent the last month moving the billing service to a new database. The move took longer than "
    "planned because two tools depended on an old export format, but customers saw no downtime.",
    "The city council voted to extend the bike lane network by twelve kilometers. Residents raised concerns "
    "about parking, and the council promised a review after the first year.",
    "Thank you for your message. I will not be able to join on Thursday because of a family matter, but I can "
    "send my notes beforehand and catch up with the group next week.",
    "The new onboarding flow cut the average signup time from six minutes to under three. Support tickets "
    "about password resets also dropped noticeably in the first two weeks."};
const std::vector<std::string> kRewriteTemplates = {
    "Summarize this paragraph in two sentences: {}", "Rewrite this in a more formal tone: {}",
    "Paraphrase the following: {}", "Make this more concise: {}", "Proofread and polish this text: {}"};

const std::vector<std::string> kGeneralTemplates = {
    "What time is it in Tokyo when it is noon in London?", "Who wrote One Hundred Years of Solitude?",
    "What is the capital of Australia?", "How do I get a coffee stain out of a wool sweater?",
    "Recommend a good mystery novel for a long flight.", "What is a good substitute for buttermilk in pancakes?",
    "How long should I boil an egg for a soft yolk?", "What does the word serendipity mean?"};

struct Fact {
  std::string statement;  // stored in an earlier turn
  std::string question;   // asked now
  std::string key;        // token the answer must carry
};
const std::vector<Fact> kFacts = {
    {"Note for later: the Lisbon offsite budget is 42000 euros for travel and venue.",
     "What was the Lisbon offsite budget I mentioned earlier?", "42000"},
    {"Remember that my flight to Denver lands at 18:40 on gate B12.",
     "When does my Denver flight land, as I mentioned earlier?", "18:40"},
    {"For reference, the warehouse lease renewal deadline is March 14.",
     "What was the warehouse lease renewal deadline I mentioned earlier?", "march"},
    {"Keep in mind my daughter has allergies to peanuts and sesame.",
     "Which allergies did I mention earlier for my daughter?", "sesame"},
    {"The staging server password rotation happens every 45 days.",
     "How often does the staging server password rotation happen, from earlier?", "45"},
    {"My running target this season is a 21 km half marathon under 1:50.",
     "What was my half marathon running target from earlier?", "1:50"},
    {"The supplier quote for the oak shelving came in at 3100 dollars.",
     "What was the oak shelving supplier quote I mentioned earlier?", "3100"},
    {"Our product launch codename is Bluefin and it ships in October.",
     "What was the product launch codename I mentioned earlier?", "bluefin"}};

const std::vector<std::string> kChatter = {
    "Can you suggest a name for my sourdough starter?", "What is a quick vegetarian dinner idea?",
    "How do I keep basil fresh longer?", "Give me a stretching routine for the morning.",
    "What are some good habits for focus while working from home?", "Suggest a weekend hike near a lake.",
    "How do I politely decline a meeting invite?", "What should I pack for a rainy weekend trip?",
    "Any tips for learning to juggle?", "How do I care for a fiddle leaf fig?",
    "What board games work well for four players?", "How can I sleep better before an early flight?"};

const std::vector<std::string> kAmbiguous = {"Can you look at this?", "Please check this file.",
                                             "Analyze this.", "Help me with this."};
const std::vector<std::string> kAmbiguousText = {"Can you help me with this?", "What do you think about it?",
                                                 "Please take care of this for me.", "Can you fix it?"};

const std::vector<std::string> kDocQa = {"Summarize the main points of this report.",
                                         "What does this contract say about termination?",
                                         "List the action items in this document.",
                                         "What is the deadline mentioned in this pdf?"};
const std::vector<std::string> kTableQa = {"Extract the tables from this report.",
                                           "Pull the revenue table out of this pdf.",
                                           "Extract the quarterly numbers table from this document."};
const std::vector<std::string> kOcrQa = {"Read the text in this scan.", "What does the receipt in this photo say?",
                                         "Read the letter in this picture."};
const std::vector<std::string> kHandwritten = {"Read these handwritten notes.",
                                               "Analyze this document.", "Read the handwritten page in this scan."};
const std::vector<std::string> kVisionQa = {"What is happening in this photo?", "Describe this picture.",
                                            "Who is shown in this photo and what are they doing?"};
const std::vector<std::string> kDetect = {"Detect the objects in this image.", "How many cars are in this picture?",
                                          "Identify every object shown in this photo."};
const std::vector<std::string> kTranscribe = {"Transcribe this recording.",
                                              "Write down what is said in this voicemail.",
                                              "Transcribe the audio of this podcast."};
const std::vector<std::string> kAudioReason = {"What does the speaker say about the deadline in this recording?",
                                               "Summarize the decisions from this call.",
                                               "How many speakers are in this interview?"};
const std::vector<std::string> kVideoQa = {"Which products appear in this video and when?",
                                           "What happens in this clip and at which timestamps?",
                                           "List what appears in this footage with timestamps."};
const std::vector<std::string> kComplex = {
    "Compare the revenue across these quarterly reports and chart the trends.",
    "Consolidate the metrics across these quarterly reports, then compare the trends.",
    "Cross reference the figures in these reports and chart the trends across quarters."};

const std::vector<std::string> kObjects = {"person", "car", "bicycle", "dog", "laptop", "chair", "bottle",
                                           "sneaker", "backpack", "traffic light"};
const std::vector<std::string> kWords = {"the", "deadline", "moves", "to", "friday", "budget", "approved",
                                         "next", "review", "team", "client", "shipment", "delayed", "call",
                                         "back", "tomorrow", "invoice", "sent", "monday", "agreed"};

json text_blocks(Draws& d, int n) {
  json blocks = json::array();
  for (int i = 0; i < n; ++i) {
    std::string s;
    int len = d.between(6, 14);
    for (int k = 0; k < len; ++k) s += (k ? " " : "") + d.pick(kWords);
    blocks.push_back({{"text", s}, {"conf", 0.9}});
  }
  return blocks;
}

json table(Draws& d) {
  json rows = json::array();
  for (const char* m : {"revenue", "cost", "margin", "headcount"})
    rows.push_back({m, std::to_string(d.between(10, 99)), std::to_string(d.between(10, 99))});
  return json::array({{{"headers", {"metric", "q1", "q2"}}, {"rows", rows}}});
}

json detections(Draws& d, int n, double duration) {
  json out = json::array();
  for (int i = 0; i < n; ++i) {
    double t0 = duration > 0 ? std::floor(d.u() * duration * 0.8) : 0;
    double t1 = duration > 0 ? std::min(duration, t0 + 2 + std::floor(d.u() * 6)) : 0;
    out.push_back({{"label", d.pick(kObjects)},
                   {"box", {d.between(0, 400), d.between(0, 300), d.between(20, 200), d.between(20, 200)}},
                   {"t_start", t0},
                   {"t_end", t1},
                   {"conf", 0.8 + 0.15 * d.u()}});
  }
  return out;
}

json transcript(Draws& d, int n, double duration) {
  json out = json::array();
  for (int i = 0; i < n; ++i)
    out.push_back({{"word", d.pick(kWords)}, {"t", duration * double(i) / double(std::max(n, 1))}, {"conf", 0.92}});
  return out;
}

struct Shape {
  ExecutionFlag flag;
  std::vector<TaskKind> tasks;
  std::vector<std::string> evidence;
};

Shape shape_of(Category c) {
  using K = TaskKind;
  using F = ExecutionFlag;
  switch (c) {
    case Category::DocumentQa: return {F::Document, {K::ParsePdf}, {"text_blocks"}};
    case Category::OcrExtraction: return {F::Vision, {K::Ocr}, {"text_blocks"}};
    case Category::TableExtraction: return {F::Document, {K::ExtractTables}, {"tables"}};
    case Category::VisionQa:
    case Category::ObjectDetection: return {F::Vision, {K::DetectObjects}, {"detections"}};
    case Category::AudioTranscription:
    case Category::AudioReasoning: return {F::Audio, {K::Transcribe}, {"transcript"}};
    case Category::VideoAnalysis: return {F::Video, {K::DetectObjects, K::Transcribe}, {"detections", "transcript"}};
    case Category::ComplexOrchestration: return {F::Complex, {K::ExtractTables}, {"tables"}};
    default: return {F::RouteLlm, {}, {"answer"}};
  }
}

// Tool a fixed plan picks first for a task kind (registry order by latency,
// cost, name); degradation targets it.
std::string primary_tool(TaskKind k) {
  switch (k) {
    case TaskKind::DetectObjects: return "yolo-detect";
    case TaskKind::EmbedImage: return "clip-embed";
    case TaskKind::Ocr: return "tesseract-ocr";
    case TaskKind::Transcribe: return "whisper-transcribe";
    case TaskKind::ExtractTables: return "table-detector";
    case TaskKind::ParsePdf: return "pdf-parser";
    case TaskKind::GenerateImage: return "image-generator";
  }
  return "";
}

std::string explicit_instruction(Category c) {
  switch (c) {
    case Category::DocumentQa: return "Summarize the main points of this report.";
    case Category::OcrExtraction: return "Read the text in this scan.";
    case Category::TableExtraction: return "Extract the tables from this report.";
    case Category::VisionQa:
    case Category::ObjectDetection: return "Detect the objects in this image.";
    case Category::AudioTranscription:
    case Category::AudioReasoning: return "Transcribe this recording.";
    case Category::VideoAnalysis: return "Which products appear in this video and when?";
    case Category::ComplexOrchestration: return kComplex.front();
    default: return "What is a good substitute for buttermilk in pancakes?";
  }
}

std::string extension_for(Category c) {
  switch (c) {
    case Category::DocumentQa:
    case Category::TableExtraction:
    case Category::ComplexOrchestration: return ".pdf";
    case Category::OcrExtraction: return ".png";
    case Category::VisionQa:
    case Category::ObjectDetection: return ".jpg";
    case Category::AudioTranscription:
    case Category::AudioReasoning: return ".mp3";
    case Category::VideoAnalysis: return ".mp4";
    default: return "";
  }
}

json make_fixture(Category c, Draws& d) {
  json f;
  switch (c) {
    case Category::DocumentQa:
    case Category::TableExtraction:
    case Category::ComplexOrchestration: {
      int pages = d.between(4, 24);
      f["pages"] = pages;
      f["text_blocks"] = text_blocks(d, d.between(4, 10));
      f["tables"] = table(d);
      f["source_tokens"] = pages * 450;
      break;
    }
    case Category::OcrExtraction:
      f["scanned"] = true;
      f["text_blocks"] = text_blocks(d, d.between(2, 6));
      break;
    case Category::VisionQa:
    case Category::ObjectDetection:
      f["detections"] = detections(d, d.between(2, 7), 0);
      break;
    case Category::AudioTranscription:
    case Category::AudioReasoning: {
      double secs = d.between(30, 240);
      f["duration_s"] = secs;
      f["transcript"] = transcript(d, d.between(20, 60), secs);
      f["source_tokens"] = static_cast<int>(secs * 2.5);
      break;
    }
    case Category::VideoAnalysis: {
      double secs = d.between(8, 30);
      f["duration_s"] = secs;
      f["has_audio"] = true;
      f["detections"] = detections(d, d.between(2, 6), secs);
      f["transcript"] = transcript(d, d.between(10, 40), secs);
      f["source_tokens"] = static_cast<int>(secs * 12);
      break;
    }
    default: break;
  }
  f["confidence"] = 0.85 + 0.1 * d.u();
  return f;
}

bool text_category(Category c) { return shape_of(c).flag == ExecutionFlag::RouteLlm; }

std::string text_query(Category c, Draws& d, double hard_rate) {
  switch (c) {
    case Category::TextReasoning: {
      const auto& topic = d.pick(kReasoningTopics);
      if (d.chance(hard_rate)) return fill(d.pick(kHardTemplates), topic);
      return fill(d.pick(kReasoningTemplates), topic);
    }
    case Category::CodingAssistance: return d.pick(kCodingTemplates);
    case Category::AnalyticalMathematics: return d.pick(kMathTemplates);
    case Category::SummarizationRewriting: return fill(d.pick(kRewriteTemplates), d.pick(kParagraphs));
    default: return d.pick(kGeneralTemplates);
  }
}

// Share of text_reasoning queries written as long multi-part analyses; with
// five text categories this puts ~4% of the text workload on the strong route.
constexpr double kHardReasoningShare = 0.2;

}  // namespace

std::string_view to_string(Category c) { return kCategoryNames[static_cast<std::size_t>(c)]; }

std::optional<Category> parse_category(std::string_view s) {
  for (std::size_t i = 0; i < kCategoryNames.size(); ++i)
    if (kCategoryNames[i] == s) return kAllCategories[i];
  return std::nullopt;
}

WorkloadSpec uniform_workload_spec(std::size_t total_queries, std::uint64_t seed) {
  WorkloadSpec s;
  s.total_queries = total_queries;
  s.seed = seed;
  for (auto c : kAllCategories) s.category_mix[c] = 1.0 / double(kAllCategories.size());
  return s;
}

WorkloadSpec default_workload_spec() {
  WorkloadSpec s = uniform_workload_spec();
  s.failure_injection = {{"*", 0.02}};
  s.ambiguity_rate = 0.015;
  s.degraded_rate = 0.15;
  s.handwritten_rate = 0.2;
  s.truncation_rate = 0.04;
  s.model_error_scale = 0.03;
  s.knob_mix = {{CostKnob::ClosedSrc, 0.6}, {CostKnob::OpenSrc, 0.25}, {CostKnob::TradCouplet, 0.15}};
  return s;
}

void validate(const WorkloadSpec& s) {
  auto bad = [](const std::string& field, const std::string& why) { throw InvalidWorkload(field + ": " + why); };
  if (s.total_queries == 0) bad("total_queries", "must be positive");
  double sum = 0;
  for (auto c : kAllCategories) {
    auto it = s.category_mix.find(c);
    if (it == s.category_mix.end()) bad("category_mix." + std::string(to_string(c)), "missing");
    if (!(it->second >= 0) || !std::isfinite(it->second))
      bad("category_mix." + std::string(to_string(c)), "must be a nonnegative number");
    sum += it->second;
  }
  if (std::abs(sum - 1.0) > 1e-9) bad("category_mix", "proportions sum to " + std::to_string(sum) + ", not 1");
  auto prob = [&](const std::string& field, double p) {
    if (!(p >= 0 && p <= 1)) bad(field, "must be in [0, 1]");
  };
  for (const auto& [tool, p] : s.failure_injection) prob("failure_injection." + tool, p);
  prob("ambiguity_rate", s.ambiguity_rate);
  prob("degraded_rate", s.degraded_rate);
  prob("handwritten_rate", s.handwritten_rate);
  prob("truncation_rate", s.truncation_rate);
  if (!(s.model_error_scale >= 0 && s.model_error_scale <= 1)) bad("model_error_scale", "must be in [0, 1]");
  if (s.min_history_turns < 0 || s.max_history_turns < s.min_history_turns)
    bad("max_history_turns", "history range is empty");
  double ksum = 0;
  for (const auto& [k, p] : s.knob_mix) {
    prob("knob_mix." + std::string(to_string(k)), p);
    ksum += p;
  }
  if (std::abs(ksum - 1.0) > 1e-9) bad("knob_mix", "proportions must sum to 1");
}

json to_json(const WorkloadSpec& s) {
  json mix = json::object(), knobs = json::object();
  for (const auto& [c, p] : s.category_mix) mix[std::string(to_string(c))] = p;
  for (const auto& [k, p] : s.knob_mix) knobs[std::string(to_string(k))] = p;
  return {{"total_queries", s.total_queries},
          {"category_mix", mix},
          {"seed", s.seed},
          {"failure_injection", s.failure_injection},
          {"ambiguity_rate", s.ambiguity_rate},
          {"degraded_rate", s.degraded_rate},
          {"handwritten_rate", s.handwritten_rate},
          {"truncation_rate", s.truncation_rate},
          {"model_error_scale", s.model_error_scale},
          {"min_history_turns", s.min_history_turns},
          {"max_history_turns", s.max_history_turns},
          {"knob_mix", knobs}};
}

WorkloadSpec workload_spec_from_json(const json& j) {
  if (!j.is_object()) throw InvalidWorkload("workload spec: expected an object");
  WorkloadSpec s = default_workload_spec();
  auto number = [&](const char* field, double& out) {
    if (!j.contains(field)) return;
    if (!j[field].is_number()) throw InvalidWorkload(std::string(field) + ": expected a number");
    out = j[field].get<double>();
  };
  auto integer = [&](const char* field, auto& out) {
    if (!j.contains(field)) return;
    if (!j[field].is_number_integer()) throw InvalidWorkload(std::string(field) + ": expected an integer");
    using T = std::decay_t<decltype(out)>;
    if constexpr (std::is_unsigned_v<T>) {
      if (j[field].get<std::int64_t>() < 0) throw InvalidWorkload(std::string(field) + ": must be nonnegative");
    }
    out = j[field].get<T>();
  };
  integer("total_queries", s.total_queries);
  integer("seed", s.seed);
  integer("min_history_turns", s.min_history_turns);
  integer("max_history_turns", s.max_history_turns);
  number("ambiguity_rate", s.ambiguity_rate);
  number("degraded_rate", s.degraded_rate);
  number("handwritten_rate", s.handwritten_rate);
  number("truncation_rate", s.truncation_rate);
  number("model_error_scale", s.model_error_scale);
  if (j.contains("category_mix")) {
    const auto& m = j["category_mix"];
    if (!m.is_object()) throw InvalidWorkload("category_mix: expected an object");
    s.category_mix.clear();
    for (const auto& [k, v] : m.items()) {
      auto c = parse_category(k);
      if (!c) throw InvalidWorkload("category_mix." + k + ": unknown category");
      if (!v.is_number()) throw InvalidWorkload("category_mix." + k + ": expected a number");
      s.category_mix[*c] = v.get<double>();
    }
  }
  if (j.contains("failure_injection")) {
    const auto& m = j["failure_injection"];
    if (!m.is_object()) throw InvalidWorkload("failure_injection: expected an object");
    s.failure_injection.clear();
    for (const auto& [k, v] : m.items()) {
      if (!v.is_number()) throw InvalidWorkload("failure_injection." + k + ": expected a number");
      s.failure_injection[k] = v.get<double>();
    }
  }
  if (j.contains("knob_mix")) {
    const auto& m = j["knob_mix"];
    if (!m.is_object()) throw InvalidWorkload("knob_mix: expected an object");
    s.knob_mix.clear();
    for (const auto& [k, v] : m.items()) {
      auto knob = parse_cost_knob(k);
      if (!knob) throw InvalidWorkload("knob_mix." + k + ": unknown tier");
      if (!v.is_number()) throw InvalidWorkload("knob_mix." + k + ": expected a number");
      s.knob_mix[*knob] = v.get<double>();
    }
  }
  validate(s);
  return s;
}

json reformulated_fixture(const json& fixture) {
  json f = fixture;
  f.erase("tool_confidence");
  f.erase("kind_confidence");
  if (f.contains("refined_text_blocks")) f["text_blocks"] = f["refined_text_blocks"];
  if (f.contains("refined_confidence")) f["confidence"] = f["refined_confidence"];
  return f;
}

Workload generate_workload(const WorkloadSpec& spec) {
  validate(spec);
  Workload w;
  w.spec = spec;

  // Largest-remainder apportionment, then a seeded shuffle.
  std::vector<Category> cats;
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < kAllCategories.size(); ++i) {
    double exact = spec.category_mix.at(kAllCategories[i]) * double(spec.total_queries);
    auto n = static_cast<std::size_t>(std::floor(exact));
    cats.insert(cats.end(), n, kAllCategories[i]);
    assigned += n;
    rema.push_back({exact - double(n), i});
  }
  std::stable_sort(rema.begin(), rema.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < spec.total_queries; ++k, ++assigned)
    cats.push_back(kAllCategories[rema[k % rema.size()].second]);
  Draws order(spec.seed, 0xc0ffee);
  for (std::size_t i = cats.size(); i > 1; --i) std::swap(cats[i - 1], cats[order.below(i)]);

  for (std::size_t i = 0; i < cats.size(); ++i) {
    Category c = cats[i];
    Draws d(spec.seed, i + 1);
    WorkloadQuery q;
    char id[32];
    std::snprintf(id, sizeof id, "q%04zu", i);
    q.id = id;
    auto sh = shape_of(c);
    q.truth.category = c;
    q.truth.expected_flag = sh.flag;
    q.truth.expected_tasks = sh.tasks;
    q.truth.expected_evidence = sh.evidence;

    // Session and tier.
    q.state.session.session_id = "sim-" + hex64(mix_seed({spec.seed, i})).substr(0, 8) + "-" + q.id;
    q.state.session.created_at_ms = 1700000000000LL;
    double ku = d.u(), acc = 0;
    q.state.cost_knob = spec.knob_mix.rbegin()->first;
    for (const auto& [k, p] : spec.knob_mix) {
      acc += p;
      if (ku < acc) {
        q.state.cost_knob = k;
        break;
      }
    }

    // Earlier turns.
    int turns = d.between(spec.min_history_turns, spec.max_history_turns);
    std::optional<Fact> fact;
    int fact_turn = 0;
    if (c == Category::MixedRetrieval && turns > 0) {
      fact = d.pick(kFacts);
      fact_turn = d.between(1, turns);
    }
    for (int t = 1; t <= turns; ++t) {
      auto turn = static_cast<std::uint64_t>(t);
      if (fact && t == fact_turn) {
        q.history.push_back({"User: " + fact->statement, Modality::Text, turn});
        q.history.push_back({"Assistant: Noted. " + fact->statement, Modality::Text, turn});
        continue;
      }
      auto ask = d.pick(kChatter);
      q.history.push_back({"User: " + ask, Modality::Text, turn});
      q.history.push_back({"Assistant: Here are a few suggestions about " + to_lower(ask), Modality::Text, turn});
    }
    q.state.session.turn_count = static_cast<std::uint64_t>(turns);
    if (fact) {
      q.truth.referent_fact = fact->key;
      q.truth.referent_age = static_cast<std::size_t>(2 * (turns - fact_turn));
    }

    // Attachments and fixtures.
    std::size_t n_att = 0;
    if (!text_category(c)) n_att = c == Category::ComplexOrchestration ? static_cast<std::size_t>(d.between(2, 4)) : 1;
    for (std::size_t a = 0; a < n_att; ++a) {
      std::string name = q.id + "_a" + std::to_string(a) + extension_for(c);
      q.state.attachments.push_back(Attachment::path(name));
      q.fixtures[name] = make_fixture(c, d);
    }

    // Query text.
    bool ambiguous = d.chance(spec.ambiguity_rate);
    bool handwritten = c == Category::OcrExtraction && d.chance(spec.handwritten_rate);
    bool degraded = n_att > 0 && !handwritten && d.chance(spec.degraded_rate);
    q.truth.truncated = d.chance(spec.truncation_rate);
    std::string query;
    if (fact)
      query = fact->question;
    else if (text_category(c))
      query = text_query(c, d, kHardReasoningShare);
    else {
      switch (c) {
        case Category::DocumentQa: query = d.pick(kDocQa); break;
        case Category::TableExtraction: query = d.pick(kTableQa); break;
        case Category::OcrExtraction: query = handwritten ? d.pick(kHandwritten) : d.pick(kOcrQa); break;
        case Category::VisionQa: query = d.pick(kVisionQa); break;
        case Category::ObjectDetection: query = d.pick(kDetect); break;
        case Category::AudioTranscription: query = d.pick(kTranscribe); break;
        case Category::AudioReasoning: query = d.pick(kAudioReason); break;
        case Category::VideoAnalysis: query = d.pick(kVideoQa); break;
        case Category::ComplexOrchestration: query = d.pick(kComplex); break;
        default: break;
      }
    }
    q.truth.explicit_query = query;
    if (fact) q.truth.explicit_query = fact->question + " It was: " + fact->statement;
    q.truth.clarification = fact ? fact->statement : explicit_instruction(c);
    if (ambiguous) {
      q.truth.ambiguous = true;
      query = n_att > 0 ? d.pick(kAmbiguous) : d.pick(kAmbiguousText);
      if (!fact) q.truth.clarification = q.truth.explicit_query;
    }
    if (handwritten) {
      q.truth.handwritten = true;
      q.truth.clarification = "dates and names";
      for (auto& [name, f] : q.fixtures) {
        f["tool_confidence"] = {{"tesseract-ocr", 0.2}, {"vision-qa", 0.45}};
        f["refined_confidence"] = 0.85;
        f["notes"] = {"handwritten"};
        f["refined_text_blocks"] = json::array({{{"text", "dates: 12 March, 3 April; names: Ana Ruiz, Tom Okafor"},
                                                 {"conf", 0.85}}});
      }
    }
    if (degraded) {
      q.truth.degraded = true;
      // One attachment's first-choice reader produces junk for one task.
      auto& f = std::next(q.fixtures.begin(), static_cast<std::ptrdiff_t>(d.below(q.fixtures.size())))->second;
      auto task = sh.tasks[d.below(sh.tasks.size())];
      f["tool_confidence"][primary_tool(task)] = 0.15;
    }
    q.state.user_query = query;
    w.queries.push_back(std::move(q));
  }
  return w;
}

std::string Workload::digest() const {
  json qs = json::array();
  for (const auto& q : queries) qs.push_back(q.id + "|" + serialize_state(q.state));
  return hex64(fnv1a64(to_json(spec).dump() + qs.dump()));
}

json to_json(const Workload& w) {
  json qs = json::array();
  for (const auto& q : w.queries) {
    json hist = json::array();
    for (const auto& h : q.history)
      hist.push_back({{"content", h.content}, {"modality", to_string(h.modality)}, {"turn", h.turn}});
    json tasks = json::array();
    for (auto k : q.truth.expected_tasks) tasks.push_back(to_string(k));
    json fixtures = json::object();
    for (const auto& [k, f] : q.fixtures) fixtures[k] = f;
    qs.push_back({{"id", q.id},
                  {"state", to_json(q.state)},
                  {"history", hist},
                  {"fixtures", fixtures},
                  {"truth",
                   {{"category", to_string(q.truth.category)},
                    {"expected_flag", to_string(q.truth.expected_flag)},
                    {"expected_tasks", tasks},
                    {"expected_evidence", q.truth.expected_evidence},
                    {"ambiguous", q.truth.ambiguous},
                    {"degraded", q.truth.degraded},
                    {"handwritten", q.truth.handwritten},
                    {"truncated", q.truth.truncated},
                    {"referent_fact", q.truth.referent_fact},
                    {"referent_age", q.truth.referent_age},
                    {"clarification", q.truth.clarification},
                    {"explicit_query", q.truth.explicit_query}}}});
  }
  return {{"spec", to_json(w.spec)}, {"queries", qs}};
}

Workload workload_from_json(const json& j) {
  if (!j.is_object()) throw InvalidWorkload("workload: expected an object");
  if (!j.contains("queries")) return generate_workload(workload_spec_from_json(j.value("spec", j)));
  Workload w;
  w.spec = workload_spec_from_json(j.value("spec", json::object()));
  std::size_t i = 0;
  for (const auto& qj : j["queries"]) {
    std::string where = "queries[" + std::to_string(i++) + "]";
    try {
      WorkloadQuery q;
      q.id = qj.at("id").get<std::string>();
      q.state = state_from_json(qj.at("state"));
      for (const auto& h : qj.value("history", json::array())) {
        auto m = parse_modality(h.at("modality").get<std::string>());
        if (!m) throw InvalidWorkload(where + ".history: unknown modality");
        q.history.push_back({h.at("content").get<std::string>(), *m, h.at("turn").get<std::uint64_t>()});
      }
      json fixtures = qj.value("fixtures", json::object());
      for (const auto& [k, f] : fixtures.items()) q.fixtures[k] = f;
      const auto& t = qj.at("truth");
      auto c = parse_category(t.at("category").get<std::string>());
      auto f = parse_flag(t.at("expected_flag").get<std::string>());
      if (!c || !f) throw InvalidWorkload(where + ".truth: unknown category or flag");
      q.truth.category = *c;
      q.truth.expected_flag = *f;
      for (const auto& k : t.value("expected_tasks", json::array())) {
        auto kind = parse_task_kind(k.get<std::string>());
        if (!kind) throw InvalidWorkload(where + ".truth.expected_tasks: unknown task");
        q.truth.expected_tasks.push_back(*kind);
      }
      q.truth.expected_evidence = t.value("expected_evidence", std::vector<std::string>{});
      q.truth.ambiguous = t.value("ambiguous", false);
      q.truth.degraded = t.value("degraded", false);
      q.truth.handwritten = t.value("handwritten", false);
      q.truth.truncated = t.value("truncated", false);
      q.truth.referent_fact = t.value("referent_fact", "");
      q.truth.referent_age = t.value("referent_age", std::size_t{0});
      q.truth.clarification = t.value("clarification", "");
      q.truth.explicit_query = t.value("explicit_query", q.state.user_query);
      w.queries.push_back(std::move(q));
    } catch (const InvalidWorkload&) {
      throw;
    } catch (const std::exception& e) {
      throw InvalidWorkload(where + ": " + e.what());
    }
  }
  return w;
}

std::vector<std::string> standard_text_queries(std::size_t n, std::uint64_t seed) {
  const std::array<Category, 5> text{Category::TextReasoning, Category::CodingAssistance,
                                     Category::AnalyticalMathematics, Category::SummarizationRewriting,
                                     Category::GeneralQa};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    Draws d(seed, 0x7e47 + i);
    out.push_back(text_query(text[i % text.size()], d, kHardReasoningShare));
  }
  return out;
}

}  // namespace supervisor
