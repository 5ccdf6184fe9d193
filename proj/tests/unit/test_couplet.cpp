#include <doctest.h>

#include <httplib.h>

#include <thread>

#include "supervisor/couplet.hpp"
#include "supervisor/errors.hpp"
#include "supervisor/registry.hpp"
#include "supervisor/util.hpp"

using namespace supervisor;
using nlohmann::json;

namespace {

Attachment att(const std::string& name, Modality m) {
  auto a = Attachment::path(name);
  a.detected_modality = m;
  return a;
}

std::string golden(const std::string& name) {
  return read_file(std::string(SUPERVISOR_TEST_DIR) + "/unit/golden/" + name);
}

}  // namespace

TEST_SUITE("couplet") {

TEST_CASE("video product question becomes frame detection") {
  auto t = parse_intent("what products are shown in this video", Modality::Video, att("ad.mp4", Modality::Video));
  CHECK(t.kind == TaskKind::DetectObjects);
  CHECK(t.parameters.count("frame_interval_s") == 1);
  CHECK(t.attachment_id == "ad.mp4");
}

TEST_CASE("transcribe verb maps directly") {
  auto t = parse_intent("transcribe", Modality::Audio, att("a.mp3", Modality::Audio));
  CHECK(t.kind == TaskKind::Transcribe);
  CHECK(t.parameters.at("language") == "auto");
}

TEST_CASE("scanned sources go to OCR, native documents to the parser") {
  CHECK(parse_intent("analyze this document", Modality::Image, att("notes.png", Modality::Image), true).kind ==
        TaskKind::Ocr);
  CHECK(parse_intent("analyze this document", Modality::Document, att("r.pdf", Modality::Document), true).kind ==
        TaskKind::Ocr);
  CHECK(parse_intent("analyze this document", Modality::Document, att("r.pdf", Modality::Document), false).kind ==
        TaskKind::ParsePdf);
  CHECK(parse_intent("identify the objects", Modality::Image, att("p.jpg", Modality::Image)).kind ==
        TaskKind::DetectObjects);
}

TEST_CASE("vague image instructions are ambiguous") {
  CHECK_THROWS_AS(parse_intent("hmm", Modality::Image, att("p.jpg", Modality::Image)), AmbiguousIntent);
  CHECK_THROWS_AS(parse_intent("x", Modality::Text, att("p.txt", Modality::Text)), std::invalid_argument);
}

TEST_CASE("task parameters are validated") {
  PerceptualTask t;
  t.kind = TaskKind::DetectObjects;
  t.parameters["frame_interval_s"] = "-1";
  CHECK_THROWS_AS(validate_task(t), InvalidTask);
  t.parameters = {{"warp_speed", "9"}};
  CHECK_THROWS_AS(validate_task(t), InvalidTask);
  t.parameters = {{"frame_interval_s", "0.5"}};
  CHECK_NOTHROW(validate_task(t));
}

TEST_CASE("ten frames at 180 ms") {
  SimulatedBackend b;
  b.add_fixture("clip.mp4", json{{"frame_count", 10}, {"detections", json::array()}});
  auto reg = default_registry();
  PerceptualTask t;
  t.kind = TaskKind::DetectObjects;
  t.source = att("clip.mp4", Modality::Video);
  t.attachment_id = "clip.mp4";
  auto p = execute_perceptual(t, b, reg.spec(reg.id_of("yolo-detect")), 1);
  CHECK(p.frames == 10);
  CHECK(p.latency_ms == 1800);
  CHECK(p.tool == "yolo-detect");
}

TEST_CASE("empty audio gives an empty transcript") {
  SimulatedBackend b;
  b.add_fixture("silence.wav", json{{"transcript", json::array()}, {"confidence", 0.7}});
  auto reg = default_registry();
  PerceptualTask t;
  t.kind = TaskKind::Transcribe;
  t.parameters["language"] = "auto";
  t.source = att("silence.wav", Modality::Audio);
  t.attachment_id = "silence.wav";
  auto p = execute_perceptual(t, b, reg.spec(reg.id_of("whisper-transcribe")), 1);
  CHECK(p.transcript.empty());
  CHECK(p.confidence == doctest::Approx(0.7));
}

TEST_CASE("simulated backend is deterministic and scripts failures") {
  SimulatedBackend b;
  b.add_fixture("doc.pdf", json{{"text_blocks", {{{"text", "hi"}, {"conf", 0.9}}}}, {"fail", {"pdf-parser"}}});
  auto reg = default_registry();
  PerceptualTask t;
  t.kind = TaskKind::ParsePdf;
  t.source = att("doc.pdf", Modality::Document);
  t.attachment_id = "doc.pdf";
  CHECK_THROWS_AS(b.invoke(t, reg.spec(reg.id_of("pdf-parser")), 3), NodeFailure);
  t.kind = TaskKind::Ocr;
  auto x = b.invoke(t, reg.spec(reg.id_of("tesseract-ocr")), 3);
  auto y = b.invoke(t, reg.spec(reg.id_of("tesseract-ocr")), 3);
  CHECK(to_json(x) == to_json(y));
}

TEST_CASE("HTTP 503 is a retriable node failure") {
  httplib::Server srv;
  int hits = 0;
  srv.Post("/detect", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 503;
  });
  srv.Post("/ok", [&](const httplib::Request& req, httplib::Response& res) {
    auto body = json::parse(req.body);
    json out = {{"kind", body["kind"]}, {"confidence", 0.8}, {"detections", json::array()}};
    res.set_content(out.dump(), "application/json");
  });
  int port = srv.bind_to_any_port("127.0.0.1");
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();

  ToolSpec tool;
  tool.name = "remote-detect";
  tool.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/detect";
  PerceptualTask t;
  t.kind = TaskKind::DetectObjects;
  t.source = att("p.jpg", Modality::Image);
  t.attachment_id = "p.jpg";
  HttpBackend http({2000, 1});
  try {
    http.invoke(t, tool, 1);
    FAIL("expected NodeFailure");
  } catch (const NodeFailure& e) {
    CHECK(e.retriable());
  }
  CHECK(hits == 2);

  tool.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/ok";
  auto p = http.invoke(t, tool, 1);
  CHECK(p.confidence == doctest::Approx(0.8));
  CHECK(p.tool == "remote-detect");
  srv.stop();
  th.join();
}

TEST_CASE("sneakers pair with the mention at 0:14") {
  std::vector<Detection> d{{"sneakers", {0.3, 0.4, 0.3, 0.4}, 12, 18, 0.94}};
  std::vector<TranscriptWord> w{{"intro", 2, 0.9}, {"Air", 14, 0.9}, {"Jordan", 14.3, 0.9}, {"outro", 40, 0.9}};
  auto tl = align_timeline(d, w);
  REQUIRE(tl.size() == 1);
  CHECK(tl[0].t_start == 12);
  CHECK(tl[0].t_end == 18);
  CHECK(tl[0].mentions == std::vector<std::string>{"Air", "Jordan"});
  CHECK(render_timeline(tl).find("0:12") != std::string::npos);
  CHECK(format_timestamp(75) == "1:15");
}

TEST_CASE("alignment tolerance is inclusive") {
  std::vector<Detection> d{{"x", {}, 10, 12, 0.9}};
  CHECK(align_timeline(d, {{"edge", 13.0, 0.9}})[0].mentions.size() == 1);
  CHECK(align_timeline(d, {{"late", 13.5, 0.9}})[0].mentions.empty());
  CHECK(align_timeline(d, {{"late", 13.5, 0.9}}, 2.0)[0].mentions.size() == 1);
}

TEST_CASE("empty detections say nothing was found") {
  RawPayload p;
  p.kind = TaskKind::DetectObjects;
  auto e = contextualize(p, TaskKind::DetectObjects, "what is here", "n1");
  CHECK(to_lower(e.summary_text).find("no objects") != std::string::npos);
}

TEST_CASE("kind mismatch is a type error") {
  RawPayload p;
  p.kind = TaskKind::Ocr;
  CHECK_THROWS_AS(contextualize(p, TaskKind::Transcribe, "q", "n"), EvidenceTypeError);
}

TEST_CASE("table summary matches the golden file") {
  RawPayload p;
  p.kind = TaskKind::ExtractTables;
  p.confidence = 0.93;
  p.tables = {{{"Metric", "Q1"}, {{"Revenue", "$4.2M"}, {"Gross margin", "38%"}, {"Operating income", "$0.61M"}}}};
  auto e = contextualize(p, TaskKind::ExtractTables, "extract the tables", "tables-1");
  REQUIRE(e.payload.tables.size() == 1);
  CHECK(e.payload.tables[0].rows.size() == 3);
  CHECK(e.summary_text == golden("table_summary.txt"));
}

TEST_CASE("payload JSON round-trips") {
  RawPayload p;
  p.kind = TaskKind::Transcribe;
  p.tool = "whisper";
  p.transcript = {{"a", 0.5, 0.9}, {"b", 1.0, 0.8}};
  p.notes = {"handwritten"};
  p.confidence = 0.7;
  CHECK(to_json(raw_payload_from_json(to_json(p))) == to_json(p));
}

}  // TEST_SUITE
