#include <httplib.h>

#include "supervisor/couplet.hpp"
#include "supervisor/engine.hpp"
#include "supervisor/errors.hpp"
#include "supervisor/util.hpp"

namespace supervisor {

using nlohmann::json;

namespace {

// POST with retries on 5xx and transport errors; 4xx and non-JSON bodies are
// permanent failures.
json post_json(const ToolSpec& tool, const json& body, int timeout_ms, int retries) {
  if (tool.endpoint.empty()) throw NodeFailure("tool " + tool.name + " has no endpoint", false);
  const auto& url = tool.endpoint;
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw NodeFailure("bad endpoint for " + tool.name + ": " + url, false);
  auto rest = url.substr(scheme_end + 3);
  auto slash = rest.find('/');
  std::string base = url.substr(0, scheme_end + 3) + rest.substr(0, slash);
  std::string path = slash == std::string::npos ? "/" : rest.substr(slash);

  httplib::Client cli(base);
  auto secs = timeout_ms / 1000;
  auto usecs = (timeout_ms % 1000) * 1000;
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);

  std::string last_error;
  for (int attempt = 0; attempt <= retries; ++attempt) {
    auto res = cli.Post(path, body.dump(), "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status >= 400) throw NodeFailure(tool.name + " rejected request: HTTP " + std::to_string(res->status), false);
    json j = json::parse(res->body, nullptr, false);
    if (j.is_discarded()) throw NodeFailure(tool.name + " returned a non-JSON body", false);
    return j;
  }
  throw NodeFailure(tool.name + " unavailable after " + std::to_string(retries + 1) + " attempt(s): " + last_error,
                    true);
}

}  // namespace

RawPayload HttpBackend::invoke(const PerceptualTask& task, const ToolSpec& tool, std::uint64_t seed) {
  json body = {{"kind", to_string(task.kind)},
               {"parameters", task.parameters},
               {"source", {{"id", task.attachment_id}, {"location", task.source.location}}},
               {"seed", seed}};
  if (task.source.kind == Attachment::SourceKind::Inline)
    body["source"]["inline_base64"] = base64_encode(task.source.inline_bytes);
  json j = post_json(tool, body, opts_.timeout_ms, opts_.retries);
  try {
    auto p = raw_payload_from_json(j);
    if (p.tool.empty()) p.tool = tool.name;
    return p;
  } catch (const std::exception& e) {
    throw NodeFailure(tool.name + " returned a malformed payload: " + e.what(), false);
  }
}

LlmReply HttpLanguageBackend::complete(const LlmRequest& req, const ToolSpec& tool, std::uint64_t seed) {
  if (tool.endpoint.empty()) return fallback_.complete(req, tool, seed);
  json body = {{"model", req.model},
               {"role", req.role},
               {"prompt", req.prompt},
               {"max_tokens", req.max_output_tokens},
               {"seed", seed}};
  json j = post_json(tool, body, timeout_ms_, 1);
  try {
    LlmReply r;
    r.text = j.at("text").get<std::string>();
    r.prompt_tokens = j.at("prompt_tokens").get<std::size_t>() + req.extra_tokens;
    r.output_tokens = j.at("completion_tokens").get<std::size_t>();
    r.confidence = j.value("confidence", 0.9);
    return r;
  } catch (const json::exception& e) {
    throw NodeFailure(tool.name + " returned a malformed completion: " + e.what(), false);
  }
}

}  // namespace supervisor
