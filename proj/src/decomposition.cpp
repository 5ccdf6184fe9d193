#include "supervisor/decomposition.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "supervisor/errors.hpp"
#include "supervisor/util.hpp"

namespace supervisor {

using nlohmann::json;

bool FilesystemProber::local_exists(const std::string& path) {
  std::error_code ec;
  return std::filesystem::is_regular_file(path, ec);
}

std::vector<std::uint8_t> FilesystemProber::read_prefix(const std::string& path, std::size_t n) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  std::vector<std::uint8_t> buf(n);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
  buf.resize(static_cast<std::size_t>(in.gcount()));
  return buf;
}

std::optional<HeadResponse> StubProber::head(const std::string& url) {
  head_calls.push_back(url);
  auto it = heads.find(url);
  if (it == heads.end()) return std::nullopt;
  return it->second;
}

bool StubProber::local_exists(const std::string& path) {
  local_checks.push_back(path);
  return files.contains(path);
}

std::vector<std::uint8_t> StubProber::read_prefix(const std::string& path, std::size_t n) {
  auto it = files.find(path);
  if (it == files.end()) return {};
  auto& bytes = it->second;
  return {bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(std::min(n, bytes.size()))};
}

std::string extension_of(const std::string& name) {
  std::string s = name;
  if (auto q = s.find_first_of("?#"); q != std::string::npos) s.resize(q);
  auto slash = s.find_last_of('/');
  auto base = slash == std::string::npos ? s : s.substr(slash + 1);
  auto dot = base.find_last_of('.');
  if (dot == std::string::npos || dot + 1 == base.size()) return "";
  return to_lower(base.substr(dot + 1));
}

std::optional<Modality> modality_from_extension(const std::string& ext) {
  static const std::map<std::string, Modality> table = {
      {"jpg", Modality::Image},     {"jpeg", Modality::Image},    {"png", Modality::Image},
      {"gif", Modality::Image},     {"webp", Modality::Image},    {"bmp", Modality::Image},
      {"tif", Modality::Image},     {"tiff", Modality::Image},    {"mp3", Modality::Audio},
      {"wav", Modality::Audio},     {"m4a", Modality::Audio},     {"flac", Modality::Audio},
      {"ogg", Modality::Audio},     {"mp4", Modality::Video},     {"avi", Modality::Video},
      {"mov", Modality::Video},     {"mkv", Modality::Video},     {"webm", Modality::Video},
      {"pdf", Modality::Document},  {"docx", Modality::Document}, {"xlsx", Modality::Document},
      {"pptx", Modality::Document},
  };
  auto it = table.find(ext);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

std::optional<Modality> modality_from_mime(const std::string& raw) {
  std::string mime = to_lower(raw);
  if (auto semi = mime.find(';'); semi != std::string::npos) mime.resize(semi);
  while (!mime.empty() && mime.back() == ' ') mime.pop_back();
  auto starts = [&](std::string_view p) { return mime.rfind(p, 0) == 0; };
  if (starts("image/")) return Modality::Image;
  if (starts("audio/")) return Modality::Audio;
  if (starts("video/")) return Modality::Video;
  if (mime == "application/pdf" || mime == "application/msword" ||
      starts("application/vnd.openxmlformats-officedocument.") || mime == "application/vnd.ms-excel" ||
      mime == "application/vnd.ms-powerpoint")
    return Modality::Document;
  return std::nullopt;
}

std::optional<Modality> modality_from_magic(std::span<const std::uint8_t> h) {
  auto at = [&](std::size_t off, std::string_view sig) {
    if (h.size() < off + sig.size()) return false;
    return std::memcmp(h.data() + off, sig.data(), sig.size()) == 0;
  };
  if (at(0, "\x89PNG\r\n\x1a\n")) return Modality::Image;
  if (at(0, "\xff\xd8\xff")) return Modality::Image;
  if (at(0, "GIF87a") || at(0, "GIF89a")) return Modality::Image;
  if (at(0, "RIFF") && at(8, "WEBP")) return Modality::Image;
  if (at(0, "BM")) return Modality::Image;
  if (at(0, "%PDF-")) return Modality::Document;
  if (at(0, "ID3") || at(0, "fLaC") || at(0, "OggS")) return Modality::Audio;
  if (at(0, "RIFF") && at(8, "WAVE")) return Modality::Audio;
  if (h.size() >= 2 && h[0] == 0xff && (h[1] & 0xe0) == 0xe0) return Modality::Audio;  // MPEG frame sync
  if (at(0, "RIFF") && at(8, "AVI ")) return Modality::Video;
  if (at(0, "\x1a\x45\xdf\xa3")) return Modality::Video;  // Matroska/WebM
  if (at(4, "ftyp")) return at(8, "M4A") ? Modality::Audio : Modality::Video;
  if (at(0, "PK\x03\x04")) return Modality::Document;  // OOXML container
  return std::nullopt;
}

Modality detect_modality(const Attachment& a, ContentProber& prober) {
  if (auto m = modality_from_extension(extension_of(a.display_name()))) return *m;
  if (a.kind == Attachment::SourceKind::Url && a.declared_name)
    if (auto m = modality_from_extension(extension_of(a.location))) return *m;

  if (a.mime)
    if (auto m = modality_from_mime(*a.mime)) return *m;
  if (a.kind == Attachment::SourceKind::Url) {
    // Network failure falls through to the next tier.
    if (auto resp = prober.head(a.location); resp && resp->content_type)
      if (auto m = modality_from_mime(*resp->content_type)) return *m;
  }

  constexpr std::size_t kMagicBytes = 16;
  std::vector<std::uint8_t> head;
  if (a.kind == Attachment::SourceKind::Inline) {
    head.assign(a.inline_bytes.begin(),
                a.inline_bytes.begin() + static_cast<std::ptrdiff_t>(std::min(kMagicBytes, a.inline_bytes.size())));
  } else if (a.kind == Attachment::SourceKind::Path) {
    head = prober.read_prefix(a.location, kMagicBytes);
  }
  if (auto m = modality_from_magic(head)) return *m;
  return Modality::Unknown;
}

namespace {

std::string scheme_of(const std::string& url) {
  auto p = url.find("://");
  if (p == std::string::npos) return "";
  return to_lower(url.substr(0, p));
}

std::vector<std::string> local_candidates(const std::string& url) {
  std::vector<std::string> out{url};
  auto p = url.find("://");
  if (p != std::string::npos) {
    auto rest = url.substr(p + 3);
    if (scheme_of(url) == "file") {
      out.push_back(rest);
    } else if (auto slash = rest.find('/'); slash != std::string::npos) {
      out.push_back(rest.substr(slash));
    }
  }
  return out;
}

}  // namespace

ValidationResult validate_url(const std::string& url, ContentProber& prober, std::optional<Modality> expected) {
  ValidationResult r;
  std::string failing;
  auto scheme = scheme_of(url);
  r.scheme_ok = scheme == "http" || scheme == "https";
  if (!r.scheme_ok) {
    failing = "scheme";
  } else {
    auto resp = prober.head(url);
    r.reachable = resp && resp->status >= 200 && resp->status < 400;
    if (!r.reachable) {
      failing = "reachability";
    } else {
      if (resp->content_type) r.resolved_mime = *resp->content_type;
      if (!expected) {
        r.content_type_ok = true;
      } else {
        auto m = r.resolved_mime ? modality_from_mime(*r.resolved_mime) : std::nullopt;
        r.content_type_ok = m && *m == *expected;
      }
      if (!r.content_type_ok) failing = "content_type";
    }
  }
  if (failing.empty()) return r;

  for (const auto& candidate : local_candidates(url)) {
    if (prober.local_exists(candidate)) {
      r.fallback_local_path = candidate;
      return r;
    }
  }
  throw UnreachableAttachment(url, failing);
}

std::size_t count_phrase(const std::vector<std::string>& tokens, const std::string& phrase) {
  auto parts = words(phrase);
  if (parts.empty() || parts.size() > tokens.size()) return 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i + parts.size() <= tokens.size(); ++i)
    if (std::equal(parts.begin(), parts.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i))) ++n;
  return n;
}

std::map<ExecutionFlag, FlagRule> default_flag_rules() {
  using M = Modality;
  const std::set<Modality> any_attachment{M::Image, M::Audio, M::Video, M::Document, M::Unknown};
  std::map<ExecutionFlag, FlagRule> r;
  r[ExecutionFlag::Audio] = {{"transcribe", "transcription", "recording", "podcast", "speaker", "speakers",
                              "audio", "said", "listen", "voicemail", "interview", "spoken", "call"},
                             {M::Audio}, {}, 0.5, 2.0, 0.0};
  r[ExecutionFlag::Video] = {{"video", "clip", "footage", "frames", "scene", "advertisement", "timestamps",
                              "happens", "appear", "appears"},
                             {M::Video}, {}, 0.5, 2.0, 0.0};
  r[ExecutionFlag::Vision] = {{"image", "photo", "picture", "objects", "identify", "detect", "shown",
                               "handwritten", "scan", "notes", "screenshot"},
                              {M::Image}, {}, 0.5, 2.0, 0.0};
  r[ExecutionFlag::Document] = {{"document", "pdf", "report", "reports", "page", "pages", "table", "tables",
                                 "contract", "invoice", "extract", "slides", "spreadsheet"},
                                {M::Document}, {}, 0.5, 2.0, 0.0};
  r[ExecutionFlag::Imagen] = {{"draw", "generate an image", "create an image", "render", "illustration",
                               "sketch", "paint", "design a logo", "poster", "make a picture"},
                              {}, {M::Image}, 3.0, 0.0, 0.0};
  r[ExecutionFlag::RouteLlm] = {{}, {}, any_attachment, 0.0, 0.0, 1.5};
  r[ExecutionFlag::Moe] = {{"perspectives", "experts", "expert", "viewpoints", "cross check", "ensemble",
                            "second opinion", "multiple models", "several models", "debate"},
                           {}, {}, 3.0, 0.0, 0.1};
  r[ExecutionFlag::Complex] = {{"compare", "trends", "chart", "visualizations", "visualization", "across",
                                "step by step", "and then", "combine", "cross reference", "consolidate",
                                "quarterly reports", "multi step", "correlate", "reconcile"},
                               {}, {}, 2.5, 0.0, 0.0, 3.0};
  return r;
}

RuleFlagClassifier::RuleFlagClassifier() : rules_(default_flag_rules()) {}
RuleFlagClassifier::RuleFlagClassifier(std::map<ExecutionFlag, FlagRule> rules) : rules_(std::move(rules)) {}

FlagScores RuleFlagClassifier::scores(const std::string& query, const std::set<Modality>& modalities) const {
  FlagScores out{};
  auto tokens = words(query);
  std::size_t perceptual = 0;
  for (auto m : {Modality::Image, Modality::Audio, Modality::Video, Modality::Document})
    perceptual += modalities.contains(m);
  for (auto f : kAllFlags) {
    auto it = rules_.find(f);
    if (it == rules_.end()) continue;
    const auto& rule = it->second;
    bool gated = false;
    for (auto m : rule.required_modalities)
      if (!modalities.contains(m)) gated = true;
    for (auto m : rule.forbidden_modalities)
      if (modalities.contains(m)) gated = true;
    if (gated) continue;  // score stays 0
    double s = rule.bias;
    if (!rule.required_modalities.empty()) s += rule.modality_weight;
    if (perceptual >= 2) s += rule.mixed_weight;
    for (const auto& k : rule.keywords) s += rule.keyword_weight * static_cast<double>(count_phrase(tokens, k) > 0);
    out[static_cast<std::size_t>(f)] = s;
  }
  return out;
}

json RuleFlagClassifier::to_json() const {
  json j = json::object();
  for (const auto& [flag, rule] : rules_) {
    json req = json::array(), forb = json::array();
    for (auto m : rule.required_modalities) req.push_back(to_string(m));
    for (auto m : rule.forbidden_modalities) forb.push_back(to_string(m));
    j[std::string(to_string(flag))] = {{"keywords", rule.keywords},
                                       {"required_modalities", req},
                                       {"forbidden_modalities", forb},
                                       {"weights", {{"keyword", rule.keyword_weight},
                                                    {"modality", rule.modality_weight},
                                                    {"bias", rule.bias},
                                                    {"mixed_modalities", rule.mixed_weight}}}};
  }
  return j;
}

RuleFlagClassifier RuleFlagClassifier::from_json(const json& j) {
  if (!j.is_object()) throw InvalidSpec("flag rule table must be a JSON object");
  std::map<ExecutionFlag, FlagRule> rules;
  auto modset = [](const json& arr) {
    std::set<Modality> s;
    for (const auto& m : arr) {
      auto mod = parse_modality(m.get<std::string>());
      if (!mod) throw InvalidSpec("unknown modality in flag rules: " + m.get<std::string>());
      s.insert(*mod);
    }
    return s;
  };
  try {
    for (const auto& [key, val] : j.items()) {
      auto flag = parse_flag(key);
      if (!flag) throw InvalidSpec("unknown flag in rule table: " + key);
      FlagRule r;
      r.keywords = val.value("keywords", std::vector<std::string>{});
      r.required_modalities = modset(val.value("required_modalities", json::array()));
      r.forbidden_modalities = modset(val.value("forbidden_modalities", json::array()));
      auto w = val.value("weights", json::object());
      r.keyword_weight = w.value("keyword", 1.0);
      r.modality_weight = w.value("modality", 0.0);
      r.bias = w.value("bias", 0.0);
      r.mixed_weight = w.value("mixed_modalities", 0.0);
      rules[*flag] = std::move(r);
    }
  } catch (const json::exception& e) {
    throw InvalidSpec(std::string("malformed flag rules: ") + e.what());
  }
  return RuleFlagClassifier(std::move(rules));
}

RuleFlagClassifier RuleFlagClassifier::load(const std::string& path) {
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw InvalidSpec("flag rules " + path + " is not valid JSON");
  return from_json(j);
}

ExecutionFlag argmax_flag(const FlagScores& scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;  // strict: earlier flag wins ties
  return kAllFlags[best];
}

FlagDecision classify_flag(const std::string& query, const std::set<Modality>& modalities,
                           const FlagClassifier& classifier) {
  FlagDecision d;
  try {
    d.scores = classifier.scores(query, modalities);
    for (double s : d.scores)
      if (!std::isfinite(s)) throw std::runtime_error("classifier returned a non-finite score");
  } catch (const std::exception& e) {
    d.fell_back = true;
    d.note = std::string("flag classifier failed, using rule table: ") + e.what();
    d.scores = RuleFlagClassifier().scores(query, modalities);
  }
  d.flag = argmax_flag(d.scores);
  return d;
}

ExecutionFlag reconcile_flag(ExecutionFlag flag, const std::set<Modality>& modalities) {
  if (auto need = required_modality(flag); need && !modalities.contains(*need)) return ExecutionFlag::Moe;
  return flag;
}

}  // namespace supervisor
