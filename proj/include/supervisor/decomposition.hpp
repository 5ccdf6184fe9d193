#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "supervisor/state.hpp"
#include "supervisor/types.hpp"

namespace supervisor {

struct HeadResponse {
  int status = 0;
  std::optional<std::string> content_type;
};

/// Content probing used by modality detection and URL validation.
class ContentProber {
 public:
  virtual ~ContentProber() = default;
  // nullopt on network failure (timeouts, refused connections).
  virtual std::optional<HeadResponse> head(const std::string& url) = 0;
  virtual bool local_exists(const std::string& path) = 0;
  // Up to `n` leading bytes; empty when unreadable.
  virtual std::vector<std::uint8_t> read_prefix(const std::string& path, std::size_t n) = 0;
};

/// Local filesystem only; every HEAD is a network failure.
class FilesystemProber : public ContentProber {
 public:
  std::optional<HeadResponse> head(const std::string&) override { return std::nullopt; }
  bool local_exists(const std::string& path) override;
  std::vector<std::uint8_t> read_prefix(const std::string& path, std::size_t n) override;
};

/// Scripted responses for tests and simulation.
class StubProber : public ContentProber {
 public:
  std::map<std::string, HeadResponse> heads;
  std::map<std::string, std::vector<std::uint8_t>> files;
  std::vector<std::string> head_calls;
  std::vector<std::string> local_checks;

  std::optional<HeadResponse> head(const std::string& url) override;
  bool local_exists(const std::string& path) override;
  std::vector<std::uint8_t> read_prefix(const std::string& path, std::size_t n) override;
};

struct HttpProberOptions {
  int timeout_ms = 3000;
  int retries = 1;
};

/// HEAD over http/https via cpp-httplib; local checks on the filesystem.
class HttpProber : public FilesystemProber {
 public:
  explicit HttpProber(HttpProberOptions opts = {}) : opts_(opts) {}
  std::optional<HeadResponse> head(const std::string& url) override;

 private:
  HttpProberOptions opts_;
};

// Lowercase extension without the dot; URL query/fragment stripped.
std::string extension_of(const std::string& name);
std::optional<Modality> modality_from_extension(const std::string& ext);
std::optional<Modality> modality_from_mime(const std::string& mime);
std::optional<Modality> modality_from_magic(std::span<const std::uint8_t> head);

/// extension map -> MIME (declared, or HEAD for URLs) -> magic bytes -> unknown.
Modality detect_modality(const Attachment& attachment, ContentProber& prober);

struct ValidationResult {
  bool scheme_ok = false;
  bool reachable = false;
  bool content_type_ok = false;
  std::optional<std::string> resolved_mime;
  std::optional<std::string> fallback_local_path;
};

/// Scheme, reachability and content-type tiers, with local-path fallback.
/// Throws UnreachableAttachment naming the first failing tier.
ValidationResult validate_url(const std::string& url, ContentProber& prober,
                              std::optional<Modality> expected = std::nullopt);

using FlagScores = std::array<double, 8>;  // indexed by ExecutionFlag

class FlagClassifier {
 public:
  virtual ~FlagClassifier() = default;
  // A score for every flag; may throw on backend failure.
  virtual FlagScores scores(const std::string& query, const std::set<Modality>& modalities) const = 0;
};

struct FlagRule {
  std::vector<std::string> keywords;
  std::set<Modality> required_modalities;
  std::set<Modality> forbidden_modalities;
  double keyword_weight = 1.0;
  double modality_weight = 0.0;
  double bias = 0.0;
  // Added when two or more perceptual modalities arrive together.
  double mixed_weight = 0.0;
};

/// Ordered rule table: keyword hits plus modality gates.
class RuleFlagClassifier : public FlagClassifier {
 public:
  RuleFlagClassifier();  // built-in table
  explicit RuleFlagClassifier(std::map<ExecutionFlag, FlagRule> rules);

  FlagScores scores(const std::string& query, const std::set<Modality>& modalities) const override;

  const std::map<ExecutionFlag, FlagRule>& rules() const { return rules_; }
  nlohmann::json to_json() const;
  static RuleFlagClassifier from_json(const nlohmann::json& j);
  static RuleFlagClassifier load(const std::string& path);

 private:
  std::map<ExecutionFlag, FlagRule> rules_;
};

std::map<ExecutionFlag, FlagRule> default_flag_rules();

// Number of occurrences of a (possibly multi-word) keyword in tokenized text.
std::size_t count_phrase(const std::vector<std::string>& tokens, const std::string& phrase);

struct FlagDecision {
  ExecutionFlag flag = ExecutionFlag::Moe;
  FlagScores scores{};
  bool fell_back = false;
  std::string note;
};

/// Argmax with ties broken by flag declaration order. A failing classifier
/// falls back to the built-in rules and says so in `note`.
FlagDecision classify_flag(const std::string& query, const std::set<Modality>& modalities,
                           const FlagClassifier& classifier);

ExecutionFlag argmax_flag(const FlagScores& scores);

/// Modality flags without a matching attachment become moe.
ExecutionFlag reconcile_flag(ExecutionFlag flag, const std::set<Modality>& modalities);

}  // namespace supervisor
