#pragma once

#include <stdexcept>
#include <string>

namespace supervisor {

/// Base of every typed failure the engine raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SUPERVISOR_DEFINE_ERROR(Name)          \
  class Name : public Error {                  \
   public:                                     \
    using Error::Error;                        \
  }

// core-state
SUPERVISOR_DEFINE_ERROR(SizeExceeded);
SUPERVISOR_DEFINE_ERROR(VersionMismatch);
SUPERVISOR_DEFINE_ERROR(CorruptState);
SUPERVISOR_DEFINE_ERROR(InvalidState);
SUPERVISOR_DEFINE_ERROR(UnknownSession);

// tool-registry
SUPERVISOR_DEFINE_ERROR(DuplicateTool);
SUPERVISOR_DEFINE_ERROR(InvalidSpec);
SUPERVISOR_DEFINE_ERROR(UnknownTool);

// routing
SUPERVISOR_DEFINE_ERROR(UnknownModel);
SUPERVISOR_DEFINE_ERROR(ScorerUnavailable);

// memory
SUPERVISOR_DEFINE_ERROR(EmbeddingUnavailable);
SUPERVISOR_DEFINE_ERROR(DimensionMismatch);
SUPERVISOR_DEFINE_ERROR(CompressorUnavailable);

// couplet
SUPERVISOR_DEFINE_ERROR(AmbiguousIntent);
SUPERVISOR_DEFINE_ERROR(EvidenceTypeError);
SUPERVISOR_DEFINE_ERROR(InvalidTask);

// scheduler
SUPERVISOR_DEFINE_ERROR(InvalidGraph);

// harness
SUPERVISOR_DEFINE_ERROR(IncomparableReports);
SUPERVISOR_DEFINE_ERROR(InvalidWorkload);

#undef SUPERVISOR_DEFINE_ERROR

/// No registered tool satisfies a requirement.
class NoCapableTool : public Error {
 public:
  NoCapableTool(std::string unmet)
      : Error("no capable tool for requirement " + unmet), unmet_(std::move(unmet)) {}
  const std::string& unmet_requirement() const { return unmet_; }

 private:
  std::string unmet_;
};

/// Planning failed because some node had no capable tool.
class UnplannableQuery : public Error {
 public:
  UnplannableQuery(std::string unmet)
      : Error("query cannot be planned: " + unmet), unmet_(std::move(unmet)) {}
  const std::string& unmet_requirement() const { return unmet_; }

 private:
  std::string unmet_;
};

/// Every URL validation tier failed and no local file exists.
class UnreachableAttachment : public Error {
 public:
  UnreachableAttachment(std::string source, std::string failing_tier)
      : Error("attachment unreachable (" + failing_tier + "): " + source),
        source_(std::move(source)),
        tier_(std::move(failing_tier)) {}
  const std::string& source() const { return source_; }
  const std::string& failing_tier() const { return tier_; }

 private:
  std::string source_;
  std::string tier_;
};

class BudgetExceeded : public Error {
 public:
  using Error::Error;
};

/// A backend invocation failed. `retriable` marks transient causes
/// (timeouts, 5xx) as opposed to permanent ones.
class NodeFailure : public Error {
 public:
  NodeFailure(std::string cause, bool retriable)
      : Error(std::move(cause)), retriable_(retriable) {}
  bool retriable() const { return retriable_; }

 private:
  bool retriable_;
};

}  // namespace supervisor
