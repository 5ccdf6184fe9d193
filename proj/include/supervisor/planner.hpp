#pragma once

#include <optional>
#include <string>
#include <vector>

#include "supervisor/couplet.hpp"
#include "supervisor/registry.hpp"
#include "supervisor/routing.hpp"
#include "supervisor/scheduler.hpp"
#include "supervisor/state.hpp"

namespace supervisor {

struct PlanContext {
  const ModelCatalog* catalog = nullptr;  // null: default catalog
  // Decision for the routellm invoke node; computed when absent.
  std::optional<RoutingDecision> routing;
  const RouterConfig* router = nullptr;
  // Answers is_scanned / duration / audio-track questions; may be null.
  const Backend* backend = nullptr;
  const IntentParser* parser = nullptr;
  std::size_t moe_models = 3;
  // Narrowing instruction from a clarification answer, passed to perceptual
  // nodes as the `focus` parameter.
  std::optional<std::string> focus;
  // Vague perceptual instructions fall back to a broad default task instead
  // of raising AmbiguousIntent (used once the user has been asked).
  bool lenient_intent = false;
};

/// Splits a multi-part request on enumerations, "and then", ";" and the like.
/// Always returns at least one subtask.
std::vector<std::string> split_subtasks(const std::string& query);

/// Modality of an attachment as seen by planning: the detected one, else the
/// extension mapping, else unknown.
Modality planning_modality(const Attachment& a);

/// Builds the DAG for a reconciled flag:
///   routellm  route -> invoke
///   audio/vision/document  perceive -> contextualize (one branch per attachment)
///   imagen    generate -> contextualize
///   video     detect || transcribe -> align
///   moe       N models -> aggregate
///   complex   decompose -> per-attachment or per-subtask branches -> synthesize
/// Single-modality flags with several attachments join their branches in a
/// synthesize node. Throws UnplannableQuery when a node has no capable tool and
/// AmbiguousIntent when a perceptual branch has no usable instruction.
ExecutionGraph build_graph(ExecutionFlag flag, const QueryState& state, const ToolRegistry& registry,
                           const PlanContext& ctx = {});

}  // namespace supervisor
