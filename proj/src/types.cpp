#include "supervisor/types.hpp"

namespace supervisor {

std::string_view to_string(CostKnob k) {
  switch (k) {
    case CostKnob::OpenSrc: return "open_src";
    case CostKnob::ClosedSrc: return "closed_src";
    case CostKnob::TradCouplet: return "trad_couplet";
  }
  return "closed_src";
}

std::string_view to_string(ExecutionFlag f) {
  switch (f) {
    case ExecutionFlag::Audio: return "audio";
    case ExecutionFlag::Video: return "video";
    case ExecutionFlag::Vision: return "vision";
    case ExecutionFlag::Imagen: return "imagen";
    case ExecutionFlag::Document: return "document";
    case ExecutionFlag::RouteLlm: return "routellm";
    case ExecutionFlag::Moe: return "moe";
    case ExecutionFlag::Complex: return "complex";
  }
  return "moe";
}

std::string_view to_string(Subflag s) {
  switch (s) {
    case Subflag::Coding: return "coding";
    case Subflag::SummarizationRewriting: return "summarization_rewriting";
    case Subflag::AnalyticalMaths: return "analytical_maths";
    case Subflag::General: return "general";
  }
  return "general";
}

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::Text: return "text";
    case Modality::Image: return "image";
    case Modality::Audio: return "audio";
    case Modality::Video: return "video";
    case Modality::Document: return "document";
    case Modality::Unknown: return "unknown";
  }
  return "unknown";
}

std::optional<CostKnob> parse_cost_knob(std::string_view s) {
  for (auto k : kAllCostKnobs)
    if (to_string(k) == s) return k;
  return std::nullopt;
}

std::optional<ExecutionFlag> parse_flag(std::string_view s) {
  for (auto f : kAllFlags)
    if (to_string(f) == s) return f;
  return std::nullopt;
}

std::optional<Subflag> parse_subflag(std::string_view s) {
  for (auto v : kAllSubflags)
    if (to_string(v) == s) return v;
  return std::nullopt;
}

std::optional<Modality> parse_modality(std::string_view s) {
  for (auto m : kAllModalities)
    if (to_string(m) == s) return m;
  return std::nullopt;
}

std::optional<Modality> required_modality(ExecutionFlag f) {
  switch (f) {
    case ExecutionFlag::Audio: return Modality::Audio;
    case ExecutionFlag::Video: return Modality::Video;
    case ExecutionFlag::Vision: return Modality::Image;
    case ExecutionFlag::Document: return Modality::Document;
    // Generation needs no attachment; imagen is reconciled separately.
    default: return std::nullopt;
  }
}

}  // namespace supervisor
