#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace supervisor {

/// Computational tier chosen by the user.
enum class CostKnob { OpenSrc, ClosedSrc, TradCouplet };

/// Eight-way execution routing category. Declaration order is the
/// tie-break precedence used by flag classification.
enum class ExecutionFlag { Audio, Video, Vision, Imagen, Document, RouteLlm, Moe, Complex };

/// Weak-query category used to pick a lightweight model.
enum class Subflag { Coding, SummarizationRewriting, AnalyticalMaths, General };

enum class Modality { Text, Image, Audio, Video, Document, Unknown };

inline constexpr std::array<CostKnob, 3> kAllCostKnobs{CostKnob::OpenSrc, CostKnob::ClosedSrc,
                                                       CostKnob::TradCouplet};
inline constexpr std::array<ExecutionFlag, 8> kAllFlags{
    ExecutionFlag::Audio,  ExecutionFlag::Video,    ExecutionFlag::Vision, ExecutionFlag::Imagen,
    ExecutionFlag::Document, ExecutionFlag::RouteLlm, ExecutionFlag::Moe,  ExecutionFlag::Complex};
inline constexpr std::array<Subflag, 4> kAllSubflags{Subflag::Coding, Subflag::SummarizationRewriting,
                                                     Subflag::AnalyticalMaths, Subflag::General};
inline constexpr std::array<Modality, 6> kAllModalities{Modality::Text,  Modality::Image,
                                                        Modality::Audio, Modality::Video,
                                                        Modality::Document, Modality::Unknown};

std::string_view to_string(CostKnob k);
std::string_view to_string(ExecutionFlag f);
std::string_view to_string(Subflag s);
std::string_view to_string(Modality m);

// Exact, case-sensitive matches against the snake_case names.
std::optional<CostKnob> parse_cost_knob(std::string_view s);
std::optional<ExecutionFlag> parse_flag(std::string_view s);
std::optional<Subflag> parse_subflag(std::string_view s);
std::optional<Modality> parse_modality(std::string_view s);

/// Flags that demand an attachment of a specific modality.
std::optional<Modality> required_modality(ExecutionFlag f);

}  // namespace supervisor
