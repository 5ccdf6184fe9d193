#pragma once

// Random QueryState generator shared by the unit and acceptance suites.

#include <cmath>
#include <random>
#include <string>

#include "supervisor/state.hpp"
#include "supervisor/types.hpp"

namespace supervisor::testgen {

inline std::string random_text(std::mt19937_64& rng, std::size_t max_len = 40) {
  static const std::string alphabet =
      "abcdefghijklmnopqrstuvwxyz ABCXYZ0123456789.,;:!?\"'\\/\t\n{}[]-_\xc3\xa9\xe2\x82\xac";
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::string s;
  std::size_t n = len(rng);
  for (std::size_t i = 0; i < n; ++i) {
    char c = alphabet[pick(rng)];
    // keep multibyte sequences whole
    if (static_cast<unsigned char>(c) >= 0x80) {
      s += (rng() & 1) ? "\xc3\xa9" : "\xe2\x82\xac";
    } else {
      s += c;
    }
  }
  return s;
}

inline double random_ms(std::mt19937_64& rng) {
  // mixes integral, fractional and awkward binary values
  switch (rng() % 4) {
    case 0: return double(rng() % 100000);
    case 1: return std::uniform_real_distribution<double>(0, 1e6)(rng);
    case 2: return 0.1 * double(rng() % 1000);
    default: return std::ldexp(double(rng() % 1000003), -int(rng() % 20));
  }
}

inline Attachment random_attachment(std::mt19937_64& rng) {
  Attachment a;
  switch (rng() % 3) {
    case 0: a = Attachment::url("https://example.com/" + random_text(rng, 12) + ".png"); break;
    case 1: a = Attachment::path("/tmp/" + random_text(rng, 12) + ".pdf"); break;
    default: {
      std::vector<std::uint8_t> bytes(rng() % 64);
      for (auto& b : bytes) b = static_cast<std::uint8_t>(rng());
      a = Attachment::inline_data(std::move(bytes), (rng() & 1) ? std::optional<std::string>("x.wav") : std::nullopt);
    }
  }
  if (rng() & 1) a.declared_name = random_text(rng, 10);
  if (rng() & 1) a.detected_modality = kAllModalities[1 + rng() % 5];
  if (rng() & 1) a.mime = "image/png";
  return a;
}

inline TraceEvent random_event(std::mt19937_64& rng) {
  TraceEvent e;
  e.kind = static_cast<TraceKind>(rng() % 8);
  e.node_id = random_text(rng, 8);
  e.tool = random_text(rng, 8);
  e.args_digest = random_text(rng, 16);
  e.start_ms = random_ms(rng);
  e.end_ms = e.start_ms + random_ms(rng);
  e.outcome = random_text(rng, 20);
  if (rng() & 1) e.confidence = std::uniform_real_distribution<double>(0, 1)(rng);
  e.cost = Money::from_micros(static_cast<std::int64_t>(rng() % 10000000));
  return e;
}

inline QueryState random_state(std::mt19937_64& rng) {
  QueryState s;
  s.user_query = random_text(rng, 80);
  s.cost_knob = kAllCostKnobs[rng() % 3];
  if (rng() & 1) {
    s.clarify_question = random_text(rng);
    if (rng() & 1) s.clarify_response = random_text(rng);
  }
  for (std::size_t i = 0, n = rng() % 4; i < n; ++i) s.attachments.push_back(random_attachment(rng));
  if (rng() & 1) {
    const ContextLayer layers[] = {ContextLayer::Short, ContextLayer::Relevant, ContextLayer::Compressed};
    const double weights[] = {0.6, 0.3, 0.1};
    for (int i = 0; i < 3; ++i) s.context.segments.push_back({layers[i], weights[i], random_text(rng, 60)});
  }
  s.session.session_id = std::to_string(rng() % 2000000000000ULL) + "-" + "0123456789abcdef";
  s.session.created_at_ms = static_cast<std::int64_t>(rng() % 2000000000000ULL);
  s.session.cumulative_cost = Money::from_micros(static_cast<std::int64_t>(rng() % 100000000));
  s.session.turn_count = rng() % 100;
  if (rng() & 1) s.flag = kAllFlags[rng() % 8];
  if (rng() & 1) s.subflag = kAllSubflags[rng() % 4];
  for (std::size_t i = 0, n = rng() % 5; i < n; ++i) s.trace.push_back(random_event(rng));
  return s;
}

}  // namespace supervisor::testgen
