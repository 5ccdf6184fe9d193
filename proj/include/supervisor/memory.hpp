#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "supervisor/state.hpp"
#include "supervisor/types.hpp"

namespace supervisor {

inline constexpr std::size_t kDefaultEmbeddingDim = 256;

struct MemoryRecord {
  std::uint64_t record_id = 0;
  std::string content;
  Modality modality = Modality::Text;
  std::vector<double> embedding;
  std::uint64_t turn_index = 0;
  std::int64_t created_at_ms = 0;

  friend bool operator==(const MemoryRecord&, const MemoryRecord&) = default;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::size_t dimension() const = 0;
  // Unit-normalized. May throw EmbeddingUnavailable.
  virtual std::vector<double> embed(std::string_view text) const = 0;
};

/// Signed feature hashing of word unigrams and bigrams.
class HashingEmbedder : public Embedder {
 public:
  explicit HashingEmbedder(std::size_t dimension = kDefaultEmbeddingDim, std::uint64_t seed = 0x6d656d);
  std::size_t dimension() const override { return dim_; }
  std::vector<double> embed(std::string_view text) const override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

double cosine(const std::vector<double>& a, const std::vector<double>& b);

struct ScoreWeights {
  double alpha = 0.5;  // semantic similarity
  double beta = 0.3;   // recency
  double gamma = 0.2;  // modality match
};

/// Per-turn recency decay rate by modality.
struct DecayTable {
  std::array<double, 6> lambda{0.15, 0.08, 0.12, 0.10, 0.06, 0.15};  // indexed by Modality
  double operator[](Modality m) const { return lambda[static_cast<std::size_t>(m)]; }
};

double score_memory(const MemoryRecord& record, const std::vector<double>& query_embedding, Modality query_modality,
                    std::uint64_t now_turn, const ScoreWeights& w = {}, const DecayTable& decay = {});

struct CompressedSummary {
  std::string text;
  // Inclusive record_id range replaced by the summary.
  std::uint64_t first_record = 0;
  std::uint64_t last_record = 0;
  std::size_t source_tokens = 0;
  std::size_t summary_tokens = 0;

  double ratio() const { return summary_tokens ? double(source_tokens) / double(summary_tokens) : 0.0; }
  friend bool operator==(const CompressedSummary&, const CompressedSummary&) = default;
};

inline constexpr std::size_t kShortTermWindow = 5;
inline constexpr std::size_t kDefaultRetrieveK = 6;

/// Short-term window, append-only history, per-modality indices, last
/// retrieval, and an optional summary. Readers share, writers serialize.
class MemoryStore {
 public:
  explicit MemoryStore(std::size_t dimension = kDefaultEmbeddingDim);
  MemoryStore(const MemoryStore& other);
  MemoryStore& operator=(const MemoryStore& other);

  std::size_t dimension() const { return dim_; }

  // Throws DimensionMismatch; the store is unchanged on error.
  void store(MemoryRecord record);
  // Embeds `content` and stores it with the next record id.
  const MemoryRecord& add(std::string content, Modality modality, std::uint64_t turn_index,
                          const Embedder& embedder, std::int64_t created_at_ms = 0);

  std::vector<MemoryRecord> short_term() const;
  std::vector<MemoryRecord> full_history() const;
  std::size_t size() const;
  // Record ids held by one modality partition, in insertion order.
  std::vector<std::uint64_t> partition(Modality m) const;
  std::vector<MemoryRecord> relevant_cache() const;
  std::optional<CompressedSummary> compressed() const;
  void set_compressed(CompressedSummary summary);
  // Highest turn index stored, or 0.
  std::uint64_t latest_turn() const;

  /// Top-k over every partition by score, newest first on ties, then lower
  /// record id. Records inside the compressed range are skipped.
  std::vector<MemoryRecord> retrieve_relevant(const std::vector<double>& query_embedding, Modality query_modality,
                                              std::size_t k = kDefaultRetrieveK,
                                              std::optional<std::uint64_t> now_turn = {},
                                              const ScoreWeights& w = {}, const DecayTable& decay = {});

  nlohmann::json to_json() const;
  static MemoryStore from_json(const nlohmann::json& j);  // throws CorruptState

 private:
  mutable std::shared_mutex mu_;
  std::size_t dim_;
  std::vector<MemoryRecord> history_;
  std::deque<std::size_t> short_;  // positions into history_
  std::map<Modality, std::vector<std::size_t>> index_;
  std::vector<MemoryRecord> relevant_;
  std::optional<CompressedSummary> compressed_;
  std::uint64_t next_id_ = 1;
};

struct ContextWeights {
  double short_term = 0.6;
  double relevant = 0.3;
  double compressed = 0.1;
};

/// Always three segments: short, relevant, compressed.
ContextBundle integrate_context(const MemoryStore& store, const std::vector<MemoryRecord>& retrieved,
                                const ContextWeights& w = {});

using TokenCounter = std::function<std::size_t(std::string_view)>;
TokenCounter whitespace_counter();

class Compressor {
 public:
  virtual ~Compressor() = default;
  // May throw CompressorUnavailable.
  virtual std::string compress(const std::string& text, std::size_t target_tokens) const = 0;
};

/// Keeps the leading words of each line up to the target budget.
class ExtractiveCompressor : public Compressor {
 public:
  std::string compress(const std::string& text, std::size_t target_tokens) const override;
};

inline constexpr std::size_t kCompressionTriggerTokens = 8000;

struct CompressionOutcome {
  bool compressed = false;
  std::size_t history_tokens = 0;
  double ratio = 0;
  bool ratio_in_band = false;  // 10:1 to 15:1
  std::optional<std::string> warning;
};

/// Compresses every uncompressed record (plus any earlier summary) when the
/// history exceeds the trigger or `force` is set. Compressor failure leaves
/// the store untouched and returns a warning.
CompressionOutcome maybe_compress(MemoryStore& store, const TokenCounter& counter, const Compressor& compressor,
                                  bool force = false, std::size_t trigger_tokens = kCompressionTriggerTokens);

std::string memory_path(const std::string& store_root, const std::string& session_id);
void save_memory(const std::string& store_root, const std::string& session_id, const MemoryStore& store);
// Missing file gives an empty store of the requested dimension.
MemoryStore load_memory(const std::string& store_root, const std::string& session_id, std::size_t dimension = kDefaultEmbeddingDim);

}  // namespace supervisor
