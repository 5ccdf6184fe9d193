#include "supervisor/memory.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <mutex>
#include <set>
#include <sstream>

#include "supervisor/errors.hpp"
#include "supervisor/util.hpp"

namespace supervisor {

using nlohmann::json;

HashingEmbedder::HashingEmbedder(std::size_t dimension, std::uint64_t seed) : dim_(dimension), seed_(seed) {
  if (dim_ == 0) throw std::invalid_argument("embedding dimension must be positive");
}

std::vector<double> HashingEmbedder::embed(std::string_view text) const {
  std::vector<double> v(dim_, 0.0);
  auto add = [&](const std::string& gram, double weight) {
    auto h = fnv1a64(gram, seed_);
    double sign = (h >> 63) ? -1.0 : 1.0;
    v[(h >> 1) % dim_] += sign * weight;
  };
  // Function words carry no topic; a trailing plural s is folded away.
  static const std::set<std::string> stop = {
      "a",    "an",  "the", "i",    "my",   "me",   "you",  "your", "we",   "it",  "is",   "are",
      "was",  "were", "be", "to",   "of",   "in",   "on",   "at",   "for",  "and", "or",   "do",
      "does", "did", "can", "what", "when", "which", "how", "that", "this", "with", "about", "as"};
  std::vector<std::string> toks;
  for (auto& w : words(text)) {
    if (stop.count(w)) continue;
    if (w.size() > 3 && w.back() == 's' && w[w.size() - 2] != 's') w.pop_back();
    toks.push_back(std::move(w));
  }
  for (std::size_t i = 0; i < toks.size(); ++i) {
    add(toks[i], 1.0);
    if (i + 1 < toks.size()) add(toks[i] + ' ' + toks[i + 1], 0.5);
  }
  double norm = 0;
  for (double x : v) norm += x * x;
  if (norm == 0) {
    // Empty or fully cancelled input still gets a unit vector.
    add("\x01<empty>", 1.0);
    norm = 0;
    for (double x : v) norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionMismatch("cosine of vectors with different dimensions");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double score_memory(const MemoryRecord& r, const std::vector<double>& q, Modality qm, std::uint64_t now_turn,
                    const ScoreWeights& w, const DecayTable& decay) {
  double age = now_turn > r.turn_index ? double(now_turn - r.turn_index) : 0.0;
  return w.alpha * cosine(r.embedding, q) + w.beta * std::exp(-decay[r.modality] * age) +
         w.gamma * (r.modality == qm ? 1.0 : 0.0);
}

MemoryStore::MemoryStore(std::size_t dimension) : dim_(dimension) {}

MemoryStore::MemoryStore(const MemoryStore& o) {
  std::shared_lock lk(o.mu_);
  dim_ = o.dim_;
  history_ = o.history_;
  short_ = o.short_;
  index_ = o.index_;
  relevant_ = o.relevant_;
  compressed_ = o.compressed_;
  next_id_ = o.next_id_;
}

MemoryStore& MemoryStore::operator=(const MemoryStore& o) {
  if (this == &o) return *this;
  MemoryStore copy(o);
  std::unique_lock lk(mu_);
  dim_ = copy.dim_;
  history_ = std::move(copy.history_);
  short_ = std::move(copy.short_);
  index_ = std::move(copy.index_);
  relevant_ = std::move(copy.relevant_);
  compressed_ = std::move(copy.compressed_);
  next_id_ = copy.next_id_;
  return *this;
}

void MemoryStore::store(MemoryRecord record) {
  std::unique_lock lk(mu_);
  if (record.embedding.size() != dim_)
    throw DimensionMismatch("record embedding has dimension " + std::to_string(record.embedding.size()) +
                            ", store expects " + std::to_string(dim_));
  if (record.record_id == 0) record.record_id = next_id_;
  next_id_ = std::max(next_id_, record.record_id + 1);
  std::size_t pos = history_.size();
  index_[record.modality].push_back(pos);
  history_.push_back(std::move(record));
  short_.push_back(pos);
  if (short_.size() > kShortTermWindow) short_.pop_front();
}

const MemoryRecord& MemoryStore::add(std::string content, Modality modality, std::uint64_t turn_index,
                                     const Embedder& embedder, std::int64_t created_at_ms) {
  MemoryRecord r;
  r.embedding = embedder.embed(content);
  r.content = std::move(content);
  r.modality = modality;
  r.turn_index = turn_index;
  r.created_at_ms = created_at_ms;
  store(std::move(r));
  std::shared_lock lk(mu_);
  return history_.back();
}

std::vector<MemoryRecord> MemoryStore::short_term() const {
  std::shared_lock lk(mu_);
  std::vector<MemoryRecord> out;
  for (auto p : short_) out.push_back(history_[p]);
  return out;
}

std::vector<MemoryRecord> MemoryStore::full_history() const {
  std::shared_lock lk(mu_);
  return history_;
}

std::size_t MemoryStore::size() const {
  std::shared_lock lk(mu_);
  return history_.size();
}

std::vector<std::uint64_t> MemoryStore::partition(Modality m) const {
  std::shared_lock lk(mu_);
  std::vector<std::uint64_t> out;
  if (auto it = index_.find(m); it != index_.end())
    for (auto p : it->second) out.push_back(history_[p].record_id);
  return out;
}

std::vector<MemoryRecord> MemoryStore::relevant_cache() const {
  std::shared_lock lk(mu_);
  return relevant_;
}

std::optional<CompressedSummary> MemoryStore::compressed() const {
  std::shared_lock lk(mu_);
  return compressed_;
}

void MemoryStore::set_compressed(CompressedSummary summary) {
  std::unique_lock lk(mu_);
  compressed_ = std::move(summary);
}

std::uint64_t MemoryStore::latest_turn() const {
  std::shared_lock lk(mu_);
  std::uint64_t t = 0;
  for (const auto& r : history_) t = std::max(t, r.turn_index);
  return t;
}

std::vector<MemoryRecord> MemoryStore::retrieve_relevant(const std::vector<double>& q, Modality qm, std::size_t k,
                                                         std::optional<std::uint64_t> now_turn,
                                                         const ScoreWeights& w, const DecayTable& decay) {
  if (k == 0) throw std::invalid_argument("k must be at least 1");
  if (q.size() != dim_)
    throw DimensionMismatch("query embedding has dimension " + std::to_string(q.size()) + ", store expects " +
                            std::to_string(dim_));
  std::vector<MemoryRecord> out;
  {
    std::shared_lock lk(mu_);
    std::uint64_t now = 0;
    if (now_turn) {
      now = *now_turn;
    } else {
      for (const auto& r : history_) now = std::max(now, r.turn_index);
    }
    struct Scored {
      double score;
      std::size_t pos;
    };
    std::vector<Scored> scored;
    scored.reserve(history_.size());
    for (const auto& [mod, positions] : index_) {
      for (auto p : positions) {
        const auto& r = history_[p];
        if (compressed_ && r.record_id >= compressed_->first_record && r.record_id <= compressed_->last_record)
          continue;
        scored.push_back({score_memory(r, q, qm, now, w, decay), p});
      }
    }
    auto better = [&](const Scored& a, const Scored& b) {
      if (a.score != b.score) return a.score > b.score;
      const auto& ra = history_[a.pos];
      const auto& rb = history_[b.pos];
      if (ra.turn_index != rb.turn_index) return ra.turn_index > rb.turn_index;
      return ra.record_id < rb.record_id;
    };
    std::size_t take = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), better);
    for (std::size_t i = 0; i < take; ++i) out.push_back(history_[scored[i].pos]);
  }
  std::unique_lock lk(mu_);
  relevant_ = out;
  return out;
}

namespace {

json record_to_json(const MemoryRecord& r) {
  return {{"record_id", r.record_id},   {"content", r.content},       {"modality", to_string(r.modality)},
          {"embedding", r.embedding},   {"turn_index", r.turn_index}, {"created_at_ms", r.created_at_ms}};
}

MemoryRecord record_from_json(const json& j) {
  MemoryRecord r;
  r.record_id = j.at("record_id").get<std::uint64_t>();
  r.content = j.at("content").get<std::string>();
  auto m = parse_modality(j.at("modality").get<std::string>());
  if (!m) throw CorruptState("unknown modality in memory record");
  r.modality = *m;
  r.embedding = j.at("embedding").get<std::vector<double>>();
  r.turn_index = j.at("turn_index").get<std::uint64_t>();
  r.created_at_ms = j.value("created_at_ms", std::int64_t{0});
  return r;
}

}  // namespace

json MemoryStore::to_json() const {
  std::shared_lock lk(mu_);
  json recs = json::array();
  for (const auto& r : history_) recs.push_back(record_to_json(r));
  json j = {{"version", 1}, {"dimension", dim_}, {"records", recs}};
  if (compressed_) {
    j["compressed"] = {{"text", compressed_->text},
                       {"first_record", compressed_->first_record},
                       {"last_record", compressed_->last_record},
                       {"source_tokens", compressed_->source_tokens},
                       {"summary_tokens", compressed_->summary_tokens}};
  } else {
    j["compressed"] = nullptr;
  }
  return j;
}

MemoryStore MemoryStore::from_json(const json& j) {
  try {
    if (j.at("version").get<int>() != 1) throw VersionMismatch("unsupported memory store version");
    MemoryStore s(j.at("dimension").get<std::size_t>());
    for (const auto& r : j.at("records")) s.store(record_from_json(r));
    if (j.contains("compressed") && !j["compressed"].is_null()) {
      const auto& c = j["compressed"];
      s.compressed_ = CompressedSummary{c.at("text").get<std::string>(), c.at("first_record").get<std::uint64_t>(),
                                        c.at("last_record").get<std::uint64_t>(),
                                        c.at("source_tokens").get<std::size_t>(),
                                        c.at("summary_tokens").get<std::size_t>()};
    }
    return s;
  } catch (const json::exception& e) {
    throw CorruptState(std::string("malformed memory store: ") + e.what());
  } catch (const DimensionMismatch& e) {
    throw CorruptState(std::string("memory store inconsistent: ") + e.what());
  }
}

ContextBundle integrate_context(const MemoryStore& store, const std::vector<MemoryRecord>& retrieved,
                                const ContextWeights& w) {
  auto lines = [](const std::vector<MemoryRecord>& recs) {
    std::string s;
    for (const auto& r : recs) {
      if (!s.empty()) s += '\n';
      s += "[turn " + std::to_string(r.turn_index) + ", " + std::string(to_string(r.modality)) + "] " + r.content;
    }
    return s;
  };
  ContextBundle b;
  b.segments.push_back({ContextLayer::Short, w.short_term, lines(store.short_term())});
  b.segments.push_back({ContextLayer::Relevant, w.relevant, lines(retrieved)});
  auto c = store.compressed();
  b.segments.push_back({ContextLayer::Compressed, w.compressed, c ? c->text : std::string()});
  return b;
}

TokenCounter whitespace_counter() {
  return [](std::string_view s) { return whitespace_tokens(s); };
}

std::string ExtractiveCompressor::compress(const std::string& text, std::size_t target_tokens) const {
  std::istringstream in(text);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) lines.push_back(line);
  if (lines.empty() || target_tokens == 0) return "";
  std::size_t per_line = std::max<std::size_t>(1, target_tokens / lines.size());
  std::string out;
  std::size_t used = 0;
  for (const auto& line : lines) {
    if (used >= target_tokens) break;
    std::istringstream ws(line);
    std::string word;
    std::size_t n = 0;
    while (n < per_line && used < target_tokens && ws >> word) {
      if (!out.empty()) out += n == 0 ? "\n" : " ";
      out += word;
      ++n;
      ++used;
    }
  }
  return out;
}

CompressionOutcome maybe_compress(MemoryStore& store, const TokenCounter& counter, const Compressor& compressor,
                                  bool force, std::size_t trigger_tokens) {
  CompressionOutcome out;
  auto prev = store.compressed();
  std::string source = prev ? prev->text : std::string();
  std::uint64_t first = prev ? prev->first_record : 0;
  std::uint64_t last = prev ? prev->last_record : 0;
  bool any = false;
  for (const auto& r : store.full_history()) {
    if (prev && r.record_id >= prev->first_record && r.record_id <= prev->last_record) continue;
    if (!source.empty()) source += '\n';
    source += r.content;
    if (!any && !prev) first = r.record_id;
    last = std::max(last, r.record_id);
    any = true;
  }
  out.history_tokens = counter(source);
  if (!any || (!force && out.history_tokens <= trigger_tokens)) return out;

  std::size_t target = std::max<std::size_t>(1, out.history_tokens / 12);
  std::string summary;
  try {
    summary = compressor.compress(source, target);
  } catch (const std::exception& e) {
    out.warning = std::string("compression failed, history kept uncompressed: ") + e.what();
    return out;
  }
  CompressedSummary c{summary, first, last, out.history_tokens, counter(summary)};
  out.compressed = true;
  out.ratio = c.ratio();
  out.ratio_in_band = out.ratio >= 10.0 && out.ratio <= 15.0;
  if (!out.ratio_in_band) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "compression ratio %.1f:1 outside the 10:1 to 15:1 band", out.ratio);
    out.warning = buf;
  }
  store.set_compressed(std::move(c));
  return out;
}

std::string memory_path(const std::string& root, const std::string& sid) {
  return (std::filesystem::path(root) / (sid + ".memory.json")).string();
}

void save_memory(const std::string& root, const std::string& sid, const MemoryStore& store) {
  std::filesystem::create_directories(root);
  write_file_atomic(memory_path(root, sid), store.to_json().dump());
}

MemoryStore load_memory(const std::string& root, const std::string& sid, std::size_t dimension) {
  auto path = memory_path(root, sid);
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return MemoryStore(dimension);
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw CorruptState("memory store " + path + " is not valid JSON");
  return MemoryStore::from_json(j);
}

}  // namespace supervisor
