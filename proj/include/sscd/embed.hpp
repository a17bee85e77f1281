#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sscd/error.hpp"
#include "sscd/fragment.hpp"
#include "sscd/lexer.hpp"
#include "sscd/util.hpp"

namespace sscd {

using Vector = std::vector<float>;

inline constexpr double kNormTolerance = 1e-6;

enum class ProviderKind { kDeterministicLocal, kExternalProcess, kRemoteHttp };

inline std::string_view to_string(ProviderKind k) {
  switch (k) {
    case ProviderKind::kDeterministicLocal: return "deterministic-local";
    case ProviderKind::kExternalProcess: return "external-process";
    case ProviderKind::kRemoteHttp: return "remote-http";
  }
  return "deterministic-local";
}

/// Maps provider input text to fixed-dimension vectors. Implementations may
/// return unnormalized vectors; embed_fragments normalizes on ingestion.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  virtual const std::string& id() const = 0;
  virtual std::size_t dimension() const = 0;
  virtual ProviderKind kind() const = 0;

  /// result[i] embeds texts[i]. Throws on failure of the whole batch.
  virtual std::vector<Vector> embed(std::span<const std::string> texts) = 0;

  virtual std::size_t batch_size() const { return 64; }
  /// How many embed() calls may be in flight at once.
  virtual unsigned max_parallelism() const { return 1; }
};

/// Scales `v` to unit L2 norm in place. Returns false for zero or
/// non-finite vectors, which cannot be normalized.
inline bool normalize(Vector& v) {
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * x;
  if (!(sq > 0.0) || !std::isfinite(sq)) return false;
  const double inv = 1.0 / std::sqrt(sq);
  for (float& x : v) x = static_cast<float>(x * inv);
  return true;
}

inline double l2_norm(std::span<const float> v) {
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * x;
  return std::sqrt(sq);
}

// ---------------------------------------------------------------------------
// Deterministic feature-hashing provider

/// Feature-hashing bag of tokens: every distinct token adds a signed bump
/// of weight 1 + ln(count) to one coordinate chosen by a seeded 64-bit
/// hash, and the sum is L2-normalized. Sublinear weighting keeps frequent
/// punctuation from drowning out identifiers and literals. Identical token
/// multisets map to identical vectors.
inline Vector hash_embed_tokens(std::span<const std::string_view> tokens, std::size_t dimension,
                                std::uint64_t seed) {
  if (dimension < 8) throw std::invalid_argument("hash_embed: dimension must be at least 8");
  if (tokens.empty()) throw std::invalid_argument("hash_embed: empty token list carries no information");
  std::map<std::string_view, std::size_t> counts;
  for (auto tok : tokens) ++counts[tok];
  std::vector<double> acc(dimension, 0.0);
  const std::uint64_t salt = splitmix64(seed);
  for (const auto& [tok, count] : counts) {
    const std::uint64_t h = splitmix64(fnv1a64(tok) ^ salt);
    const double w = 1.0 + std::log(static_cast<double>(count));
    acc[h % dimension] += (h >> 63) != 0 ? -w : w;
  }
  double sq = 0.0;
  for (double x : acc) sq += x * x;
  Vector v(dimension, 0.0f);
  if (sq == 0.0) {
    // Every bump cancelled; fall back to a fixed coordinate so the vector
    // stays unit length and deterministic.
    v[splitmix64(salt) % dimension] = 1.0f;
    return v;
  }
  const double inv = 1.0 / std::sqrt(sq);
  for (std::size_t i = 0; i < dimension; ++i) v[i] = static_cast<float>(acc[i] * inv);
  return v;
}

/// hash_embed over the lexical tokens of `text` (whitespace ignored,
/// comments kept as tokens).
inline Vector hash_embed(std::string_view text, std::size_t dimension, std::uint64_t seed) {
  std::vector<Token> toks = lex(text);
  std::vector<std::string_view> words;
  words.reserve(toks.size());
  for (const auto& t : toks) {
    if (t.kind != TokenKind::kWhitespace) words.push_back(t.text);
  }
  return hash_embed_tokens(words, dimension, seed);
}

class HashProvider final : public EmbeddingProvider {
 public:
  explicit HashProvider(std::size_t dimension = 256, std::uint64_t seed = 0, std::string id = {})
      : id_(id.empty() ? "hash-" + std::to_string(dimension) : std::move(id)),
        dimension_(dimension),
        seed_(seed) {
    if (dimension_ < 8) throw UsageError("hash provider dimension must be at least 8");
  }

  const std::string& id() const override { return id_; }
  std::size_t dimension() const override { return dimension_; }
  ProviderKind kind() const override { return ProviderKind::kDeterministicLocal; }
  std::size_t batch_size() const override { return 256; }
  unsigned max_parallelism() const override { return default_parallelism(); }

  std::vector<Vector> embed(std::span<const std::string> texts) override {
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(hash_embed(t, dimension_, seed_));
    return out;
  }

 private:
  std::string id_;
  std::size_t dimension_;
  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Content-addressed cache

/// Thread-safe embedding cache keyed by (content hash, provider, code
/// length). With a backing file, entries are loaded on open and appended
/// as they arrive, so a crashed run keeps everything already paid for.
class EmbeddingCache {
 public:
  EmbeddingCache() = default;

  explicit EmbeddingCache(std::filesystem::path file) : file_(std::move(file)) {
    if (!std::filesystem::exists(*file_)) return;
    std::ifstream in(*file_, std::ios::binary);
    std::string line;
    std::size_t skipped = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        auto j = nlohmann::json::parse(line);
        map_[j.at("key").get<std::string>()] = j.at("vector").get<Vector>();
      } catch (const nlohmann::json::exception&) {
        ++skipped;  // torn final line from an interrupted append
      }
    }
    if (skipped != 0) {
      log(LogLevel::kWarn, "embedding cache " + file_->string() + ": skipped " + std::to_string(skipped) +
                               " unreadable line(s)");
    }
  }

  static std::string key(std::string_view content_hash, std::string_view provider_id, std::size_t code_length) {
    std::string k;
    k.append(content_hash).append("|").append(provider_id).append("|").append(std::to_string(code_length));
    return k;
  }

  std::optional<Vector> get(const std::string& key) const {
    std::shared_lock lock(mutex_);
    auto it = map_.find(key);
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }

  void put(const std::string& key, const Vector& v) {
    std::unique_lock lock(mutex_);
    if (!map_.emplace(key, v).second) return;
    if (!file_) return;
    if (file_->has_parent_path()) std::filesystem::create_directories(file_->parent_path());
    std::ofstream out(*file_, std::ios::binary | std::ios::app);
    nlohmann::ordered_json j;
    j["key"] = key;
    j["vector"] = v;
    out << j.dump() << '\n';
    if (!out) throw StageError("cannot append to embedding cache " + file_->string());
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return map_.size();
  }

 private:
  std::optional<std::filesystem::path> file_;
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, Vector> map_;
};

// ---------------------------------------------------------------------------
// Orchestration

struct EmbeddingRecord {
  std::string fragment_id;
  std::string provider_id;
  std::string content_hash;
  Vector vector;

  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

struct EmbedFailure {
  std::string fragment_id;
  std::string message;
};

struct EmbedOutcome {
  std::vector<EmbeddingRecord> records;  // input order, failed fragments omitted
  std::vector<EmbedFailure> failures;
  std::size_t provider_inputs = 0;  // texts actually sent to the provider
};

/// Embeds fragments truncated to `code_length` tokens. Cache hits skip the
/// provider; identical inputs within one call are sent once. Failed batches
/// are reported per fragment, never silently dropped.
inline EmbedOutcome embed_fragments(const std::vector<CodeFragment>& fragments, EmbeddingProvider& provider,
                                    std::size_t code_length, EmbeddingCache& cache) {
  if (fragments.empty()) throw UsageError("embed_fragments: no fragments to embed");
  if (code_length == 0) throw UsageError("code length must be at least 1");

  struct Pending {
    std::string text;
    std::string cache_key;
    std::vector<std::size_t> fragments;  // indices sharing this input
  };

  EmbedOutcome outcome;
  std::vector<std::string> hashes(fragments.size());
  std::vector<std::optional<Vector>> vectors(fragments.size());
  std::vector<Pending> pending;
  std::unordered_map<std::string, std::size_t> pending_by_key;

  for (std::size_t i = 0; i < fragments.size(); ++i) {
    auto text = provider_text(truncate_tokens(fragments[i], code_length).tokens);
    hashes[i] = sha256_hex(text);
    auto key = EmbeddingCache::key(hashes[i], provider.id(), code_length);
    if (auto hit = cache.get(key)) {
      vectors[i] = std::move(*hit);
      continue;
    }
    auto [it, inserted] = pending_by_key.emplace(key, pending.size());
    if (inserted) pending.push_back({std::move(text), key, {}});
    pending[it->second].fragments.push_back(i);
  }

  const std::size_t batch = std::max<std::size_t>(1, provider.batch_size());
  const std::size_t batches = (pending.size() + batch - 1) / batch;
  std::vector<std::string> batch_errors(batches);
  std::vector<std::vector<std::string>> batch_errors_per_item(batches);
  std::mutex vectors_mutex;

  parallel_for(batches, provider.max_parallelism(), [&](std::size_t b) {
    const std::size_t lo = b * batch;
    const std::size_t hi = std::min(pending.size(), lo + batch);
    std::vector<std::string> texts;
    texts.reserve(hi - lo);
    for (std::size_t p = lo; p < hi; ++p) texts.push_back(pending[p].text);
    std::vector<Vector> got;
    try {
      got = provider.embed(texts);
      if (got.size() != texts.size()) {
        throw ProtocolError("provider returned " + std::to_string(got.size()) + " vectors for " +
                            std::to_string(texts.size()) + " inputs");
      }
    } catch (const std::exception& e) {
      batch_errors[b] = e.what();
      return;
    }
    batch_errors_per_item[b].resize(hi - lo);
    for (std::size_t p = lo; p < hi; ++p) {
      Vector v = std::move(got[p - lo]);
      if (v.size() != provider.dimension()) {
        batch_errors_per_item[b][p - lo] = "dimension " + std::to_string(v.size()) + " != declared " +
                                           std::to_string(provider.dimension());
        continue;
      }
      if (!normalize(v)) {
        batch_errors_per_item[b][p - lo] = "provider returned a zero or non-finite vector";
        continue;
      }
      cache.put(pending[p].cache_key, v);
      std::lock_guard lock(vectors_mutex);
      for (std::size_t i : pending[p].fragments) vectors[i] = v;
    }
  });

  std::vector<std::string> fragment_error(fragments.size());
  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t lo = b * batch;
    const std::size_t hi = std::min(pending.size(), lo + batch);
    outcome.provider_inputs += hi - lo;
    for (std::size_t p = lo; p < hi; ++p) {
      std::string err = !batch_errors[b].empty() ? batch_errors[b] : batch_errors_per_item[b][p - lo];
      if (err.empty()) continue;
      for (std::size_t i : pending[p].fragments) fragment_error[i] = err;
    }
  }

  outcome.records.reserve(fragments.size());
  for (std::size_t i = 0; i < fragments.size(); ++i) {
    if (!vectors[i]) {
      outcome.failures.push_back({fragments[i].fragment_id, fragment_error[i].empty() ? "not embedded"
                                                                                       : fragment_error[i]});
      continue;
    }
    outcome.records.push_back({fragments[i].fragment_id, provider.id(), hashes[i], std::move(*vectors[i])});
  }
  if (!outcome.failures.empty()) {
    log(LogLevel::kWarn, provider.id() + ": " + std::to_string(outcome.failures.size()) +
                             " fragment(s) failed to embed");
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// Embedding file: one JSON object per line, a single provider per file.

inline std::string serialize_embeddings(const std::vector<EmbeddingRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    if (r.provider_id != records.front().provider_id) {
      throw UsageError("embedding file would mix providers '" + records.front().provider_id + "' and '" +
                       r.provider_id + "'");
    }
    nlohmann::ordered_json j;
    j["fragment_id"] = r.fragment_id;
    j["provider_id"] = r.provider_id;
    j["content_hash"] = r.content_hash;
    j["vector"] = r.vector;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

inline void write_embeddings(const std::vector<EmbeddingRecord>& records, const std::filesystem::path& out) {
  atomic_write(out, serialize_embeddings(records));
}

/// Reads an embedding file, enforcing one provider, one dimension and unit
/// norms.
inline std::vector<EmbeddingRecord> read_embeddings(const std::filesystem::path& path) {
  std::vector<EmbeddingRecord> out;
  for_each_ndjson(path, [&](const nlohmann::json& j, std::size_t lineno) {
    EmbeddingRecord r;
    r.fragment_id = j.at("fragment_id").get<std::string>();
    r.provider_id = j.at("provider_id").get<std::string>();
    r.content_hash = j.at("content_hash").get<std::string>();
    r.vector = j.at("vector").get<Vector>();
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    if (!out.empty() && r.provider_id != out.front().provider_id) {
      throw UsageError(where + "mixed provider ids in one embedding file");
    }
    if (!out.empty() && r.vector.size() != out.front().vector.size()) {
      throw UsageError(where + "vector dimension differs from earlier records");
    }
    if (std::abs(l2_norm(r.vector) - 1.0) > kNormTolerance) throw UsageError(where + "vector is not unit length");
    out.push_back(std::move(r));
  });
  return out;
}

}  // namespace sscd
