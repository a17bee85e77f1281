#pragma once

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "sscd/config.hpp"
#include "sscd/embed.hpp"
#include "sscd/error.hpp"
#include "sscd/extract.hpp"
#include "sscd/fragment.hpp"
#include "sscd/index.hpp"

namespace sscd {

/// Unordered fragment pair, stored canonically with id_low < id_high.
struct CandidatePair {
  std::string id_low;
  std::string id_high;
  double similarity = 0.0;
  std::set<std::string> providers;

  friend bool operator==(const CandidatePair&, const CandidatePair&) = default;
};

using PairKey = std::pair<std::string, std::string>;

inline PairKey canonical_pair(const std::string& a, const std::string& b) {
  if (a == b) throw UsageError("self pair for fragment '" + a + "'");
  return a < b ? PairKey{a, b} : PairKey{b, a};
}

/// A canonical set of candidate pairs, kept sorted by (id_low, id_high).
class CandidateSet {
 public:
  CandidateSet() = default;

  /// Adds a pair or merges it into an existing one: similarity becomes the
  /// max, providers the union.
  void add(const std::string& a, const std::string& b, double similarity, const std::set<std::string>& providers) {
    auto key = canonical_pair(a, b);
    auto [it, inserted] = pairs_.try_emplace(key);
    auto& p = it->second;
    if (inserted) {
      p.id_low = key.first;
      p.id_high = key.second;
      p.similarity = similarity;
    } else {
      p.similarity = std::max(p.similarity, similarity);
    }
    p.providers.insert(providers.begin(), providers.end());
  }

  bool contains(const std::string& a, const std::string& b) const {
    if (a == b) return false;
    return pairs_.count(a < b ? PairKey{a, b} : PairKey{b, a}) != 0;
  }
  const CandidatePair* find(const PairKey& key) const {
    auto it = pairs_.find(key);
    return it == pairs_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }

  std::vector<CandidatePair> pairs() const {
    std::vector<CandidatePair> out;
    out.reserve(pairs_.size());
    for (const auto& [k, p] : pairs_) out.push_back(p);
    return out;
  }
  const std::map<PairKey, CandidatePair>& by_key() const { return pairs_; }

  std::set<std::string> providers;  // every provider that fed this set
  std::string corpus_id;            // identity of the fragment universe
  nlohmann::ordered_json config = nlohmann::ordered_json::object();  // settings as used

  friend bool operator==(const CandidateSet& a, const CandidateSet& b) {
    return a.pairs_ == b.pairs_ && a.providers == b.providers && a.corpus_id == b.corpus_id;
  }

 private:
  std::map<PairKey, CandidatePair> pairs_;
};

/// Turns filtered neighbour lists into canonical pairs. A pair seen from
/// both directions keeps the larger similarity. Independent of list order.
inline CandidateSet pairs_from_neighbors(const std::vector<NeighborList>& lists, const std::string& provider_id,
                                         nlohmann::ordered_json config = nlohmann::ordered_json::object(),
                                         std::string corpus_id = {}) {
  CandidateSet set;
  set.providers.insert(provider_id);
  set.corpus_id = std::move(corpus_id);
  set.config = std::move(config);
  const std::set<std::string> prov{provider_id};
  for (const auto& l : lists) {
    for (const auto& nb : l.neighbors) set.add(l.query_fragment_id, nb.fragment_id, nb.similarity, prov);
  }
  return set;
}

/// Snapshot of the settings that shaped one provider's candidate set.
inline nlohmann::ordered_json candidate_config(const RunConfig& c, const std::string& provider_id, double threshold,
                                               std::size_t top_n) {
  nlohmann::ordered_json j;
  j["provider_id"] = provider_id;
  j["min_loc"] = c.min_loc;
  j["code_length"] = c.code_length;
  j["preprocess"] = std::string(to_string(c.preprocess));
  j["search_backend"] = std::string(to_string(c.search_backend));
  j["threshold"] = threshold;
  j["top_n"] = top_n;
  return j;
}

// ---------------------------------------------------------------------------
// Candidate file: one JSON object per pair; set metadata in the sidecar.

inline std::string serialize_candidates(const CandidateSet& set) {
  std::string out;
  for (const auto& [key, p] : set.by_key()) {
    nlohmann::ordered_json j;
    j["id_low"] = p.id_low;
    j["id_high"] = p.id_high;
    j["similarity"] = p.similarity;
    j["providers"] = p.providers;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

inline nlohmann::ordered_json candidate_meta(const CandidateSet& set) {
  nlohmann::ordered_json m;
  m["kind"] = "candidates";
  m["providers"] = set.providers;
  m["corpus_id"] = set.corpus_id;
  m["pairs"] = set.size();
  m["config"] = set.config;
  return m;
}

inline void write_candidates(const CandidateSet& set, const std::filesystem::path& out) {
  atomic_write(out, serialize_candidates(set));
  write_meta(out, candidate_meta(set));
}

inline CandidateSet read_candidates(const std::filesystem::path& path) {
  CandidateSet set;
  for_each_ndjson(path, [&](const nlohmann::json& j, std::size_t lineno) {
    auto low = j.at("id_low").get<std::string>();
    auto high = j.at("id_high").get<std::string>();
    if (!(low < high)) {
      throw UsageError(path.string() + ":" + std::to_string(lineno) + ": pair is not canonical (id_low < id_high)");
    }
    if (set.contains(low, high)) {
      throw UsageError(path.string() + ":" + std::to_string(lineno) + ": duplicate pair");
    }
    auto providers = j.at("providers").get<std::set<std::string>>();
    set.add(low, high, j.at("similarity").get<double>(), providers);
    set.providers.insert(providers.begin(), providers.end());
  });
  if (auto meta = read_meta(path)) {
    if (meta->contains("providers")) {
      auto p = (*meta)["providers"].get<std::set<std::string>>();
      set.providers.insert(p.begin(), p.end());
    }
    set.corpus_id = meta->value("corpus_id", std::string{});
    if (meta->contains("config")) set.config = nlohmann::ordered_json::parse((*meta)["config"].dump());
  }
  return set;
}

// ---------------------------------------------------------------------------
// One provider, one configuration, end to end.

struct DetectOutcome {
  std::vector<CodeFragment> fragments;   // as extracted (untruncated)
  EmbedOutcome embedding;
  std::vector<NeighborList> capture;     // raw search: threshold 0, raw topN
  CandidateSet candidates;               // filtered by the config
};

/// truncate -> embed -> index -> knn_search -> threshold_filter -> pairs.
/// Fragments whose embedding failed are excluded and listed in
/// `embedding.failures`.
inline DetectOutcome detect(std::vector<CodeFragment> fragments, EmbeddingProvider& provider, const RunConfig& config,
                            EmbeddingCache& cache, unsigned threads = default_parallelism()) {
  config.validate();
  DetectOutcome out;
  out.fragments = std::move(fragments);
  const std::string corpus_id = corpus_id_of_fragments(out.fragments);
  const auto snapshot = candidate_config(config, provider.id(), config.threshold, config.top_n);
  if (out.fragments.empty()) {
    out.candidates = pairs_from_neighbors({}, provider.id(), snapshot, corpus_id);
    return out;
  }
  out.embedding = embed_fragments(out.fragments, provider, config.code_length, cache);
  if (out.embedding.records.empty()) {
    throw StageError(provider.id() + ": no fragment could be embedded");
  }
  const auto index = VectorIndex::from_records(out.embedding.records);
  KnnOptions opts;
  opts.backend = config.search_backend;
  opts.hnsw = config.hnsw;
  opts.threads = threads;
  out.capture = knn_search(index, raw_top_n(config), opts);
  out.candidates =
      pairs_from_neighbors(threshold_filter(out.capture, config.threshold, config.top_n), provider.id(), snapshot,
                           corpus_id);
  return out;
}

}  // namespace sscd
