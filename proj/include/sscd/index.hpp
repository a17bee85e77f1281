#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "sscd/embed.hpp"
#include "sscd/error.hpp"
#include "sscd/fragment.hpp"
#include "sscd/hnsw.hpp"
#include "sscd/util.hpp"

namespace sscd {

/// Slack applied when comparing a similarity with a threshold. Vectors are
/// stored as unit-norm floats, so an exact duplicate scores 1 within ~1e-7
/// rather than exactly 1.
inline constexpr double kSimilaritySlack = 1e-6;

inline bool meets_threshold(double similarity, double threshold) {
  return similarity >= threshold - kSimilaritySlack;
}

inline double dot(std::span<const float> a, std::span<const float> b) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t n = a.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc[0] += static_cast<double>(a[i]) * b[i];
    acc[1] += static_cast<double>(a[i + 1]) * b[i + 1];
    acc[2] += static_cast<double>(a[i + 2]) * b[i + 2];
    acc[3] += static_cast<double>(a[i + 3]) * b[i + 3];
  }
  for (; i < n; ++i) acc[0] += static_cast<double>(a[i]) * b[i];
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

/// dot(a, b) / (|a| |b|). Throws std::domain_error for a zero vector and
/// std::invalid_argument on a dimension mismatch.
inline double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: dimension mismatch");
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) throw std::domain_error("cosine_similarity: zero vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

enum class SearchBackend { kExact, kApproximate };

inline std::string_view to_string(SearchBackend b) { return b == SearchBackend::kExact ? "exact" : "approx"; }

inline SearchBackend parse_backend(std::string_view s) {
  if (s == "exact" || s == "naive") return SearchBackend::kExact;
  if (s == "approx" || s == "approximate" || s == "hnsw") return SearchBackend::kApproximate;
  throw UsageError("unknown search backend '" + std::string(s) + "' (expected exact or approx)");
}

struct Neighbor {
  std::string fragment_id;
  double similarity;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Neighbours of one fragment, most similar first, ties by ascending id.
struct NeighborList {
  std::string query_fragment_id;
  std::vector<Neighbor> neighbors;

  friend bool operator==(const NeighborList&, const NeighborList&) = default;
};

/// Immutable-after-build collection of unit vectors for one provider.
class VectorIndex {
 public:
  VectorIndex(std::string provider_id, std::size_t dimension)
      : provider_id_(std::move(provider_id)), dimension_(dimension) {
    if (dimension_ == 0) throw UsageError("index dimension must be positive");
  }

  static VectorIndex from_records(const std::vector<EmbeddingRecord>& records) {
    if (records.empty()) throw UsageError("cannot build an index from zero embeddings");
    VectorIndex index(records.front().provider_id, records.front().vector.size());
    for (const auto& r : records) {
      if (r.provider_id != index.provider_id_) {
        throw UsageError("index for '" + index.provider_id_ + "' given a record from '" + r.provider_id + "'");
      }
      index.add(r.fragment_id, r.vector);
    }
    return index;
  }

  void add(const std::string& fragment_id, std::span<const float> v) {
    if (v.size() != dimension_) {
      throw UsageError("fragment " + fragment_id + ": dimension " + std::to_string(v.size()) + " != index dimension " +
                       std::to_string(dimension_));
    }
    if (std::abs(l2_norm(v) - 1.0) > kNormTolerance) {
      throw UsageError("fragment " + fragment_id + ": vector is not unit length");
    }
    if (!rows_.emplace(fragment_id, ids_.size()).second) {
      throw UsageError("duplicate fragment id in index: " + fragment_id);
    }
    ids_.push_back(fragment_id);
    data_.insert(data_.end(), v.begin(), v.end());
  }

  std::size_t size() const { return ids_.size(); }
  std::size_t dimension() const { return dimension_; }
  const std::string& provider_id() const { return provider_id_; }
  const std::string& id(std::size_t row) const { return ids_[row]; }
  const std::vector<std::string>& ids() const { return ids_; }
  std::span<const float> vector(std::size_t row) const {
    return std::span<const float>(data_).subspan(row * dimension_, dimension_);
  }
  std::span<const float> matrix() const { return data_; }
  std::optional<std::size_t> row_of(const std::string& id) const {
    auto it = rows_.find(id);
    if (it == rows_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::string provider_id_;
  std::size_t dimension_;
  std::vector<std::string> ids_;
  std::vector<float> data_;
  std::unordered_map<std::string, std::size_t> rows_;
};

struct KnnOptions {
  SearchBackend backend = SearchBackend::kExact;
  HnswParams hnsw;
  unsigned threads = default_parallelism();
};

namespace detail {

inline bool ranks_before(const Neighbor& a, const Neighbor& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return a.fragment_id < b.fragment_id;
}

inline double unit_similarity(std::span<const float> a, std::span<const float> b) {
  return std::clamp(dot(a, b), -1.0, 1.0);
}

}  // namespace detail

/// For every indexed fragment, its `top_n` most cosine-similar other
/// fragments (self excluded by id). One list per row, in index order.
/// The exact backend is a flat scan; the approximate one searches an HNSW
/// graph and rescores the hits exactly.
inline std::vector<NeighborList> knn_search(const VectorIndex& index, std::size_t top_n,
                                            const KnnOptions& opts = {}) {
  if (index.size() == 0) throw UsageError("knn_search on an empty index");
  if (top_n == 0) throw UsageError("topN must be at least 1");
  const std::size_t n = index.size();
  std::vector<NeighborList> out(n);

  if (opts.backend == SearchBackend::kExact) {
    parallel_for(n, opts.threads, [&](std::size_t q) {
      std::vector<std::pair<double, std::size_t>> all;
      all.reserve(n - 1);
      const auto qv = index.vector(q);
      for (std::size_t j = 0; j < n; ++j) {
        if (j != q) all.emplace_back(detail::unit_similarity(qv, index.vector(j)), j);
      }
      const std::size_t keep = std::min(top_n, all.size());
      std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                        [&](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return index.id(a.second) < index.id(b.second);
                        });
      std::vector<Neighbor> kept;
      kept.reserve(keep);
      for (std::size_t i = 0; i < keep; ++i) kept.push_back({index.id(all[i].second), all[i].first});
      out[q] = {index.id(q), std::move(kept)};
    });
    return out;
  }

  const HnswGraph graph(index.matrix(), index.dimension(), opts.hnsw);
  const std::size_t want = top_n + 1;
  parallel_for(n, opts.threads, [&](std::size_t q) {
    const auto qv = index.vector(q);
    auto hits = graph.search(qv, want, std::max(opts.hnsw.ef_search, want));
    std::vector<Neighbor> found;
    found.reserve(hits.size());
    for (const auto& [dist, row] : hits) {
      if (row == q) continue;
      found.push_back({index.id(row), detail::unit_similarity(qv, index.vector(row))});
    }
    std::sort(found.begin(), found.end(), detail::ranks_before);
    if (found.size() > top_n) found.resize(top_n);
    out[q] = {index.id(q), std::move(found)};
  });
  return out;
}

/// Truncates each list to `top_n` entries, then drops entries below
/// `threshold`. Pure; safe to re-run over a captured search.
inline std::vector<NeighborList> threshold_filter(const std::vector<NeighborList>& lists, double threshold,
                                                  std::size_t top_n) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw std::invalid_argument("threshold must lie in [0, 1]");
  }
  if (top_n == 0) throw std::invalid_argument("topN must be at least 1");
  std::vector<NeighborList> out;
  out.reserve(lists.size());
  for (const auto& list : lists) {
    NeighborList kept{list.query_fragment_id, {}};
    const std::size_t limit = std::min(top_n, list.neighbors.size());
    for (std::size_t i = 0; i < limit; ++i) {
      if (meets_threshold(list.neighbors[i].similarity, threshold)) kept.neighbors.push_back(list.neighbors[i]);
    }
    out.push_back(std::move(kept));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Neighbour capture file: one JSON object per line.

inline std::string serialize_capture(const std::vector<NeighborList>& lists) {
  std::string out;
  for (const auto& l : lists) {
    nlohmann::ordered_json j;
    j["query_fragment_id"] = l.query_fragment_id;
    auto arr = nlohmann::ordered_json::array();
    for (const auto& nb : l.neighbors) arr.push_back(nlohmann::ordered_json::array({nb.fragment_id, nb.similarity}));
    j["neighbors"] = std::move(arr);
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

inline void write_capture(const std::vector<NeighborList>& lists, const std::filesystem::path& out) {
  atomic_write(out, serialize_capture(lists));
}

inline std::vector<NeighborList> read_capture(const std::filesystem::path& path) {
  std::vector<NeighborList> out;
  for_each_ndjson(path, [&](const nlohmann::json& j, std::size_t lineno) {
    NeighborList l;
    l.query_fragment_id = j.at("query_fragment_id").get<std::string>();
    for (const auto& nb : j.at("neighbors")) {
      if (!nb.is_array() || nb.size() != 2) {
        throw UsageError(path.string() + ":" + std::to_string(lineno) + ": neighbour must be [id, similarity]");
      }
      l.neighbors.push_back({nb[0].get<std::string>(), nb[1].get<double>()});
    }
    out.push_back(std::move(l));
  });
  return out;
}

}  // namespace sscd
