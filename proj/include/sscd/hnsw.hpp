#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <random>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace sscd {

struct HnswParams {
  std::size_t m = 16;
  std::size_t ef_construction = 200;
  std::size_t ef_search = 128;
  std::uint64_t seed = 42;
};

/// Hierarchical navigable small-world graph over unit vectors, with
/// distance 1 - dot(a, b). Built once by a single writer over a row-major
/// matrix that must outlive the graph; search() is const and safe to call
/// from many threads.
class HnswGraph {
 public:
  using Id = std::uint32_t;
  using Scored = std::pair<float, Id>;  // (distance, id); ties fall to the lower id

  HnswGraph(std::span<const float> data, std::size_t dim, HnswParams params = {})
      : data_(data), dim_(dim), params_(params) {
    if (dim_ == 0 || data_.size() % dim_ != 0) throw std::invalid_argument("hnsw: bad matrix shape");
    if (params_.m < 2) throw std::invalid_argument("hnsw: M must be at least 2");
    count_ = data_.size() / dim_;
    max_links0_ = 2 * params_.m;
    level_mult_ = 1.0 / std::log(static_cast<double>(params_.m));
    links_.resize(count_);
    std::mt19937_64 rng(params_.seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<Id> visited(count_, 0);
    Id epoch = 0;
    for (std::size_t i = 0; i < count_; ++i) {
      const double u = std::max(unif(rng), 1e-300);
      insert(static_cast<Id>(i), static_cast<int>(-std::log(u) * level_mult_), visited, epoch);
    }
  }

  std::size_t size() const { return count_; }

  /// The k nearest rows to `query`, nearest first.
  std::vector<Scored> search(std::span<const float> query, std::size_t k, std::size_t ef) const {
    if (count_ == 0 || k == 0) return {};
    thread_local std::vector<Id> visited;
    thread_local Id epoch = 0;
    if (visited.size() < count_) {
      visited.assign(count_, 0);
      epoch = 0;
    }
    Id ep = entry_;
    float ep_dist = distance(query, ep);
    for (int level = max_level_; level > 0; --level) greedy(query, ep, ep_dist, level);
    auto found = search_layer(query, {{ep_dist, ep}}, std::max(ef, k), 0, visited, epoch);
    if (found.size() > k) found.resize(k);
    return found;
  }

  float distance(std::span<const float> q, Id id) const {
    const float* v = data_.data() + static_cast<std::size_t>(id) * dim_;
    float acc0 = 0, acc1 = 0, acc2 = 0, acc3 = 0;
    std::size_t i = 0;
    for (; i + 4 <= dim_; i += 4) {
      acc0 += q[i] * v[i];
      acc1 += q[i + 1] * v[i + 1];
      acc2 += q[i + 2] * v[i + 2];
      acc3 += q[i + 3] * v[i + 3];
    }
    for (; i < dim_; ++i) acc0 += q[i] * v[i];
    return 1.0f - ((acc0 + acc1) + (acc2 + acc3));
  }

 private:
  std::span<const float> row(Id id) const { return data_.subspan(static_cast<std::size_t>(id) * dim_, dim_); }
  std::size_t max_links(int level) const { return level == 0 ? max_links0_ : params_.m; }

  void greedy(std::span<const float> q, Id& ep, float& ep_dist, int level) const {
    for (bool changed = true; changed;) {
      changed = false;
      for (Id n : links_[ep][static_cast<std::size_t>(level)]) {
        const float d = distance(q, n);
        if (d < ep_dist || (d == ep_dist && n < ep)) {
          ep = n;
          ep_dist = d;
          changed = true;
        }
      }
    }
  }

  // Best-first search on one layer. Returns up to `ef` results, nearest first.
  std::vector<Scored> search_layer(std::span<const float> q, const std::vector<Scored>& entry, std::size_t ef,
                                   int level, std::vector<Id>& visited, Id& epoch) const {
    if (++epoch == 0) {
      std::fill(visited.begin(), visited.end(), 0);
      epoch = 1;
    }
    std::priority_queue<Scored, std::vector<Scored>, std::greater<>> frontier;  // min-heap
    std::priority_queue<Scored> best;                                           // max-heap
    for (const auto& e : entry) {
      visited[e.second] = epoch;
      frontier.push(e);
      best.push(e);
    }
    while (best.size() > ef) best.pop();
    while (!frontier.empty()) {
      const Scored cur = frontier.top();
      if (best.size() >= ef && cur > best.top()) break;
      frontier.pop();
      for (Id n : links_[cur.second][static_cast<std::size_t>(level)]) {
        if (visited[n] == epoch) continue;
        visited[n] = epoch;
        const Scored cand{distance(q, n), n};
        if (best.size() < ef || cand < best.top()) {
          frontier.push(cand);
          best.push(cand);
          if (best.size() > ef) best.pop();
        }
      }
    }
    std::vector<Scored> out(best.size());
    for (std::size_t i = out.size(); i > 0; --i) {
      out[i - 1] = best.top();
      best.pop();
    }
    return out;
  }

  // Keeps a candidate only if it is closer to the base than to every
  // neighbour already kept; this spreads links across directions.
  std::vector<Id> select_neighbors(const std::vector<Scored>& sorted, std::size_t limit) const {
    std::vector<Id> kept;
    for (const auto& [dist, id] : sorted) {
      if (kept.size() >= limit) break;
      bool diverse = true;
      for (Id k : kept) {
        if (distance(row(id), k) < dist) {
          diverse = false;
          break;
        }
      }
      if (diverse) kept.push_back(id);
    }
    return kept;
  }

  void insert(Id id, int level, std::vector<Id>& visited, Id& epoch) {
    links_[id].resize(static_cast<std::size_t>(level) + 1);
    if (id == 0) {
      entry_ = 0;
      max_level_ = level;
      return;
    }
    const auto q = row(id);
    Id ep = entry_;
    float ep_dist = distance(q, ep);
    for (int l = max_level_; l > level; --l) greedy(q, ep, ep_dist, l);

    std::vector<Scored> entry{{ep_dist, ep}};
    for (int l = std::min(level, max_level_); l >= 0; --l) {
      auto found = search_layer(q, entry, params_.ef_construction, l, visited, epoch);
      auto chosen = select_neighbors(found, params_.m);
      auto& mine = links_[id][static_cast<std::size_t>(l)];
      mine = chosen;
      for (Id n : chosen) {
        auto& theirs = links_[n][static_cast<std::size_t>(l)];
        theirs.push_back(id);
        if (theirs.size() > max_links(l)) {
          std::vector<Scored> scored;
          scored.reserve(theirs.size());
          for (Id t : theirs) scored.push_back({distance(row(n), t), t});
          std::sort(scored.begin(), scored.end());
          theirs = select_neighbors(scored, max_links(l));
        }
      }
      entry = std::move(found);
    }
    if (level > max_level_) {
      max_level_ = level;
      entry_ = id;
    }
  }

  std::span<const float> data_;
  std::size_t dim_;
  HnswParams params_;
  std::size_t count_ = 0;
  std::size_t max_links0_ = 32;
  double level_mult_ = 1.0;
  std::vector<std::vector<std::vector<Id>>> links_;  // [node][level] -> neighbours
  Id entry_ = 0;
  int max_level_ = 0;
};

}  // namespace sscd
