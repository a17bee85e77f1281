#pragma once

#include <string>
#include <vector>

#include "sscd/detect.hpp"
#include "sscd/error.hpp"

namespace sscd {

/// A named combination of provider runs, e.g. "CT5_CBF_GCB".
struct EnsembleSpec {
  std::string name;
  std::vector<std::string> members;

  friend bool operator==(const EnsembleSpec&, const EnsembleSpec&) = default;
};

inline std::string ensemble_name(const std::vector<std::string>& members) {
  std::string name;
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (i > 0) name.push_back('_');
    name += members[i];
  }
  return name;
}

/// Deduplicated union of candidate sets over the same corpus. Shared pairs
/// appear once with the union of providers and the max similarity.
inline CandidateSet merge_union(const std::vector<CandidateSet>& sets) {
  if (sets.size() < 2) throw UsageError("merge_union needs at least two candidate sets");
  CandidateSet merged;
  auto members = nlohmann::ordered_json::array();
  for (const auto& s : sets) {
    if (!s.corpus_id.empty()) {
      if (merged.corpus_id.empty()) {
        merged.corpus_id = s.corpus_id;
      } else if (merged.corpus_id != s.corpus_id) {
        throw UsageError("cannot merge candidate sets from different corpora");
      }
    }
    merged.providers.insert(s.providers.begin(), s.providers.end());
    for (const auto& [key, p] : s.by_key()) merged.add(p.id_low, p.id_high, p.similarity, p.providers);
    members.push_back(s.config);
  }
  merged.config = {{"merge", "union"}, {"members", std::move(members)}};
  return merged;
}

/// Every subset of `members` with at least `min_size` elements, ordered by
/// size and then lexicographically by member position. Names join member
/// labels with '_' in input order.
inline std::vector<EnsembleSpec> enumerate_combinations(const std::vector<std::string>& members,
                                                        std::size_t min_size = 2) {
  if (members.size() < 2) throw UsageError("ensembles need at least two provider runs");
  for (std::size_t i = 0; i < members.size(); ++i) {
    for (std::size_t j = i + 1; j < members.size(); ++j) {
      if (members[i] == members[j]) throw UsageError("duplicate ensemble member '" + members[i] + "'");
    }
  }
  std::vector<EnsembleSpec> out;
  const std::size_t n = members.size();
  for (std::size_t k = std::max<std::size_t>(min_size, 1); k <= n; ++k) {
    std::vector<std::size_t> idx(k);
    for (std::size_t i = 0; i < k; ++i) idx[i] = i;
    for (;;) {
      EnsembleSpec spec;
      for (std::size_t i : idx) spec.members.push_back(members[i]);
      spec.name = ensemble_name(spec.members);
      out.push_back(std::move(spec));
      // Advance to the next k-combination in lexicographic index order.
      std::size_t pos = k;
      while (pos > 0 && idx[pos - 1] == n - k + (pos - 1)) --pos;
      if (pos == 0) break;
      ++idx[pos - 1];
      for (std::size_t i = pos; i < k; ++i) idx[i] = idx[i - 1] + 1;
    }
  }
  return out;
}

}  // namespace sscd
