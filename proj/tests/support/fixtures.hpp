#pragma once

#include <cstdio>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sscd/detect.hpp"
#include "sscd/eval.hpp"
#include "sscd/index.hpp"
#include "support/synthetic.hpp"

namespace sscd::testing {

/// Hand-built neighbour capture: 3 gold pairs at 0.98, 0.94 and 0.90, five
/// false pairs between 0.5 and 0.7, and filler below 0.5 padding every list
/// to 10 entries.
struct PlantedSweep {
  std::vector<NeighborList> capture;
  GoldStandard gold;
};

inline PlantedSweep planted_sweep_fixture() {
  const std::size_t n = 24;
  auto id = [](std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "g%02zu", i);
    return std::string(buf);
  };
  std::vector<std::vector<Neighbor>> lists(n);
  auto link = [&](std::size_t a, std::size_t b, double s) {
    lists[a].push_back({id(b), s});
    lists[b].push_back({id(a), s});
  };
  link(0, 1, 0.98);
  link(2, 3, 0.94);
  link(4, 5, 0.90);
  link(6, 7, 0.55);
  link(8, 9, 0.60);
  link(10, 11, 0.65);
  link(12, 13, 0.69);
  link(14, 15, 0.52);
  // A gold member also sees a false pair high in its list, so topN matters.
  link(0, 16, 0.61);
  Rng rng(606);
  PlantedSweep out;
  for (std::size_t q = 0; q < n; ++q) {
    std::set<std::string> seen;
    for (const auto& nb : lists[q]) seen.insert(nb.fragment_id);
    while (lists[q].size() < 10) {
      const std::size_t other = rng.below(n);
      if (other == q || !seen.insert(id(other)).second) continue;
      lists[q].push_back({id(other), 0.05 + 0.4 * rng.unit()});
    }
    std::sort(lists[q].begin(), lists[q].end(), [](const Neighbor& a, const Neighbor& b) {
      return a.similarity != b.similarity ? a.similarity > b.similarity : a.fragment_id < b.fragment_id;
    });
    out.capture.push_back({id(q), lists[q]});
  }
  out.gold.pairs = {{id(0), id(1)}, {id(2), id(3)}, {id(4), id(5)}};
  return out;
}

/// Cell-by-cell reference built from the plain operations:
/// threshold_filter, pairs_from_neighbors, score.
inline MetricsReport reference_cell(const std::vector<NeighborList>& capture, const GoldStandard& gold, double t,
                                    std::size_t n, const std::set<PairKey>* allow = nullptr) {
  return score(pairs_from_neighbors(threshold_filter(capture, t, n), "ref"), gold, allow);
}

struct ReferenceBest {
  double threshold = 0.0;
  std::size_t top_n = 0;
  double f_score = -1.0;
};

/// Exhaustive argmax of F; ties prefer the higher threshold, then the lower topN.
inline ReferenceBest reference_argmax(const std::vector<NeighborList>& capture, const GoldStandard& gold,
                                      const std::vector<double>& thresholds, const std::vector<std::size_t>& top_ns) {
  ReferenceBest best;
  for (double t : thresholds) {
    for (std::size_t n : top_ns) {
      const double f = reference_cell(capture, gold, t, n).f_score;
      const bool wins = f > best.f_score ||
                        (f == best.f_score && (t > best.threshold || (t == best.threshold && n < best.top_n)));
      if (wins) best = {t, n, f};
    }
  }
  return best;
}

/// Random candidate set over `universe` ids.
inline CandidateSet random_candidates(const std::vector<std::string>& universe, std::size_t count,
                                      const std::string& provider, Rng& rng) {
  CandidateSet s;
  s.providers.insert(provider);
  s.corpus_id = "random";
  while (s.size() < count) {
    const auto a = rng.below(universe.size()), b = rng.below(universe.size());
    if (a == b) continue;
    s.add(universe[a], universe[b], rng.unit(), {provider});
  }
  return s;
}

}  // namespace sscd::testing
