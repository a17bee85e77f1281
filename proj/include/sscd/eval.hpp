#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "sscd/detect.hpp"
#include "sscd/error.hpp"
#include "sscd/index.hpp"
#include "sscd/util.hpp"

namespace sscd {

// ---------------------------------------------------------------------------
// Gold standard

struct GoldStandard {
  std::set<PairKey> pairs;
  std::string corpus_id;

  std::size_t size() const { return pairs.size(); }
  bool contains(const PairKey& k) const { return pairs.count(k) != 0; }
};

namespace detail {

/// Splits one CSV record; handles quoted fields with doubled quotes.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back().push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back().push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c != '\r') {
      fields.back().push_back(c);
    }
  }
  if (quoted) throw UsageError("unterminated quoted CSV field");
  return fields;
}

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Reads a pair list: CSV with header `id_a,id_b`, pairs canonicalized,
/// duplicates collapsed. With a fragment universe, ids outside it are an
/// error that lists every offender.
inline std::set<PairKey> read_pair_csv(const std::filesystem::path& path,
                                       const std::set<std::string>* universe = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  int col_a = -1, col_b = -1;
  std::set<PairKey> pairs;
  std::set<std::string> unknown;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty() || line == "\r") continue;
    std::vector<std::string> fields;
    try {
      fields = detail::split_csv_line(line);
    } catch (const UsageError& e) {
      throw UsageError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (col_a < 0) {
      for (std::size_t i = 0; i < fields.size(); ++i) {
        auto h = detail::trim(fields[i]);
        if (i == 0 && h.rfind("\xEF\xBB\xBF", 0) == 0) h = h.substr(3);
        if (h == "id_a") col_a = static_cast<int>(i);
        if (h == "id_b") col_b = static_cast<int>(i);
      }
      if (col_a < 0 || col_b < 0) throw UsageError(path.string() + ": header must name columns id_a,id_b");
      continue;
    }
    const auto need = static_cast<std::size_t>(std::max(col_a, col_b));
    if (fields.size() <= need) {
      throw UsageError(path.string() + ":" + std::to_string(lineno) + ": expected id_a,id_b");
    }
    auto a = fields[static_cast<std::size_t>(col_a)];
    auto b = fields[static_cast<std::size_t>(col_b)];
    if (a.empty() || b.empty()) throw UsageError(path.string() + ":" + std::to_string(lineno) + ": empty id");
    if (a == b) throw UsageError(path.string() + ":" + std::to_string(lineno) + ": self pair '" + a + "'");
    if (universe) {
      if (!universe->count(a)) unknown.insert(a);
      if (!universe->count(b)) unknown.insert(b);
    }
    pairs.insert(canonical_pair(a, b));
  }
  if (!unknown.empty()) {
    std::string msg = path.string() + ": " + std::to_string(unknown.size()) + " id(s) not in the corpus:";
    for (const auto& id : unknown) msg += "\n  " + id;
    throw UsageError(msg);
  }
  return pairs;
}

inline GoldStandard load_gold(const std::filesystem::path& path, const std::set<std::string>* universe = nullptr,
                              std::string corpus_id = {}) {
  GoldStandard g{read_pair_csv(path, universe), std::move(corpus_id)};
  if (g.pairs.empty()) throw UsageError(path.string() + ": gold standard has no pairs");
  return g;
}

inline std::string serialize_pair_csv(const std::set<PairKey>& pairs) {
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q.push_back('"');
      q.push_back(c);
    }
    return q + "\"";
  };
  std::string out = "id_a,id_b\n";
  for (const auto& [a, b] : pairs) out += quote(a) + "," + quote(b) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

/// Recall, precision and F-score, all in percent. Precision is undefined
/// (nullopt) for an empty candidate set and F is then 0.
struct MetricsReport {
  std::string name;
  std::vector<std::string> members;  // non-empty for ensembles
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t gold_size = 0;
  double recall = 0.0;
  std::optional<double> precision;
  double f_score = 0.0;
  std::optional<double> threshold;
  std::optional<std::size_t> top_n;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// Harmonic mean of two percentages; 0 when both are 0.
inline double f_score(double recall, double precision) {
  return recall + precision == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

inline MetricsReport metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t gold_size) {
  if (gold_size == 0) throw UsageError("gold standard is empty");
  MetricsReport r;
  r.tp = tp;
  r.fp = fp;
  r.gold_size = gold_size;
  r.recall = 100.0 * static_cast<double>(tp) / static_cast<double>(gold_size);
  if (tp + fp > 0) {
    r.precision = 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp);
    r.f_score = f_score(r.recall, *r.precision);
  }
  return r;
}

/// Scores a candidate set strictly against gold: every non-gold pair is a
/// false positive unless it appears in the adjudicated allow-list.
inline MetricsReport score(const CandidateSet& candidates, const GoldStandard& gold,
                           const std::set<PairKey>* allow_list = nullptr, std::string name = {}) {
  if (!candidates.corpus_id.empty() && !gold.corpus_id.empty() && candidates.corpus_id != gold.corpus_id) {
    throw UsageError("candidate set and gold standard come from different corpora");
  }
  std::size_t tp = 0, fp = 0;
  for (const auto& [key, p] : candidates.by_key()) {
    if (gold.contains(key)) {
      ++tp;
    } else if (!allow_list || allow_list->count(key) == 0) {
      ++fp;
    }
  }
  auto r = metrics_from_counts(tp, fp, gold.size());
  r.name = std::move(name);
  return r;
}

// ---------------------------------------------------------------------------
// Sweep

/// Inclusive arithmetic grid start, start+step, ..., stop.
inline std::vector<double> threshold_grid(double start = 0.0, double stop = 1.0, double step = 0.01) {
  if (!(step > 0.0) || stop < start) throw UsageError("invalid threshold grid");
  if (start < 0.0 || stop > 1.0) throw UsageError("threshold grid must lie in [0, 1]");
  const auto count = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
  std::vector<double> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    // Round away accumulated binary error so 0.29 prints and compares as 0.29.
    out.push_back(std::round((start + static_cast<double>(i) * step) * 1e9) / 1e9);
  }
  return out;
}

inline std::vector<std::size_t> top_n_grid(std::size_t start = 1, std::size_t stop = 10, std::size_t step = 1) {
  if (start == 0 || step == 0 || stop < start) throw UsageError("invalid topN grid");
  std::vector<std::size_t> out;
  for (std::size_t n = start; n <= stop; n += step) out.push_back(n);
  return out;
}

struct SweepCell {
  double threshold;
  std::size_t top_n;
  MetricsReport report;
};

struct SweepResult {
  std::string name;
  std::vector<SweepCell> cells;  // threshold-major, both axes ascending
  std::size_t best = 0;

  const SweepCell& best_cell() const { return cells.at(best); }
};

/// True when `a` should win over `b` as the best cell: higher F, then
/// higher threshold, then lower topN.
inline bool better_cell(const SweepCell& a, const SweepCell& b) {
  if (a.report.f_score != b.report.f_score) return a.report.f_score > b.report.f_score;
  if (a.threshold != b.threshold) return a.threshold > b.threshold;
  return a.top_n < b.top_n;
}

/// Verifies the capture holds enough neighbours for every topN in the grid:
/// each list has at least max_top_n entries or already holds every other
/// fragment.
inline void check_capture_depth(const std::vector<NeighborList>& capture, std::size_t max_top_n,
                                std::optional<std::size_t> raw_top_n) {
  if (raw_top_n) {
    if (*raw_top_n < max_top_n) {
      throw UsageError("capture was searched with topN " + std::to_string(*raw_top_n) + " but the grid needs " +
                       std::to_string(max_top_n));
    }
    return;
  }
  const std::size_t others = capture.empty() ? 0 : capture.size() - 1;
  for (const auto& l : capture) {
    if (l.neighbors.size() < max_top_n && l.neighbors.size() < others) {
      throw UsageError("capture list for " + l.query_fragment_id + " has only " +
                       std::to_string(l.neighbors.size()) + " neighbours; the grid needs " +
                       std::to_string(max_top_n));
    }
  }
}

/// Scores every (threshold, topN) cell over one captured raw search and
/// picks the best F-score. Each cell equals
/// score(pairs_from_neighbors(threshold_filter(capture, t, n)), gold); the
/// implementation sorts per-pair similarities once per topN instead of
/// rebuilding sets per cell.
inline SweepResult sweep(const std::vector<NeighborList>& capture, const GoldStandard& gold,
                         const std::vector<double>& thresholds = threshold_grid(),
                         const std::vector<std::size_t>& top_ns = top_n_grid(),
                         std::optional<std::size_t> raw_top_n = std::nullopt,
                         const std::set<PairKey>* allow_list = nullptr, std::string name = {}) {
  if (thresholds.empty() || top_ns.empty()) throw UsageError("sweep grid is empty");
  for (double t : thresholds) {
    if (!(t >= 0.0 && t <= 1.0)) throw UsageError("sweep thresholds must lie in [0, 1]");
  }
  for (std::size_t n : top_ns) {
    if (n == 0) throw UsageError("sweep topN values must be at least 1");
  }
  check_capture_depth(capture, *std::max_element(top_ns.begin(), top_ns.end()), raw_top_n);
  if (gold.size() == 0) throw UsageError("gold standard is empty");

  // counts[n][t] = (tp, fp)
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> counts(top_ns.size());
  parallel_for(top_ns.size(), default_parallelism(), [&](std::size_t ni) {
    const std::size_t n = top_ns[ni];
    std::map<PairKey, double> best_sim;
    for (const auto& l : capture) {
      const std::size_t limit = std::min(n, l.neighbors.size());
      for (std::size_t r = 0; r < limit; ++r) {
        auto key = canonical_pair(l.query_fragment_id, l.neighbors[r].fragment_id);
        auto [it, inserted] = best_sim.try_emplace(key, l.neighbors[r].similarity);
        if (!inserted) it->second = std::max(it->second, l.neighbors[r].similarity);
      }
    }
    std::vector<double> hits, misses;
    for (const auto& [key, s] : best_sim) {
      if (gold.contains(key)) {
        hits.push_back(s);
      } else if (!allow_list || allow_list->count(key) == 0) {
        misses.push_back(s);
      }
    }
    std::sort(hits.begin(), hits.end());
    std::sort(misses.begin(), misses.end());
    auto passing = [](const std::vector<double>& v, double t) {
      // Same predicate as threshold_filter: s >= t - slack.
      return static_cast<std::size_t>(v.end() - std::lower_bound(v.begin(), v.end(), t - kSimilaritySlack));
    };
    counts[ni].reserve(thresholds.size());
    for (double t : thresholds) counts[ni].emplace_back(passing(hits, t), passing(misses, t));
  });

  SweepResult result;
  result.name = std::move(name);
  result.cells.reserve(thresholds.size() * top_ns.size());
  for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
    for (std::size_t ni = 0; ni < top_ns.size(); ++ni) {
      auto [tp, fp] = counts[ni][ti];
      SweepCell cell{thresholds[ti], top_ns[ni], metrics_from_counts(tp, fp, gold.size())};
      cell.report.name = result.name;
      cell.report.threshold = thresholds[ti];
      cell.report.top_n = top_ns[ni];
      result.cells.push_back(std::move(cell));
    }
  }
  for (std::size_t i = 1; i < result.cells.size(); ++i) {
    if (better_cell(result.cells[i], result.cells[result.best])) result.best = i;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Comparison

struct ComparisonRow {
  MetricsReport report;
  std::optional<double> delta_f;          // ensemble F minus best member F
  std::optional<std::string> best_member;
};

struct Comparison {
  std::vector<ComparisonRow> rows;      // F-score descending
  std::vector<std::string> violations;  // ensembles that lost recall
};

/// Sorts reports by F-score and annotates ensembles with their gain over
/// the best individual member. An ensemble whose recall falls below any
/// member's recall is impossible for a union and is flagged.
inline Comparison compare(std::vector<MetricsReport> reports) {
  for (const auto& r : reports) {
    if (r.gold_size != reports.front().gold_size) {
      throw UsageError("reports were scored against different gold standards");
    }
  }
  std::map<std::string, const MetricsReport*> by_name;
  for (const auto& r : reports) by_name[r.name] = &r;

  Comparison cmp;
  for (const auto& r : reports) {
    ComparisonRow row{r, std::nullopt, std::nullopt};
    if (r.members.size() >= 2) {
      const MetricsReport* best = nullptr;
      for (const auto& m : r.members) {
        auto it = by_name.find(m);
        if (it == by_name.end()) continue;
        const MetricsReport* member = it->second;
        if (r.recall + 1e-9 < member->recall) {
          char buf[160];
          std::snprintf(buf, sizeof buf, "%s recall %.2f is below member %s recall %.2f", r.name.c_str(), r.recall,
                        m.c_str(), member->recall);
          cmp.violations.emplace_back(buf);
        }
        if (!best || member->f_score > best->f_score) best = member;
      }
      if (best) {
        row.delta_f = r.f_score - best->f_score;
        row.best_member = best->name;
      }
    }
    cmp.rows.push_back(std::move(row));
  }
  std::stable_sort(cmp.rows.begin(), cmp.rows.end(), [](const ComparisonRow& a, const ComparisonRow& b) {
    if (a.report.f_score != b.report.f_score) return a.report.f_score > b.report.f_score;
    return a.report.name < b.report.name;
  });
  return cmp;
}

inline void enforce_ensemble_guard(const Comparison& cmp) {
  if (cmp.violations.empty()) return;
  std::string msg = "ensemble recall guard failed:";
  for (const auto& v : cmp.violations) msg += "\n  " + v;
  throw IntegrityError(msg);
}

inline std::string format_fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string format_delta(double v) {
  // Keep "+0.00" for a zero delta rather than "-0.00".
  if (std::abs(v) < 0.005) v = 0.0;
  return (v >= 0 ? "+" : "") + format_fixed(v);
}

inline std::string render_comparison(const Comparison& cmp) {
  std::size_t name_w = 8;
  for (const auto& r : cmp.rows) name_w = std::max(name_w, r.report.name.size());
  std::ostringstream out;
  auto pad = [](std::string s, std::size_t w, bool left) {
    // Column widths count code points; the dash for undefined is 3 bytes.
    std::size_t shown = 0;
    for (unsigned char c : s) shown += (c & 0xC0) != 0x80;
    std::string fill(w > shown ? w - shown : 0, ' ');
    return left ? s + fill : fill + s;
  };
  out << pad("Name", name_w, true) << "  " << pad("Recall", 7, false) << "  " << pad("Prec.", 7, false) << "  "
      << pad("F", 7, false) << "  " << pad("dF", 7, false) << "  " << pad("TP", 6, false) << "  "
      << pad("FP", 6, false) << '\n';
  for (const auto& row : cmp.rows) {
    const auto& r = row.report;
    out << pad(r.name, name_w, true) << "  " << pad(format_fixed(r.recall), 7, false) << "  "
        << pad(r.precision ? format_fixed(*r.precision) : "\xE2\x80\x94", 7, false) << "  "
        << pad(format_fixed(r.f_score), 7, false) << "  "
        << pad(row.delta_f ? format_delta(*row.delta_f) : "", 7, false) << "  " << pad(std::to_string(r.tp), 6, false)
        << "  " << pad(std::to_string(r.fp), 6, false) << '\n';
  }
  for (const auto& v : cmp.violations) out << "VIOLATION: " << v << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["name"] = r.name;
  if (!r.members.empty()) j["members"] = r.members;
  if (r.threshold) j["threshold"] = *r.threshold;
  if (r.top_n) j["top_n"] = *r.top_n;
  j["tp"] = r.tp;
  j["fp"] = r.fp;
  j["gold_size"] = r.gold_size;
  j["recall"] = r.recall;
  j["precision"] = r.precision ? nlohmann::ordered_json(*r.precision) : nlohmann::ordered_json(nullptr);
  j["f_score"] = r.f_score;
  return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.name = j.at("name").get<std::string>();
  r.members = j.value("members", std::vector<std::string>{});
  if (j.contains("threshold")) r.threshold = j["threshold"].get<double>();
  if (j.contains("top_n")) r.top_n = j["top_n"].get<std::size_t>();
  r.tp = j.at("tp").get<std::size_t>();
  r.fp = j.at("fp").get<std::size_t>();
  r.gold_size = j.at("gold_size").get<std::size_t>();
  r.recall = j.at("recall").get<double>();
  if (!j.at("precision").is_null()) r.precision = j["precision"].get<double>();
  r.f_score = j.at("f_score").get<double>();
  return r;
}

inline nlohmann::ordered_json to_json(const SweepResult& s) {
  nlohmann::ordered_json j;
  j["kind"] = "sweep";
  j["name"] = s.name;
  j["gold_size"] = s.cells.empty() ? 0 : s.cells.front().report.gold_size;
  j["cell_count"] = s.cells.size();
  j["best"] = to_json(s.best_cell().report);
  auto cells = nlohmann::ordered_json::array();
  for (const auto& c : s.cells) {
    cells.push_back({{"threshold", c.threshold},
                     {"top_n", c.top_n},
                     {"tp", c.report.tp},
                     {"fp", c.report.fp},
                     {"recall", c.report.recall},
                     {"precision", c.report.precision ? nlohmann::ordered_json(*c.report.precision)
                                                      : nlohmann::ordered_json(nullptr)},
                     {"f_score", c.report.f_score}});
  }
  j["cells"] = std::move(cells);
  return j;
}

inline nlohmann::ordered_json to_json(const Comparison& cmp) {
  nlohmann::ordered_json j;
  j["kind"] = "comparison";
  auto rows = nlohmann::ordered_json::array();
  for (const auto& r : cmp.rows) {
    auto row = to_json(r.report);
    if (r.delta_f) {
      row["delta_f"] = *r.delta_f;
      row["best_member"] = *r.best_member;
    }
    rows.push_back(std::move(row));
  }
  j["rows"] = std::move(rows);
  j["violations"] = cmp.violations;
  return j;
}

}  // namespace sscd
