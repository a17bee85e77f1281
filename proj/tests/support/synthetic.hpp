#pragma once

// Test fixtures: random unit vectors, a scratch directory, and a generator
// for C corpora with planted Type-1 and Type-2 clone pairs.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "sscd/detect.hpp"
#include "sscd/embed.hpp"
#include "sscd/eval.hpp"

namespace sscd::testing {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "sscd") {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = fs::temp_directory_path() / (tag + "-" + std::to_string(rng()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

inline void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
}

/// Deterministic, platform-independent uniform draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() { return splitmix64(state_++); }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(next() % n); }
  double unit() { return static_cast<double>(next() >> 11) * (1.0 / 9007199254740992.0); }
  double normal() {
    // Box-Muller
    double u1 = unit(), u2 = unit();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }
  bool chance(double p) { return unit() < p; }

 private:
  std::uint64_t state_;
};

inline Vector random_unit(Rng& rng, std::size_t dim) {
  Vector v(dim);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  normalize(v);
  return v;
}

/// A small perturbation of `base`, renormalized.
inline Vector near_copy(Rng& rng, const Vector& base, double noise) {
  Vector v(base);
  for (auto& x : v) x += static_cast<float>(noise * rng.normal());
  normalize(v);
  return v;
}

inline std::vector<EmbeddingRecord> random_records(std::size_t n, std::size_t dim, std::uint64_t seed,
                                                   const std::string& provider = "test") {
  Rng rng(seed);
  std::vector<EmbeddingRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "f%06zu", i);
    out.push_back({id, provider, "", random_unit(rng, dim)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic C corpus

struct SyntheticFunction {
  std::string name;
  std::string text;  // full definition, no trailing newline
};

struct SyntheticCorpus {
  std::map<std::string, std::string> files;        // relative path -> contents
  std::vector<PairKey> type1;                      // planted exact copies
  std::vector<PairKey> type2;                      // planted renamed, reformatted copies
  std::vector<std::string> ids;                    // every function's fragment id
  std::size_t function_count = 0;

  std::set<PairKey> gold() const {
    std::set<PairKey> g(type1.begin(), type1.end());
    g.insert(type2.begin(), type2.end());
    return g;
  }

  void write(const fs::path& root) const {
    for (const auto& [rel, text] : files) write_text(root / rel, text);
  }

  void write_gold(const fs::path& csv) const { write_text(csv, serialize_pair_csv(gold())); }
};

struct SyntheticOptions {
  std::size_t type1_pairs = 20;
  std::size_t type2_pairs = 20;
  std::size_t unique = 120;
  std::size_t files = 10;
  std::uint64_t seed = 2024;
};

namespace detail {

// One source line as tokens plus its nesting depth.
struct Line {
  int depth;
  std::vector<std::string> tokens;
};

struct Layout {
  std::string indent = "    ";
  bool loose = true;          // spaces around every token
  bool brace_on_newline = false;
  double blank_line_chance = 0.0;
};

inline bool op_char(char c) { return std::string_view("+-*/%<>=&|!^~:.#?").find(c) != std::string_view::npos; }
inline bool word_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

inline std::string render_line(const std::vector<std::string>& toks, bool loose) {
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i > 0) {
      const char a = toks[i - 1].back(), b = toks[i].front();
      const bool need = (word_char(a) && word_char(b)) || (op_char(a) && op_char(b)) ||
                        (a == '/' && b == '*') || b == '"' || a == ',';
      if (loose || need) out.push_back(' ');
    }
    out += toks[i];
  }
  return out;
}

inline std::string render(const std::vector<Line>& lines, const Layout& layout, Rng& rng) {
  std::string out;
  for (std::size_t li = 0; li < lines.size(); ++li) {
    auto toks = lines[li].tokens;
    std::string prefix;
    for (int d = 0; d < lines[li].depth; ++d) prefix += layout.indent;
    if (li == 0 && layout.brace_on_newline && toks.back() == "{") {
      toks.pop_back();
      out += prefix + render_line(toks, layout.loose) + "\n{\n";
      continue;
    }
    if (li > 0 && li + 1 < lines.size() && rng.chance(layout.blank_line_chance)) out += "\n";
    out += prefix + render_line(toks, layout.loose);
    if (li + 1 < lines.size()) out += "\n";
  }
  return out;
}

inline std::string syllable_word(Rng& rng, std::size_t syllables) {
  static const char* kParts[] = {"ka", "lo", "mi", "ren", "sut", "va", "dor", "pel", "qui", "zan", "tor", "bex",
                                 "nim", "gal", "fru", "hes", "jo", "wyn", "crat", "plo", "ster", "mun", "ix", "ob"};
  std::string w;
  for (std::size_t i = 0; i < syllables; ++i) w += kParts[rng.below(std::size(kParts))];
  return w;
}

/// Generates one function as lines of tokens. `locals` receives the names
/// of parameters and locals (the identifiers a Type-2 copy renames).
inline std::vector<Line> make_function(Rng& rng, const std::string& name, const std::vector<std::string>& callees,
                                       const std::vector<std::string>& fields, std::vector<std::string>& locals) {
  static const char* kTypes[] = {"int", "long", "unsigned", "size_t", "double", "char"};
  auto fresh = [&] {
    std::string v = syllable_word(rng, 2) + std::to_string(rng.below(90) + 10);
    locals.push_back(v);
    return v;
  };
  auto pick = [&](const std::vector<std::string>& pool) { return pool[rng.below(pool.size())]; };
  auto num = [&] { return std::to_string(rng.below(9000) + 7); };

  std::vector<Line> lines;
  const std::string p0 = fresh(), p1 = fresh(), p2 = fresh();
  const std::string ret_type = kTypes[rng.below(3)];
  lines.push_back({0,
                   {"static", ret_type, name, "(", kTypes[rng.below(std::size(kTypes))], p0, ",", "const", "char",
                    "*", p1, ",", "struct", pick(fields) + "_rec", "*", p2, ")", "{"}});
  std::vector<std::string> vars{p0};
  const std::size_t decls = 2 + rng.below(3);
  for (std::size_t i = 0; i < decls; ++i) {
    auto v = fresh();
    lines.push_back({1, {kTypes[rng.below(std::size(kTypes))], v, "=", num(), ";"}});
    vars.push_back(v);
  }
  const std::size_t stmts = 5 + rng.below(10);
  for (std::size_t i = 0; i < stmts; ++i) {
    const auto a = pick(vars), b = pick(vars);
    switch (rng.below(7)) {
      case 0:
        lines.push_back({1, {a, "=", pick(callees), "(", b, ",", num(), ")", ";"}});
        break;
      case 1:
        lines.push_back({1, {a, "+=", p2, "->", pick(fields), "*", num(), ";"}});
        break;
      case 2:
        lines.push_back({1, {"if", "(", a, ">", num(), ")", "{"}});
        lines.push_back({2, {pick(callees), "(", p1, ",", b, ")", ";"}});
        lines.push_back({1, {"}"}});
        break;
      case 3:
        lines.push_back({1, {"for", "(", a, "=", "0", ";", a, "<", p0, ";", a, "++", ")", "{"}});
        lines.push_back({2, {b, "^=", pick(callees), "(", a, ")", "<<", std::to_string(1 + rng.below(7)), ";"}});
        lines.push_back({1, {"}"}});
        break;
      case 4:
        lines.push_back({1, {p2, "->", pick(fields), "=", a, "-", b, "/", num(), ";"}});
        break;
      case 5:
        lines.push_back({1, {pick(callees), "(", "\"" + syllable_word(rng, 3) + "\"", ",", a, ")", ";"}});
        break;
      default:
        lines.push_back({1, {"while", "(", a, "-->", "0", "&&", pick(callees), "(", b, ")", ")", "{"}});
        lines.push_back({2, {b, "=", b, "%", num(), "+", p2, "->", pick(fields), ";"}});
        lines.push_back({1, {"}"}});
        break;
    }
  }
  lines.push_back({1, {"return", pick(vars), ";"}});
  lines.push_back({0, {"}"}});
  return lines;
}

}  // namespace detail

/// Generates a C corpus of 2*type1 + 2*type2 + unique functions. Type-1
/// copies are byte-identical; Type-2 copies rename the function, its
/// parameters and its locals, and change indentation, spacing, brace
/// placement and blank lines. Copies land in a different file from their
/// original.
inline SyntheticCorpus make_synthetic_corpus(const SyntheticOptions& opt = {}) {
  Rng rng(opt.seed);
  std::vector<std::string> callees, fields;
  std::set<std::string> used;
  auto unique_word = [&](std::size_t syl, const std::string& prefix) {
    for (int tries = 0;; ++tries) {
      auto w = prefix + detail::syllable_word(rng, syl);
      // Large corpora exhaust the syllable space; fall back to a counter.
      if (tries >= 32) w += "_" + std::to_string(used.size());
      if (used.insert(w).second) return w;
    }
  };
  for (int i = 0; i < 300; ++i) callees.push_back(unique_word(3, ""));
  for (int i = 0; i < 80; ++i) fields.push_back(unique_word(2, "f_"));

  struct Planned {
    std::string name;
    std::string text;
    int group = -1;  // pair index, -1 for unique
    bool type1 = false;
  };
  std::vector<Planned> funcs;
  const detail::Layout base_layout{"    ", true, false, 0.0};

  auto make_pair = [&](int group, bool type1) {
    std::vector<std::string> locals;
    const auto name = unique_word(3, "fn_");
    auto lines = detail::make_function(rng, name, callees, fields, locals);
    funcs.push_back({name, detail::render(lines, base_layout, rng), group, type1});
    if (type1) {
      // Same name would collide only in id, not in text; keep the name.
      funcs.push_back({name, funcs.back().text, group, true});
      return;
    }
    std::map<std::string, std::string> rename{{name, unique_word(3, "fn_")}};
    for (const auto& l : locals) rename.emplace(l, unique_word(2, "v_"));
    for (auto& line : lines) {
      for (auto& t : line.tokens) {
        if (auto it = rename.find(t); it != rename.end()) t = it->second;
      }
    }
    detail::Layout layout{rng.chance(0.5) ? "\t" : "  ", false, true, 0.3};
    funcs.push_back({rename[name], detail::render(lines, layout, rng), group, false});
  };

  int group = 0;
  for (std::size_t i = 0; i < opt.type1_pairs; ++i) make_pair(group++, true);
  for (std::size_t i = 0; i < opt.type2_pairs; ++i) make_pair(group++, false);
  for (std::size_t i = 0; i < opt.unique; ++i) {
    std::vector<std::string> locals;
    const auto name = unique_word(3, "fn_");
    auto lines = detail::make_function(rng, name, callees, fields, locals);
    funcs.push_back({name, detail::render(lines, base_layout, rng), -1, false});
  }

  // Deal functions round-robin into files after a seeded shuffle, then
  // move any copy that shares a file with its original.
  std::vector<std::size_t> order(funcs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const std::size_t nfiles = std::max<std::size_t>(opt.files, 2);
  std::vector<std::vector<std::size_t>> per_file(nfiles);
  std::vector<std::size_t> file_of(funcs.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    per_file[k % nfiles].push_back(order[k]);
    file_of[order[k]] = k % nfiles;
  }
  for (std::size_t i = 0; i + 1 < funcs.size(); ++i) {
    if (funcs[i].group >= 0 && funcs[i + 1].group == funcs[i].group && file_of[i] == file_of[i + 1]) {
      auto& from = per_file[file_of[i + 1]];
      from.erase(std::find(from.begin(), from.end(), i + 1));
      const std::size_t to = (file_of[i + 1] + 1) % nfiles;
      per_file[to].push_back(i + 1);
      file_of[i + 1] = to;
    }
  }

  SyntheticCorpus corpus;
  std::vector<std::string> id_of(funcs.size());
  for (std::size_t f = 0; f < nfiles; ++f) {
    char path[32];
    std::snprintf(path, sizeof path, "src/module_%02zu.c", f);
    std::string text = "#include <stddef.h>\n\nstruct f_rec;\n";
    int line = 4;
    for (std::size_t idx : per_file[f]) {
      text += "\n";
      ++line;
      id_of[idx] = make_fragment_id(path, funcs[idx].name, line);
      text += funcs[idx].text + "\n";
      line += static_cast<int>(std::count(funcs[idx].text.begin(), funcs[idx].text.end(), '\n')) + 1;
    }
    corpus.files[path] = text;
  }
  for (std::size_t i = 0; i < funcs.size(); ++i) corpus.ids.push_back(id_of[i]);
  for (std::size_t i = 0; i + 1 < funcs.size(); ++i) {
    if (funcs[i].group >= 0 && funcs[i + 1].group == funcs[i].group) {
      auto key = canonical_pair(id_of[i], id_of[i + 1]);
      (funcs[i].type1 ? corpus.type1 : corpus.type2).push_back(key);
    }
  }
  corpus.function_count = funcs.size();
  return corpus;
}

}  // namespace sscd::testing
