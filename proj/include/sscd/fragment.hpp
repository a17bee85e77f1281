#pragma once

#include <json.hpp>

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "sscd/error.hpp"
#include "sscd/lexer.hpp"
#include "sscd/util.hpp"

namespace sscd {

enum class PreprocessMode { kNone, kStripWhitespace, kStripComments, kStripBoth };

inline std::string_view to_string(PreprocessMode mode) {
  switch (mode) {
    case PreprocessMode::kNone: return "none";
    case PreprocessMode::kStripWhitespace: return "strip_whitespace";
    case PreprocessMode::kStripComments: return "strip_comments";
    case PreprocessMode::kStripBoth: return "strip_both";
  }
  return "none";
}

inline PreprocessMode parse_preprocess_mode(std::string_view name) {
  if (name == "none") return PreprocessMode::kNone;
  if (name == "strip_whitespace") return PreprocessMode::kStripWhitespace;
  if (name == "strip_comments") return PreprocessMode::kStripComments;
  if (name == "strip_both") return PreprocessMode::kStripBoth;
  throw UsageError("unknown preprocess mode '" + std::string(name) +
                   "' (expected none, strip_whitespace, strip_comments or strip_both)");
}

inline bool keeps_whitespace(PreprocessMode m) {
  return m == PreprocessMode::kNone || m == PreprocessMode::kStripComments;
}
inline bool keeps_comments(PreprocessMode m) {
  return m == PreprocessMode::kNone || m == PreprocessMode::kStripWhitespace;
}

/// One extracted function definition.
struct CodeFragment {
  std::string fragment_id;
  std::string file_path;
  std::string function_name;
  int start_line = 0;
  int end_line = 0;
  int loc = 0;
  std::vector<std::string> tokens;
  std::string raw_text;

  friend bool operator==(const CodeFragment&, const CodeFragment&) = default;
};

inline std::string make_fragment_id(std::string_view file_path, std::string_view function_name,
                                    int start_line) {
  std::string id;
  id.reserve(file_path.size() + function_name.size() + 12);
  id.append(file_path).append(":").append(function_name).append(":");
  id.append(std::to_string(start_line));
  return id;
}

/// Keeps the first `code_length` tokens. Idempotent; other fields untouched.
inline CodeFragment truncate_tokens(CodeFragment fragment, std::size_t code_length) {
  if (code_length == 0) throw UsageError("code length must be at least 1");
  if (fragment.tokens.size() > code_length) fragment.tokens.resize(code_length);
  return fragment;
}

/// The exact text handed to an embedding provider. With whitespace tokens
/// present the tokens are concatenated verbatim; otherwise they are joined
/// by single spaces (a newline after `//` comments so they stay closed).
inline std::string provider_text(const std::vector<std::string>& tokens) {
  const bool has_ws =
      std::any_of(tokens.begin(), tokens.end(), [](const std::string& t) { return is_whitespace_token(t); });
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!has_ws && i > 0) out.push_back(tokens[i - 1].starts_with("//") ? '\n' : ' ');
    out += tokens[i];
  }
  return out;
}

/// Identity of a fragment universe: hash over the sorted fragment ids.
template <typename Range>
std::string corpus_id_of(const Range& ids) {
  std::vector<std::string> sorted(std::begin(ids), std::end(ids));
  std::sort(sorted.begin(), sorted.end());
  Sha256 h;
  for (const auto& id : sorted) h.update(id).update("\n");
  return h.hex_digest();
}

inline std::string corpus_id_of_fragments(const std::vector<CodeFragment>& fragments) {
  std::vector<std::string> ids;
  ids.reserve(fragments.size());
  for (const auto& f : fragments) ids.push_back(f.fragment_id);
  return corpus_id_of(ids);
}

// ---------------------------------------------------------------------------
// Fragment file: one JSON object per line.

inline nlohmann::ordered_json to_json(const CodeFragment& f) {
  nlohmann::ordered_json j;
  j["fragment_id"] = f.fragment_id;
  j["file_path"] = f.file_path;
  j["function_name"] = f.function_name;
  j["start_line"] = f.start_line;
  j["end_line"] = f.end_line;
  j["loc"] = f.loc;
  j["tokens"] = f.tokens;
  j["raw_text"] = f.raw_text;
  return j;
}

inline CodeFragment fragment_from_json(const nlohmann::json& j) {
  CodeFragment f;
  f.fragment_id = j.at("fragment_id").get<std::string>();
  f.file_path = j.at("file_path").get<std::string>();
  f.function_name = j.at("function_name").get<std::string>();
  f.start_line = j.at("start_line").get<int>();
  f.end_line = j.at("end_line").get<int>();
  f.loc = j.at("loc").get<int>();
  f.tokens = j.at("tokens").get<std::vector<std::string>>();
  f.raw_text = j.at("raw_text").get<std::string>();
  if (f.start_line > f.end_line || f.loc != f.end_line - f.start_line + 1) {
    throw UsageError("fragment " + f.fragment_id + ": inconsistent line range");
  }
  return f;
}

inline std::string serialize_fragments(const std::vector<CodeFragment>& fragments) {
  std::set<std::string_view> seen;
  for (const auto& f : fragments) {
    if (!seen.insert(f.fragment_id).second) {
      throw UsageError("duplicate fragment_id '" + f.fragment_id + "'");
    }
  }
  std::string out;
  for (const auto& f : fragments) {
    out += to_json(f).dump();
    out.push_back('\n');
  }
  return out;
}

/// Writes the fragment file atomically. Duplicate ids are rejected before
/// anything touches the disk.
inline std::size_t write_fragments(const std::vector<CodeFragment>& fragments,
                                   const std::filesystem::path& out) {
  atomic_write(out, serialize_fragments(fragments));
  return fragments.size();
}

/// Calls fn(json, line_number) for each non-blank line of an NDJSON file.
template <typename Fn>
void for_each_ndjson(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StageError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw UsageError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    try {
      fn(j, lineno);
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline std::vector<CodeFragment> read_fragments(const std::filesystem::path& path) {
  std::vector<CodeFragment> out;
  std::set<std::string> seen;
  for_each_ndjson(path, [&](const nlohmann::json& j, std::size_t lineno) {
    auto f = fragment_from_json(j);
    if (!seen.insert(f.fragment_id).second) {
      throw UsageError(path.string() + ":" + std::to_string(lineno) + ": duplicate fragment_id '" +
                       f.fragment_id + "'");
    }
    out.push_back(std::move(f));
  });
  return out;
}

/// Sidecar metadata path for an artifact (`x.jsonl` -> `x.jsonl.meta.json`).
inline std::filesystem::path meta_path(const std::filesystem::path& artifact) {
  auto p = artifact;
  p += ".meta.json";
  return p;
}

inline std::optional<nlohmann::json> read_meta(const std::filesystem::path& artifact) {
  auto p = meta_path(artifact);
  if (!std::filesystem::exists(p)) return std::nullopt;
  try {
    return nlohmann::json::parse(read_file(p));
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(p.string() + ": " + e.what());
  }
}

inline void write_meta(const std::filesystem::path& artifact, const nlohmann::ordered_json& meta) {
  atomic_write(meta_path(artifact), meta.dump(2) + "\n");
}

}  // namespace sscd
