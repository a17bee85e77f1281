#pragma once

#include <tree_sitter/api.h>

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "sscd/error.hpp"
#include "sscd/fragment.hpp"
#include "sscd/lexer.hpp"
#include "sscd/util.hpp"

extern "C" {
const TSLanguage* tree_sitter_c(void);
const TSLanguage* tree_sitter_cpp(void);
}

namespace sscd {

enum class SourceLanguage { kC, kCpp };

/// Language for a path by extension, or nullopt when the file is not C/C++.
/// `.c` uses the C grammar; headers and every C++ extension use the C++ one.
// Java would slot in here with its own grammar and function node type.
inline std::optional<SourceLanguage> language_for(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".c") return SourceLanguage::kC;
  static const std::set<std::string> kCpp = {".h",  ".cc",  ".cp",  ".cpp", ".cxx", ".c++", ".hpp",
                                             ".hh", ".hxx", ".h++", ".inl", ".ipp", ".tcc"};
  if (kCpp.count(ext) != 0) return SourceLanguage::kCpp;
  return std::nullopt;
}

enum class IssueKind { kError, kFallback };

/// A per-file event worth reporting: a file that could not be extracted, or
/// one whose boundaries came from brace-matching recovery.
struct ExtractionIssue {
  std::string file_path;
  IssueKind kind;
  std::string message;

  friend bool operator==(const ExtractionIssue&, const ExtractionIssue&) = default;
};

struct ExtractionResult {
  std::vector<CodeFragment> fragments;
  std::vector<ExtractionIssue> issues;
};

namespace detail {

/// A function definition located in the source: byte span and name.
struct FunctionSpan {
  std::size_t begin;
  std::size_t end;  // exclusive, just past the closing brace
  std::string name;
};

inline std::string collapse_whitespace(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

// --- tree-sitter route ------------------------------------------------------

struct ParserDeleter {
  void operator()(TSParser* p) const { ts_parser_delete(p); }
};
struct TreeDeleter {
  void operator()(TSTree* t) const { ts_tree_delete(t); }
};

inline bool node_is(TSNode n, std::string_view type) { return type == ts_node_type(n); }

inline std::string function_name_of(TSNode fn, std::string_view src) {
  static const std::unordered_set<std::string_view> kNameNodes = {
      "identifier",  "field_identifier", "qualified_identifier", "destructor_name",
      "operator_name", "template_function", "operator_cast", "type_identifier",
      "template_method"};
  TSNode node = ts_node_child_by_field_name(fn, "declarator", 10);
  for (int depth = 0; depth < 32 && !ts_node_is_null(node); ++depth) {
    if (kNameNodes.count(ts_node_type(node)) != 0) {
      auto b = ts_node_start_byte(node);
      auto e = ts_node_end_byte(node);
      return collapse_whitespace(src.substr(b, e - b));
    }
    TSNode next = ts_node_child_by_field_name(node, "declarator", 10);
    if (ts_node_is_null(next) && ts_node_named_child_count(node) > 0) next = ts_node_named_child(node, 0);
    node = next;
  }
  return "<anonymous>";
}

/// Collects every function_definition reachable without entering another
/// function's body: top level, namespaces, linkage blocks, class bodies and
/// preprocessor conditionals. Returns nullopt when the tree has errors.
inline std::optional<std::vector<FunctionSpan>> spans_from_tree(std::string_view src, SourceLanguage lang) {
  std::unique_ptr<TSParser, ParserDeleter> parser(ts_parser_new());
  const TSLanguage* language = lang == SourceLanguage::kC ? tree_sitter_c() : tree_sitter_cpp();
  if (!ts_parser_set_language(parser.get(), language)) throw StageError("tree-sitter language ABI mismatch");
  std::unique_ptr<TSTree, TreeDeleter> tree(
      ts_parser_parse_string(parser.get(), nullptr, src.data(), static_cast<uint32_t>(src.size())));
  if (!tree) return std::nullopt;
  TSNode root = ts_tree_root_node(tree.get());
  if (ts_node_has_error(root)) return std::nullopt;

  std::vector<FunctionSpan> spans;
  std::vector<TSNode> stack{root};
  while (!stack.empty()) {
    TSNode node = stack.back();
    stack.pop_back();
    if (node_is(node, "function_definition")) {
      TSNode outer = node;
      for (TSNode p = ts_node_parent(outer); !ts_node_is_null(p) && node_is(p, "template_declaration");
           p = ts_node_parent(p)) {
        outer = p;
      }
      spans.push_back({ts_node_start_byte(outer), ts_node_end_byte(node), function_name_of(node, src)});
      continue;
    }
    if (node_is(node, "compound_statement") || node_is(node, "lambda_expression")) continue;
    const uint32_t n = ts_node_named_child_count(node);
    for (uint32_t i = n; i > 0; --i) stack.push_back(ts_node_named_child(node, i - 1));
  }
  std::sort(spans.begin(), spans.end(), [](const auto& a, const auto& b) { return a.begin < b.begin; });
  return spans;
}

// --- brace-matching recovery ------------------------------------------------

inline const std::unordered_set<std::string_view>& cxx_keywords() {
  static const std::unordered_set<std::string_view> k = {
      "alignas", "alignof", "and", "asm", "auto", "bool", "break", "case", "catch", "char",
      "char8_t", "char16_t", "char32_t", "class", "co_await", "co_return", "co_yield", "concept",
      "const", "consteval", "constexpr", "constinit", "const_cast", "continue", "decltype",
      "default", "delete", "do", "double", "dynamic_cast", "else", "enum", "explicit", "export",
      "extern", "false", "float", "for", "friend", "goto", "if", "inline", "int", "long", "mutable",
      "namespace", "new", "noexcept", "not", "nullptr", "operator", "or", "private", "protected",
      "public", "register", "reinterpret_cast", "requires", "return", "short", "signed", "sizeof",
      "static", "static_assert", "static_cast", "struct", "switch", "template", "this",
      "thread_local", "throw", "true", "try", "typedef", "typeid", "typename", "union", "unsigned",
      "using", "virtual", "void", "volatile", "wchar_t", "while", "_Alignas", "_Alignof", "_Atomic",
      "_Bool", "_Complex", "_Generic", "_Noreturn", "_Static_assert", "_Thread_local", "restrict",
      "__attribute__", "__declspec", "__asm__", "__asm", "__typeof__", "typeof", "__extension__",
      "__restrict", "__restrict__", "__inline", "__inline__"};
  return k;
}

inline bool is_macro_like(std::string_view t) {
  bool has_alpha = false;
  for (char c : t) {
    if (std::isupper(static_cast<unsigned char>(c))) {
      has_alpha = true;
    } else if (!std::isdigit(static_cast<unsigned char>(c)) && c != '_') {
      return false;
    }
  }
  return has_alpha;
}

/// Token-level function recognizer used when the grammar parse fails. It
/// keeps only the first branch of each #if/#else chain, matches brackets,
/// and treats `name ( ... ) trailer {` at namespace or class scope as a
/// function definition.
class BraceRecovery {
 public:
  BraceRecovery(std::string_view src, const std::vector<Token>& tokens) : src_(src) {
    select_tokens(tokens);
    match_brackets();
  }

  std::vector<FunctionSpan> run() {
    parse_scope(0, sig_.size(), /*class_scope=*/false);
    std::sort(spans_.begin(), spans_.end(), [](const auto& a, const auto& b) { return a.begin < b.begin; });
    return spans_;
  }

 private:
  struct Candidate {
    std::size_t start;  // index into sig_
    std::string name;
    bool init_list;
  };

  std::string_view text(std::size_t i) const { return sig_[i].text; }
  bool is_ident(std::size_t i) const { return sig_[i].kind == TokenKind::kIdentifier; }

  void select_tokens(const std::vector<Token>& tokens) {
    std::vector<bool> skipping;  // one entry per open #if
    auto inactive = [&] { return std::any_of(skipping.begin(), skipping.end(), [](bool b) { return b; }); };
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const Token& t = tokens[i];
      if (t.in_directive) {
        if (t.text == "#") {
          std::size_t j = i + 1;
          while (j < tokens.size() && tokens[j].in_directive && !tokens[j].significant()) ++j;
          if (j < tokens.size() && tokens[j].in_directive) {
            auto d = tokens[j].text;
            if (d == "if" || d == "ifdef" || d == "ifndef") {
              skipping.push_back(false);
            } else if ((d == "else" || d == "elif" || d == "elifdef" || d == "elifndef") && !skipping.empty()) {
              skipping.back() = true;
            } else if (d == "endif" && !skipping.empty()) {
              skipping.pop_back();
            }
          }
        }
        continue;
      }
      if (!t.significant() || inactive()) continue;
      sig_.push_back(t);
    }
  }

  void match_brackets() {
    match_.assign(sig_.size(), 0);
    std::vector<std::size_t> open;
    for (std::size_t i = 0; i < sig_.size(); ++i) {
      auto t = text(i);
      if (t == "(" || t == "[" || t == "{") {
        open.push_back(i);
      } else if (t == ")" || t == "]" || t == "}") {
        const char want = t == ")" ? '(' : t == "]" ? '[' : '{';
        if (open.empty() || text(open.back())[0] != want) {
          throw StageError("unbalanced '" + std::string(t) + "' at line " + std::to_string(sig_[i].line));
        }
        match_[open.back()] = i;
        match_[i] = open.back();
        open.pop_back();
      }
    }
    if (!open.empty()) {
      throw StageError("unclosed '" + std::string(text(open.back())) + "' opened at line " +
                       std::to_string(sig_[open.back()].line));
    }
  }

  void parse_scope(std::size_t begin, std::size_t end, bool class_scope) {
    std::size_t run_start = begin;
    std::size_t i = begin;
    while (i < end) {
      auto t = text(i);
      if (t == ";") {
        run_start = ++i;
        continue;
      }
      if (t == "(" || t == "[") {
        i = match_[i] + 1;
        continue;
      }
      if (class_scope && (t == "public" || t == "private" || t == "protected") && i + 1 < end &&
          text(i + 1) == ":") {
        i += 2;
        run_start = i;
        continue;
      }
      if (t != "{") {
        ++i;
        continue;
      }
      const std::size_t close = match_[i];
      if (auto fn = find_function(run_start, i)) {
        if (fn->init_list && i > run_start && (is_ident(i - 1) || text(i - 1) == ">")) {
          i = close + 1;  // brace initializer inside a member-init list
          continue;
        }
        spans_.push_back({sig_[fn->start].offset, sig_[close].offset + 1, fn->name});
        run_start = i = close + 1;
        continue;
      }
      if (run_has(run_start, i, "namespace") || (run_start < i && text(run_start) == "extern")) {
        parse_scope(i + 1, close, false);
        run_start = i = close + 1;
        continue;
      }
      if (run_has(run_start, i, "class") || run_has(run_start, i, "struct") || run_has(run_start, i, "union")) {
        parse_scope(i + 1, close, true);
        i = close + 1;  // declarators follow until ';'
        continue;
      }
      i = close + 1;
      if (!run_has(run_start, i, "enum") && !run_has(run_start, i, "=")) run_start = i;
    }
  }

  bool run_has(std::size_t b, std::size_t e, std::string_view what) const {
    for (std::size_t k = b; k < e; ++k) {
      if (text(k) == what) return true;
      if (text(k) == "(" || text(k) == "[" || text(k) == "{") k = match_[k];
    }
    return false;
  }

  std::optional<Candidate> find_function(std::size_t b, std::size_t e) const {
    std::size_t start = b;
    for (std::size_t k = b; k < e; ++k) {
      if (text(k) == "{" || text(k) == "[") {
        k = match_[k];
        continue;
      }
      if (text(k) != "(") continue;
      const std::size_t close = match_[k];
      if (k > b && text(k - 1) == "operator") {
        k = close;  // the "()" in operator()
        continue;
      }
      auto name = candidate_name(b, k);
      if (name) {
        bool init_list = false;
        if (trailer_ok(close + 1, e, init_list)) return Candidate{start, *name, init_list};
        start = close + 1;  // leading macro invocation glued to the definition
      }
      k = close;
    }
    return std::nullopt;
  }

  // Name of the function whose parameter list opens at `paren`, if the
  // tokens before it form one.
  std::optional<std::string> candidate_name(std::size_t b, std::size_t paren) const {
    if (paren == b) return std::nullopt;
    std::size_t p = paren - 1;
    std::string tail;
    if (p > b && text(p - 1) == "operator") {
      tail = "operator";
      if (is_ident(p)) tail.push_back(' ');
      tail += text(p);
      p -= 1;
    } else if ((text(p) == ")" || text(p) == "]") && match_[p] > b && text(match_[p] - 1) == "operator") {
      tail = text(p) == ")" ? "operator()" : "operator[]";
      p = match_[p] - 1;
    } else if (is_ident(p) && cxx_keywords().count(text(p)) == 0) {
      tail = text(p);
    } else {
      return std::nullopt;
    }
    // Qualifiers: A::B::name, A::~A.
    std::string prefix;
    while (p > b + 1 && (text(p - 1) == "::" || text(p - 1) == "~")) {
      if (text(p - 1) == "~") {
        prefix.insert(0, "~");
        p -= 1;
        continue;
      }
      if (!is_ident(p - 2)) break;
      prefix.insert(0, std::string(text(p - 2)) + "::");
      p -= 2;
    }
    return prefix + tail;
  }

  bool trailer_ok(std::size_t j, std::size_t e, bool& init_list) const {
    static const std::unordered_set<std::string_view> kQualifiers = {
        "const", "volatile", "&", "&&", "override", "final", "mutable", "constexpr", "try",
        "noexcept", "__restrict", "__restrict__"};
    static const std::unordered_set<std::string_view> kWithArgs = {"noexcept", "throw", "__attribute__",
                                                                  "__declspec", "alignas"};
    while (j < e) {
      auto t = text(j);
      if (kWithArgs.count(t) != 0 && j + 1 < e && text(j + 1) == "(") {
        j = match_[j + 1] + 1;
      } else if (kQualifiers.count(t) != 0) {
        ++j;
      } else if (t == "[" && j + 1 < e && text(j + 1) == "[") {
        j = match_[j] + 1;
      } else if (t == "->" || t == "requires") {
        return true;
      } else if (t == ":") {
        init_list = true;
        return true;
      } else if (is_ident(j) && is_macro_like(t)) {
        ++j;
        if (j < e && text(j) == "(") j = match_[j] + 1;
      } else {
        return false;
      }
    }
    return true;
  }

  std::string_view src_;
  std::vector<Token> sig_;
  std::vector<std::size_t> match_;
  std::vector<FunctionSpan> spans_;
};

inline int line_at(const std::vector<std::size_t>& line_starts, std::size_t offset) {
  auto it = std::upper_bound(line_starts.begin(), line_starts.end(), offset);
  return static_cast<int>(it - line_starts.begin());
}

}  // namespace detail

/// Extracts every function definition of one C/C++ file whose line count is
/// at least `min_loc`, in file order. Failures never throw: they come back
/// as issues and the file yields no fragments.
inline ExtractionResult extract_functions(const std::string& file_path, std::string_view contents,
                                          PreprocessMode mode, int min_loc) {
  ExtractionResult result;
  auto fail = [&](IssueKind kind, std::string msg) {
    result.issues.push_back({file_path, kind, std::move(msg)});
  };
  if (min_loc < 0) throw UsageError("min_loc must be non-negative");
  auto lang = language_for(file_path);
  if (!lang) {
    fail(IssueKind::kError, "not a C/C++ source file");
    return result;
  }
  if (contents.find('\0') != std::string_view::npos || !is_valid_utf8(contents)) {
    fail(IssueKind::kError, "not UTF-8 text");
    return result;
  }
  if (contents.empty()) return result;

  std::vector<Token> tokens;
  try {
    tokens = lex(contents);
  } catch (const LexError& e) {
    fail(IssueKind::kError, e.what());
    return result;
  }

  std::vector<detail::FunctionSpan> spans;
  if (auto from_tree = detail::spans_from_tree(contents, *lang)) {
    spans = std::move(*from_tree);
  } else {
    try {
      spans = detail::BraceRecovery(contents, tokens).run();
      fail(IssueKind::kFallback, "grammar parse reported errors; boundaries recovered by brace matching");
    } catch (const StageError& e) {
      result.issues.clear();
      fail(IssueKind::kError, std::string("unparseable: ") + e.what());
      return result;
    }
  }

  std::vector<std::size_t> line_starts{0};
  for (std::size_t i = 0; i < contents.size(); ++i) {
    if (contents[i] == '\n') line_starts.push_back(i + 1);
  }
  const auto lines = split_lines(contents);

  std::map<std::string, int> id_uses;
  for (const auto& span : spans) {
    CodeFragment f;
    f.file_path = file_path;
    f.function_name = span.name;
    f.start_line = detail::line_at(line_starts, span.begin);
    f.end_line = detail::line_at(line_starts, span.end - 1);
    f.loc = f.end_line - f.start_line + 1;
    if (f.loc < min_loc) continue;

    auto first = std::lower_bound(tokens.begin(), tokens.end(), span.begin,
                                  [](const Token& t, std::size_t off) { return t.offset < off; });
    for (auto it = first; it != tokens.end() && it->offset < span.end; ++it) {
      if (it->kind == TokenKind::kWhitespace && !keeps_whitespace(mode)) continue;
      if (it->kind == TokenKind::kComment && !keeps_comments(mode)) continue;
      f.tokens.emplace_back(it->text);
    }
    if (f.tokens.empty()) continue;

    for (int l = f.start_line; l <= f.end_line; ++l) {
      if (l > f.start_line) f.raw_text.push_back('\n');
      f.raw_text.append(lines[static_cast<std::size_t>(l - 1)]);
    }
    f.fragment_id = make_fragment_id(f.file_path, f.function_name, f.start_line);
    // Two same-named definitions starting on one line get a #n suffix.
    if (int n = ++id_uses[f.fragment_id]; n > 1) f.fragment_id += "#" + std::to_string(n);
    result.fragments.push_back(std::move(f));
  }
  return result;
}

/// Re-slices `contents` by a fragment's line range, the inverse of how
/// raw_text is produced.
inline std::string slice_lines(std::string_view contents, int start_line, int end_line) {
  const auto lines = split_lines(contents);
  std::string out;
  for (int l = start_line; l <= end_line && l <= static_cast<int>(lines.size()); ++l) {
    if (l > start_line) out.push_back('\n');
    out.append(lines[static_cast<std::size_t>(l - 1)]);
  }
  return out;
}

struct CorpusExtraction {
  std::vector<CodeFragment> fragments;  // sorted by (file_path, start_line)
  std::vector<ExtractionIssue> issues;  // sorted by file_path
  std::size_t files_scanned = 0;
};

/// Corpus-relative C/C++ source paths under `root`, sorted, '/'-separated.
inline std::vector<std::string> list_sources(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw UsageError("corpus directory not found: " + root.string());
  std::vector<std::string> out;
  for (auto it = fs::recursive_directory_iterator(root, fs::directory_options::skip_permission_denied);
       it != fs::recursive_directory_iterator(); ++it) {
    if (!it->is_regular_file() || !language_for(it->path())) continue;
    out.push_back(fs::relative(it->path(), root).generic_string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Extracts every source file under `root` with `threads` workers. The
/// merged output is identical for any thread count.
inline CorpusExtraction extract_corpus(const std::filesystem::path& root, PreprocessMode mode, int min_loc,
                                       unsigned threads = default_parallelism()) {
  const auto files = list_sources(root);
  std::vector<ExtractionResult> per_file(files.size());
  parallel_for(files.size(), threads, [&](std::size_t i) {
    std::string contents;
    try {
      contents = read_file(root / files[i]);
    } catch (const StageError& e) {
      per_file[i].issues.push_back({files[i], IssueKind::kError, e.what()});
      return;
    }
    per_file[i] = extract_functions(files[i], contents, mode, min_loc);
  });
  CorpusExtraction out;
  out.files_scanned = files.size();
  for (auto& r : per_file) {
    std::move(r.fragments.begin(), r.fragments.end(), std::back_inserter(out.fragments));
    std::move(r.issues.begin(), r.issues.end(), std::back_inserter(out.issues));
  }
  std::stable_sort(out.fragments.begin(), out.fragments.end(), [](const auto& a, const auto& b) {
    return std::tie(a.file_path, a.start_line) < std::tie(b.file_path, b.start_line);
  });
  return out;
}

inline nlohmann::ordered_json issues_to_json(const std::vector<ExtractionIssue>& issues) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& i : issues) {
    arr.push_back({{"file_path", i.file_path},
                   {"kind", i.kind == IssueKind::kError ? "error" : "fallback"},
                   {"message", i.message}});
  }
  return arr;
}

}  // namespace sscd
