#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "sscd/extract.hpp"
#include "sscd/fragment.hpp"
#include "sscd/lexer.hpp"
#include "support/synthetic.hpp"

using namespace sscd;
using sscd::testing::TempDir;

namespace {

// Two definitions: `small` spans lines 3-7 (5 lines), `large` lines 9-20
// (12 lines), plus a prototype that must be ignored.
const char* kTwoFunctions =
    "#include <stdio.h>\n"          // 1
    "int proto(int x);\n"           // 2
    "static int small(int a) {\n"   // 3
    "  int b = a * 2;\n"            // 4
    "  b += 1;\n"                   // 5
    "  return b;\n"                 // 6
    "}\n"                           // 7
    "\n"                            // 8
    "int large(const char *s) {\n"  // 9
    "  int n = 0;\n"                // 10
    "  /* count { braces } */\n"    // 11
    "  while (*s) {\n"              // 12
    "    if (*s == '{') {\n"        // 13
    "      n++;\n"                  // 14
    "    }\n"                       // 15
    "    s++;\n"                    // 16
    "  }\n"                         // 17
    "  printf(\"%d}\\n\", n);\n"    // 18
    "  return n;\n"                 // 19
    "}\n";                          // 20

std::string join(const std::vector<std::string>& v) {
  return std::accumulate(v.begin(), v.end(), std::string());
}

std::vector<std::string> significant(const std::vector<std::string>& toks) {
  std::vector<std::string> out;
  for (const auto& t : toks) {
    if (!is_whitespace_token(t)) out.push_back(t);
  }
  return out;
}

}  // namespace

// --- lexer -----------------------------------------------------------------

TEST(Lexer, CoversInputByteForByte) {
  const std::string src = "int main() { return a<<=2 /* c */ + 'x' + \"s\\\"q\"; } // tail\n#define X 1\n";
  std::string rebuilt;
  for (const auto& t : lex(src)) rebuilt += t.text;
  EXPECT_EQ(rebuilt, src);
}

TEST(Lexer, ClassifiesTokens) {
  auto toks = lex("x1 = 0x1fULL + 'c' /* k */ \"s\";");
  std::vector<TokenKind> kinds;
  for (const auto& t : toks) {
    if (t.kind != TokenKind::kWhitespace) kinds.push_back(t.kind);
  }
  EXPECT_EQ(kinds, (std::vector<TokenKind>{TokenKind::kIdentifier, TokenKind::kPunct, TokenKind::kNumber,
                                           TokenKind::kPunct, TokenKind::kChar, TokenKind::kComment,
                                           TokenKind::kString, TokenKind::kPunct}));
}

TEST(Lexer, LongestMatchPunctuators) {
  auto toks = lex("a->b<<=c...d::e");
  std::vector<std::string> punct;
  for (const auto& t : toks) {
    if (t.kind == TokenKind::kPunct) punct.emplace_back(t.text);
  }
  EXPECT_EQ(punct, (std::vector<std::string>{"->", "<<=", "...", "::"}));
}

TEST(Lexer, TemplateScopeIsNotADigraph) {
  auto toks = lex("std::vector<::ns::T> v;");
  std::vector<std::string> text;
  for (const auto& t : toks) {
    if (t.significant()) text.emplace_back(t.text);
  }
  EXPECT_EQ(text[3], "<");
  EXPECT_EQ(text[4], "::");
}

TEST(Lexer, RawStringsAndLineNumbers) {
  auto toks = lex("a\nR\"x(line)\n\")x\"\nb");
  ASSERT_GE(toks.size(), 5u);
  const auto& raw = toks[2];
  EXPECT_EQ(raw.kind, TokenKind::kString);
  EXPECT_EQ(raw.text, "R\"x(line)\n\")x\"");
  EXPECT_EQ(raw.line, 2);
  EXPECT_EQ(toks.back().line, 4);
}

TEST(Lexer, UnterminatedBlockCommentIsAnError) {
  EXPECT_THROW(lex("int a; /* never closed"), LexError);
}

TEST(Lexer, StrayQuoteIsLenient) {
  EXPECT_NO_THROW(lex("#error don't do this\nint a;\n"));
}

TEST(Lexer, DirectiveTokensAreFlagged) {
  auto toks = lex("#define X(a) \\\n  (a + 1)\nint y;\n");
  bool saw_a = false;
  for (const auto& t : toks) {
    if (t.text == "a" && t.in_directive) saw_a = true;
    if (t.text == "y") {
      EXPECT_FALSE(t.in_directive);
    }
  }
  EXPECT_TRUE(saw_a);
}

// --- extract_functions ---------------------------------------------------

TEST(Extract, EmptyFileYieldsNothing) {
  auto r = extract_functions("empty.c", "", PreprocessMode::kNone, 0);
  EXPECT_TRUE(r.fragments.empty());
  EXPECT_TRUE(r.issues.empty());
}

TEST(Extract, MinLocFiltersByLineCount) {
  auto at10 = extract_functions("two.c", kTwoFunctions, PreprocessMode::kNone, 10);
  ASSERT_EQ(at10.fragments.size(), 1u);
  EXPECT_EQ(at10.fragments[0].function_name, "large");
  EXPECT_EQ(at10.fragments[0].start_line, 9);
  EXPECT_EQ(at10.fragments[0].end_line, 20);
  EXPECT_EQ(at10.fragments[0].loc, 12);

  auto at0 = extract_functions("two.c", kTwoFunctions, PreprocessMode::kNone, 0);
  ASSERT_EQ(at0.fragments.size(), 2u);
  EXPECT_EQ(at0.fragments[0].function_name, "small");
  EXPECT_EQ(at0.fragments[0].start_line, 3);
  EXPECT_EQ(at0.fragments[0].end_line, 7);
  EXPECT_EQ(at0.fragments[0].loc, 5);
  EXPECT_EQ(at0.fragments[0].fragment_id, "two.c:small:3");
  EXPECT_TRUE(at0.issues.empty());
}

TEST(Extract, MinLocIsMonotone) {
  std::vector<std::string> prev;
  for (int k = 0; k <= 14; ++k) {
    std::vector<std::string> ids;
    for (const auto& f : extract_functions("two.c", kTwoFunctions, PreprocessMode::kNone, k).fragments) {
      ids.push_back(f.fragment_id);
    }
    std::sort(ids.begin(), ids.end());
    if (k > 0) {
      EXPECT_TRUE(std::includes(prev.begin(), prev.end(), ids.begin(), ids.end()));
    }
    prev = ids;
  }
  EXPECT_TRUE(prev.empty());
}

TEST(Extract, RawTextMatchesLineSlice) {
  auto r = extract_functions("two.c", kTwoFunctions, PreprocessMode::kNone, 0);
  for (const auto& f : r.fragments) {
    EXPECT_EQ(slice_lines(kTwoFunctions, f.start_line, f.end_line), f.raw_text);
  }
}

TEST(Extract, ModeNoneIsByteFaithful) {
  auto r = extract_functions("two.c", kTwoFunctions, PreprocessMode::kNone, 0);
  ASSERT_EQ(r.fragments.size(), 2u);
  EXPECT_EQ(join(r.fragments[0].tokens), r.fragments[0].raw_text);
  EXPECT_EQ(join(r.fragments[1].tokens), r.fragments[1].raw_text);
}

TEST(Extract, PreprocessModes) {
  auto count_if = [](const std::vector<std::string>& toks, auto pred) {
    return std::count_if(toks.begin(), toks.end(), pred);
  };
  auto is_comment = [](const std::string& t) { return t.starts_with("/*") || t.starts_with("//"); };
  auto large = [&](PreprocessMode m) { return extract_functions("two.c", kTwoFunctions, m, 10).fragments.at(0); };

  auto none = large(PreprocessMode::kNone).tokens;
  auto sw = large(PreprocessMode::kStripWhitespace).tokens;
  auto sc = large(PreprocessMode::kStripComments).tokens;
  auto both = large(PreprocessMode::kStripBoth).tokens;
  EXPECT_EQ(count_if(sw, is_whitespace_token), 0);
  EXPECT_EQ(count_if(sw, is_comment), 1);
  EXPECT_EQ(count_if(sc, is_comment), 0);
  EXPECT_GT(count_if(sc, is_whitespace_token), 0);
  EXPECT_EQ(count_if(both, is_comment) + count_if(both, is_whitespace_token), 0);
  EXPECT_EQ(significant(none), sw);
  auto sc_sig = significant(sc);
  EXPECT_EQ(sc_sig, both);
  EXPECT_EQ(sw.size(), both.size() + 1);
}

TEST(Extract, StripWhitespaceIgnoresLayout) {
  const std::string a = "int f(int x) {\n  return x + 1;\n}\n";
  const std::string b = "\n\nint   f( int x )\n{\n\n\t\treturn x+1;\n\n}\n";
  auto fa = extract_functions("a.c", a, PreprocessMode::kStripWhitespace, 0).fragments;
  auto fb = extract_functions("b.c", b, PreprocessMode::kStripWhitespace, 0).fragments;
  ASSERT_EQ(fa.size(), 1u);
  ASSERT_EQ(fb.size(), 1u);
  EXPECT_EQ(fa[0].tokens, fb[0].tokens);
}

TEST(Extract, CppMembersTemplatesAndOperators) {
  const char* src =
      "namespace n {\n"
      "struct S {\n"
      "  int get() const { return v; }\n"
      "  void decl();\n"
      "  int v = 0;\n"
      "};\n"
      "template <typename T>\n"
      "T twice(T t) { return t + t; }\n"
      "bool operator==(const S& a, const S& b) { return a.v == b.v; }\n"
      "S::~S() {}\n"
      "void S::decl() { auto l = [](int q) { return q; }; l(1); }\n"
      "}\n";
  auto r = extract_functions("x.cpp", src, PreprocessMode::kNone, 0);
  std::vector<std::string> names;
  for (const auto& f : r.fragments) names.push_back(f.function_name);
  EXPECT_EQ(names, (std::vector<std::string>{"get", "twice", "operator==", "S::~S", "S::decl"}));
  EXPECT_EQ(r.fragments[1].start_line, 7);  // template header belongs to the function
}

TEST(Extract, MacroHeavyFileFallsBackToBraceMatching) {
  const char* src =
      "#define BEGIN {\n"
      "#define END }\n"
      "int ok(int a) { return a; }\n"
      "FOO_DECL(bar) int weird(int x) BEGIN return x; END\n"
      "int also(void) { if (x) { y(); } return 2; }\n";
  auto r = extract_functions("m.c", src, PreprocessMode::kNone, 0);
  ASSERT_EQ(r.issues.size(), 1u);
  EXPECT_EQ(r.issues[0].kind, IssueKind::kFallback);
  std::vector<std::string> names;
  for (const auto& f : r.fragments) names.push_back(f.function_name);
  EXPECT_NE(std::find(names.begin(), names.end(), "ok"), names.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "also"), names.end());
}

TEST(Extract, UnparseableFileIsRecordedNotThrown) {
  auto r = extract_functions("bad.c", "int f( { {\n", PreprocessMode::kNone, 0);
  EXPECT_TRUE(r.fragments.empty());
  ASSERT_EQ(r.issues.size(), 1u);
  EXPECT_EQ(r.issues[0].kind, IssueKind::kError);

  auto bin = extract_functions("bin.c", std::string("int a;\0\xff", 8), PreprocessMode::kNone, 0);
  ASSERT_EQ(bin.issues.size(), 1u);
  EXPECT_EQ(bin.issues[0].kind, IssueKind::kError);
}

TEST(Extract, Deterministic) {
  auto a = extract_functions("two.c", kTwoFunctions, PreprocessMode::kStripBoth, 0);
  auto b = extract_functions("two.c", kTwoFunctions, PreprocessMode::kStripBoth, 0);
  EXPECT_EQ(serialize_fragments(a.fragments), serialize_fragments(b.fragments));
}

TEST(Extract, CorpusOutputIndependentOfThreadCount) {
  TempDir dir;
  auto corpus = sscd::testing::make_synthetic_corpus({3, 3, 20, 5, 11});
  corpus.write(dir.path());
  sscd::testing::write_text(dir / "bad/broken.c", "void x( {\n");
  sscd::testing::write_text(dir / "notes.txt", "int ignored(void) { return 0; }\n");
  auto one = extract_corpus(dir.path(), PreprocessMode::kNone, 0, 1);
  auto four = extract_corpus(dir.path(), PreprocessMode::kNone, 0, 4);
  EXPECT_EQ(serialize_fragments(one.fragments), serialize_fragments(four.fragments));
  EXPECT_EQ(one.issues, four.issues);
  EXPECT_EQ(one.fragments.size(), corpus.function_count);
  EXPECT_EQ(one.files_scanned, 6u);
  ASSERT_EQ(one.issues.size(), 1u);
  EXPECT_EQ(one.issues[0].file_path, "bad/broken.c");
  EXPECT_TRUE(std::is_sorted(one.fragments.begin(), one.fragments.end(), [](const auto& a, const auto& b) {
    return std::tie(a.file_path, a.start_line) < std::tie(b.file_path, b.start_line);
  }));
}

TEST(Extract, LanguageByExtension) {
  EXPECT_EQ(language_for("a.c"), SourceLanguage::kC);
  EXPECT_EQ(language_for("a.h"), SourceLanguage::kCpp);
  EXPECT_EQ(language_for("a.cc"), SourceLanguage::kCpp);
  EXPECT_EQ(language_for("a.hpp"), SourceLanguage::kCpp);
  EXPECT_FALSE(language_for("a.java"));
}

// --- truncate and fragment files ---------------------------------------------

namespace {
CodeFragment fragment_with_tokens(std::size_t n) {
  CodeFragment f;
  f.fragment_id = "a.c:f:1";
  f.file_path = "a.c";
  f.function_name = "f";
  f.start_line = f.end_line = f.loc = 1;
  for (std::size_t i = 0; i < n; ++i) f.tokens.push_back("t" + std::to_string(i));
  f.raw_text = "raw";
  return f;
}
}  // namespace

TEST(Truncate, KeepsPrefix) {
  auto f = fragment_with_tokens(200);
  auto t = truncate_tokens(f, 128);
  EXPECT_EQ(t.tokens.size(), 128u);
  EXPECT_TRUE(std::equal(t.tokens.begin(), t.tokens.end(), f.tokens.begin()));
  EXPECT_EQ(t.raw_text, f.raw_text);
  EXPECT_EQ(truncate_tokens(t, 128), t);

  auto short_f = fragment_with_tokens(50);
  EXPECT_EQ(truncate_tokens(short_f, 128), short_f);
  auto one = truncate_tokens(f, 1);
  ASSERT_EQ(one.tokens.size(), 1u);
  EXPECT_EQ(one.tokens[0], "t0");
  EXPECT_THROW(truncate_tokens(f, 0), UsageError);
}

TEST(FragmentFile, RoundTrip) {
  TempDir dir;
  EXPECT_EQ(write_fragments({}, dir / "empty.jsonl"), 0u);
  EXPECT_TRUE(read_fragments(dir / "empty.jsonl").empty());

  auto frags = extract_functions("two.c", kTwoFunctions, PreprocessMode::kNone, 0).fragments;
  ASSERT_EQ(frags.size(), 2u);
  EXPECT_EQ(write_fragments(frags, dir / "f.jsonl"), 2u);
  EXPECT_EQ(read_fragments(dir / "f.jsonl"), frags);

  auto line = read_file(dir / "f.jsonl").substr(0, 80);
  EXPECT_EQ(line.rfind("{\"fragment_id\":\"two.c:small:3\",\"file_path\":\"two.c\",\"function_name\"", 0), 0u);
}

TEST(FragmentFile, DuplicateIdsRejectedBeforeWriting) {
  TempDir dir;
  auto f = fragment_with_tokens(3);
  EXPECT_THROW(write_fragments({f, f}, dir / "dup.jsonl"), UsageError);
  EXPECT_FALSE(std::filesystem::exists(dir / "dup.jsonl"));
}

TEST(FragmentFile, ProviderTextRules) {
  EXPECT_EQ(provider_text({"int", " ", "x", ";"}), "int x;");
  EXPECT_EQ(provider_text({"int", "x", ";"}), "int x ;");
  EXPECT_EQ(provider_text({"// c", "x"}), "// c\nx");
}
