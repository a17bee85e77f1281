#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "sscd/error.hpp"

namespace sscd {

enum class TokenKind {
  kIdentifier,
  kNumber,
  kString,
  kChar,
  kPunct,
  kComment,
  kWhitespace,
};

/// One lexical token of C/C++ source. `offset` is a byte offset into the
/// lexed text; `line` is 1-based.
struct Token {
  TokenKind kind;
  std::string_view text;
  std::size_t offset;
  int line;
  bool in_directive = false;  // part of a preprocessor directive line

  bool significant() const { return kind != TokenKind::kComment && kind != TokenKind::kWhitespace; }
};

class LexError : public StageError {
 public:
  LexError(const std::string& what, int line)
      : StageError("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// Lexes C and C++ into tokens covering the input byte-for-byte: the
/// concatenation of all token texts equals the input. Comments and
/// whitespace runs are tokens too; callers filter them per preprocessing
/// mode. Throws LexError on unterminated block comments and raw strings.
class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    while (pos_ < src_.size()) {
      const std::size_t start = pos_;
      const int start_line = line_;
      TokenKind kind = next_kind();
      Token tok{kind, src_.substr(start, pos_ - start), start, start_line, in_directive_};
      if (kind == TokenKind::kPunct && tok.text == "#" && at_line_start_) {
        in_directive_ = true;
        tok.in_directive = true;
      }
      if (kind != TokenKind::kWhitespace && kind != TokenKind::kComment) at_line_start_ = false;
      out.push_back(tok);
    }
    return out;
  }

 private:
  char peek(std::size_t ahead = 0) const {
    return pos_ + ahead < src_.size() ? src_[pos_ + ahead] : '\0';
  }

  void advance(std::size_t n = 1) {
    for (std::size_t i = 0; i < n && pos_ < src_.size(); ++i) {
      if (src_[pos_] == '\n') ++line_;
      ++pos_;
    }
  }

  static bool ident_start(char c) {
    auto u = static_cast<unsigned char>(c);
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' || c == '$' || u >= 0x80;
  }
  static bool ident_char(char c) { return ident_start(c) || (c >= '0' && c <= '9'); }
  static bool digit(char c) { return c >= '0' && c <= '9'; }

  TokenKind next_kind() {
    char c = peek();
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v' ||
        (c == '\\' && (peek(1) == '\n' || (peek(1) == '\r' && peek(2) == '\n')))) {
      lex_whitespace();
      return TokenKind::kWhitespace;
    }
    if (c == '/' && peek(1) == '/') {
      lex_line_comment();
      return TokenKind::kComment;
    }
    if (c == '/' && peek(1) == '*') {
      lex_block_comment();
      return TokenKind::kComment;
    }
    if (auto prefix = literal_prefix(); prefix != 0) {
      char q = peek(prefix);
      if (q == '"' && prefix > 0 && src_[pos_ + prefix - 1] == 'R') {
        advance(prefix);
        lex_raw_string();
        return TokenKind::kString;
      }
      const std::size_t save = pos_;
      advance(prefix);
      if (lex_quoted(q)) return q == '"' ? TokenKind::kString : TokenKind::kChar;
      pos_ = save;
      while (ident_char(peek())) advance();
      return TokenKind::kIdentifier;
    }
    if (c == '"' || c == '\'') {
      if (lex_quoted(c)) return c == '"' ? TokenKind::kString : TokenKind::kChar;
      advance();
      return TokenKind::kPunct;
    }
    if (digit(c) || (c == '.' && digit(peek(1)))) {
      lex_number();
      return TokenKind::kNumber;
    }
    if (ident_start(c)) {
      while (pos_ < src_.size() && ident_char(peek())) advance();
      return TokenKind::kIdentifier;
    }
    lex_punct();
    return TokenKind::kPunct;
  }

  // Length of an encoding prefix (u8, u, U, L, with optional R) directly
  // followed by a quote, or 0.
  std::size_t literal_prefix() const {
    static constexpr std::array<std::string_view, 10> kPrefixes = {
        "u8R", "uR", "UR", "LR", "R", "u8", "u", "U", "L", ""};
    for (auto p : kPrefixes) {
      if (p.empty()) break;
      if (src_.substr(pos_, p.size()) != p) continue;
      char q = peek(p.size());
      if (q == '"' || (q == '\'' && p.back() != 'R')) return p.size();
    }
    return 0;
  }

  void lex_whitespace() {
    while (pos_ < src_.size()) {
      char c = peek();
      if (c == '\\' && peek(1) == '\n') {
        advance(2);
      } else if (c == '\\' && peek(1) == '\r' && peek(2) == '\n') {
        advance(3);
      } else if (c == '\n') {
        advance();
        if (!spliced()) {
          in_directive_ = false;
          at_line_start_ = true;
        }
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v') {
        advance();
      } else {
        break;
      }
    }
  }

  // True when the newline just consumed was escaped by a backslash.
  bool spliced() const {
    std::size_t i = pos_ - 1;
    if (i > 0 && src_[i - 1] == '\r') --i;
    return i > 0 && src_[i - 1] == '\\';
  }

  void lex_line_comment() {
    while (pos_ < src_.size()) {
      char c = peek();
      if (c == '\n') {
        std::size_t back = pos_;
        if (back > 0 && src_[back - 1] == '\r') --back;
        if (back > 0 && src_[back - 1] == '\\') {
          advance();
          continue;
        }
        break;
      }
      advance();
    }
  }

  void lex_block_comment() {
    const int start = line_;
    advance(2);
    while (pos_ < src_.size()) {
      if (peek() == '*' && peek(1) == '/') {
        advance(2);
        return;
      }
      advance();
    }
    throw LexError("unterminated block comment", start);
  }

  // Consumes a quoted literal. An unterminated quote (an apostrophe in an
  // #error line or in #if 0 prose) leaves the position untouched and
  // returns false so the quote lexes as punctuation.
  bool lex_quoted(char quote) {
    const std::size_t save_pos = pos_;
    const int save_line = line_;
    advance();
    while (pos_ < src_.size()) {
      char c = peek();
      if (c == '\\') {
        advance(2);
      } else if (c == quote) {
        advance();
        while (ident_char(peek())) advance();  // user-defined literal suffix
        return true;
      } else if (c == '\n') {
        break;
      } else {
        advance();
      }
    }
    pos_ = save_pos;
    line_ = save_line;
    return false;
  }

  void lex_raw_string() {
    const int start = line_;
    advance();  // opening quote
    std::size_t open = src_.find('(', pos_);
    if (open == std::string_view::npos || open - pos_ > 16) {
      throw LexError("malformed raw string delimiter", start);
    }
    std::string closing = ")" + std::string(src_.substr(pos_, open - pos_)) + "\"";
    advance(open - pos_ + 1);
    std::size_t end = src_.find(closing, pos_);
    if (end == std::string_view::npos) throw LexError("unterminated raw string literal", start);
    advance(end + closing.size() - pos_);
    while (ident_char(peek())) advance();
  }

  void lex_number() {
    advance();
    while (pos_ < src_.size()) {
      char c = peek();
      if ((c == '+' || c == '-') && pos_ > 0) {
        char prev = src_[pos_ - 1];
        if (prev == 'e' || prev == 'E' || prev == 'p' || prev == 'P') {
          advance();
          continue;
        }
        break;
      }
      if (c == '\'' && ident_char(peek(1))) {
        advance(2);
        continue;
      }
      if (ident_char(c) || c == '.') {
        advance();
        continue;
      }
      break;
    }
  }

  void lex_punct() {
    static constexpr std::array<std::string_view, 27> kMulti = {
        ">>=", "<<=", "<=>", "->*", "...", "::", "->", "++", "--", "<<", ">>", "<=", ">=", "==",
        "!=",  "&&",  "||",  "+=",  "-=",  "*=", "/=", "%=", "&=", "|=", "^=", ".*", "##"};
    for (auto op : kMulti) {
      if (src_.substr(pos_, op.size()) == op) {
        advance(op.size());
        return;
      }
    }
    // A stray byte that no rule accepts becomes a single-character token.
    advance();
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  bool in_directive_ = false;
  bool at_line_start_ = true;
};

inline std::vector<Token> lex(std::string_view src) { return Lexer(src).run(); }

inline bool is_whitespace_token(std::string_view tok) {
  return !tok.empty() && std::all_of(tok.begin(), tok.end(), [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v' || c == '\\';
  });
}

}  // namespace sscd
