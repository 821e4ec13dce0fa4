#pragma once

// Message tokenization and the C-family statement lexer used for code
// revisions.

#include <algorithm>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "spi/common.hpp"
#include "spi/ingest.hpp"

namespace spi {

using TokenSequence = std::vector<std::string>;

namespace tokens {
inline constexpr std::string_view kEos = "<EOS>";
inline constexpr std::string_view kInt = "<INT>";
inline constexpr std::string_view kFloat = "<FLOAT>";
inline constexpr std::string_view kString = "<STRING>";
inline constexpr std::string_view kChar = "<CHAR>";
inline constexpr std::string_view kNum = "<num>";
inline constexpr std::string_view kUrl = "<url>";
inline constexpr std::string_view kHash = "<hash>";
inline constexpr std::string_view kPath = "<path>";
inline constexpr std::string_view kEmail = "<email>";
inline constexpr std::string_view kUnknownChar = "<unk_char>";
}  // namespace tokens

/// Statements of one revision side; `<EOS>` is only added by `flatten`.
struct StatementSequence {
  std::vector<TokenSequence> statements;

  bool operator==(const StatementSequence&) const = default;

  TokenSequence flatten() const {
    TokenSequence out;
    for (const auto& s : statements) {
      out.insert(out.end(), s.begin(), s.end());
      out.emplace_back(tokens::kEos);
    }
    return out;
  }
};

namespace detail {

inline bool is_digit(char c) { return c >= '0' && c <= '9'; }
inline bool is_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
inline bool is_hex(char c) { return is_digit(c) || (c >= 'a' && c <= 'f') || (c >= 'A' && c <= 'F'); }
inline bool is_ident_start(char c) { return is_alpha(c) || c == '_'; }
inline bool is_ident_char(char c) { return is_ident_start(c) || is_digit(c); }
inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }
// UTF-8 continuation and lead bytes count as word characters in messages.
inline bool is_word_char(char c) { return is_ident_char(c) || static_cast<unsigned char>(c) >= 0x80; }

inline std::string_view trim_punctuation(std::string_view s) {
  constexpr std::string_view kEdge = "()[]{}<>,.;:!?'\"`";
  while (!s.empty() && kEdge.find(s.front()) != std::string_view::npos) s.remove_prefix(1);
  while (!s.empty() && kEdge.find(s.back()) != std::string_view::npos) s.remove_suffix(1);
  return s;
}

inline bool looks_like_url(std::string_view s) {
  return s.find("://") != std::string_view::npos || s.substr(0, 4) == "www.";
}

inline bool looks_like_email(std::string_view s) {
  const auto at = s.find('@');
  if (at == std::string_view::npos || at == 0 || s.find('@', at + 1) != std::string_view::npos) return false;
  const std::string_view domain = s.substr(at + 1);
  const auto dot = domain.rfind('.');
  return dot != std::string_view::npos && dot > 0 && dot + 1 < domain.size();
}

// Contains a '/' and the last path segment carries a dot-extension.
inline bool looks_like_path(std::string_view s) {
  const auto slash = s.rfind('/');
  if (slash == std::string_view::npos) return false;
  const std::string_view last = s.substr(slash + 1);
  const auto dot = last.rfind('.');
  if (dot == std::string_view::npos || dot == 0 || dot + 1 >= last.size()) return false;
  return std::all_of(last.begin() + static_cast<std::ptrdiff_t>(dot) + 1, last.end(),
                     [](char c) { return is_alpha(c) || is_digit(c); });
}

// At least 7 hex digits, mixing digits and letters so plain words such as
// "defaced" and pure numbers stay out.
inline bool looks_like_hash(std::string_view s) {
  if (s.size() < 7) return false;
  bool digit = false;
  bool letter = false;
  for (char c : s) {
    if (!is_hex(c)) return false;
    (is_digit(c) ? digit : letter) = true;
  }
  return digit && letter;
}

inline bool is_numeral(std::string_view s) {
  if (s.empty()) return false;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
    return std::all_of(s.begin() + 2, s.end(), is_hex);
  }
  return std::all_of(s.begin(), s.end(), is_digit);
}

}  // namespace detail

/// Lowercases, replaces URLs, emails, paths and hashes by placeholders,
/// splits on non-word characters (keeping `_`), and maps numerals to `<num>`.
inline TokenSequence tokenize_message(std::string_view message) {
  TokenSequence out;
  std::size_t i = 0;
  while (i < message.size()) {
    while (i < message.size() && detail::is_space(message[i])) ++i;
    const std::size_t start = i;
    while (i < message.size() && !detail::is_space(message[i])) ++i;
    if (start == i) break;
    const std::string chunk = ascii_lower(message.substr(start, i - start));
    const std::string_view core = detail::trim_punctuation(chunk);
    if (detail::looks_like_url(core)) {
      out.emplace_back(tokens::kUrl);
      continue;
    }
    if (detail::looks_like_email(core)) {
      out.emplace_back(tokens::kEmail);
      continue;
    }
    if (detail::looks_like_path(core)) {
      out.emplace_back(tokens::kPath);
      continue;
    }
    if (detail::looks_like_hash(core)) {
      out.emplace_back(tokens::kHash);
      continue;
    }
    std::size_t j = 0;
    while (j < chunk.size()) {
      while (j < chunk.size() && !detail::is_word_char(chunk[j])) ++j;
      const std::size_t word_start = j;
      while (j < chunk.size() && detail::is_word_char(chunk[j])) ++j;
      std::string_view word = std::string_view(chunk).substr(word_start, j - word_start);
      if (word.empty() || word.find_first_not_of('_') == std::string_view::npos) continue;
      if (detail::is_numeral(word)) {
        out.emplace_back(tokens::kNum);
      } else {
        out.emplace_back(word);
      }
    }
  }
  return out;
}

/// Splits one source line into C tokens. Comments and whitespace vanish;
/// operators use longest match; unknown bytes become `<unk_char>`.
inline TokenSequence lex_code_statement(std::string_view line) {
  using namespace detail;
  static constexpr std::string_view kOps3[] = {"<<=", ">>=", "..."};
  static constexpr std::string_view kOps2[] = {"->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&",
                                               "||", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "##", "::"};
  static constexpr std::string_view kOps1 = "+-*/%<>=!&|^~?:;,.()[]{}#";

  TokenSequence out;
  std::size_t i = 0;
  const std::size_t n = line.size();

  const auto quoted = [&](std::size_t start, char quote) {
    std::size_t j = start + 1;
    while (j < n && line[j] != quote) {
      j += (line[j] == '\\' && j + 1 < n) ? 2 : 1;
    }
    if (j < n) ++j;  // closing quote; unterminated literals run to end of line
    return j;
  };

  while (i < n) {
    const char c = line[i];
    if (is_space(c)) {
      ++i;
      continue;
    }
    if (c == '/' && i + 1 < n && line[i + 1] == '/') break;
    if (c == '/' && i + 1 < n && line[i + 1] == '*') {
      const auto close = line.find("*/", i + 2);
      if (close == std::string_view::npos) break;
      i = close + 2;
      continue;
    }
    // String/char literals, with optional L, u, U, u8 encoding prefixes.
    std::size_t prefix = 0;
    if (line.substr(i, 3) == "u8\"") {
      prefix = 2;
    } else if ((c == 'L' || c == 'u' || c == 'U') && i + 1 < n && (line[i + 1] == '"' || line[i + 1] == '\'')) {
      prefix = 1;
    }
    if (c == '"' || c == '\'' || prefix > 0) {
      const std::size_t q = i + prefix;
      const std::size_t end = quoted(q, line[q]);
      out.emplace_back(line.substr(i, end - i));
      i = end;
      continue;
    }
    if (is_ident_start(c)) {
      std::size_t j = i + 1;
      while (j < n && is_ident_char(line[j])) ++j;
      out.emplace_back(line.substr(i, j - i));
      i = j;
      continue;
    }
    // pp-number: digits, letters, dots, and signed exponents.
    if (is_digit(c) || (c == '.' && i + 1 < n && is_digit(line[i + 1]))) {
      std::size_t j = i + 1;
      while (j < n) {
        const char d = line[j];
        if ((d == '+' || d == '-') &&
            (line[j - 1] == 'e' || line[j - 1] == 'E' || line[j - 1] == 'p' || line[j - 1] == 'P')) {
          ++j;
        } else if (is_ident_char(d) || d == '.') {
          ++j;
        } else {
          break;
        }
      }
      out.emplace_back(line.substr(i, j - i));
      i = j;
      continue;
    }
    bool matched = false;
    for (auto op : kOps3) {
      if (line.substr(i, 3) == op) {
        out.emplace_back(op);
        i += 3;
        matched = true;
        break;
      }
    }
    if (matched) continue;
    for (auto op : kOps2) {
      if (line.substr(i, 2) == op) {
        out.emplace_back(op);
        i += 2;
        matched = true;
        break;
      }
    }
    if (matched) continue;
    if (kOps1.find(c) != std::string_view::npos) {
      out.emplace_back(1, c);
      ++i;
      continue;
    }
    out.emplace_back(tokens::kUnknownChar);
    // Swallow a whole UTF-8 sequence as one unknown character.
    ++i;
    while (i < n && (static_cast<unsigned char>(line[i]) & 0xC0) == 0x80) ++i;
  }
  return out;
}

namespace detail {

inline bool is_int_suffix(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return c == 'u' || c == 'U' || c == 'l' || c == 'L'; }) &&
         s.size() <= 3;
}

inline bool is_integer_literal(std::string_view t) {
  if (t.empty() || !is_digit(t[0])) return false;
  std::size_t i = 0;
  if (t.size() > 1 && t[0] == '0' && (t[1] == 'x' || t[1] == 'X')) {
    i = 2;
    const std::size_t start = i;
    while (i < t.size() && (is_hex(t[i]) || t[i] == '\'')) ++i;
    if (i == start) return false;
  } else if (t.size() > 1 && t[0] == '0' && (t[1] == 'b' || t[1] == 'B')) {
    i = 2;
    const std::size_t start = i;
    while (i < t.size() && (t[i] == '0' || t[i] == '1' || t[i] == '\'')) ++i;
    if (i == start) return false;
  } else {
    while (i < t.size() && (is_digit(t[i]) || t[i] == '\'')) ++i;
  }
  return is_int_suffix(t.substr(i));
}

inline bool is_number_literal(std::string_view t) {
  return !t.empty() && (is_digit(t[0]) || (t.size() > 1 && t[0] == '.' && is_digit(t[1])));
}

inline bool is_string_literal(std::string_view t) {
  const auto q = t.find('"');
  if (q == std::string_view::npos || q > 2) return false;
  const std::string_view prefix = t.substr(0, q);
  return prefix.empty() || prefix == "L" || prefix == "u" || prefix == "U" || prefix == "u8";
}

inline bool is_char_literal(std::string_view t) {
  const auto q = t.find('\'');
  if (q == std::string_view::npos || q > 1) return false;
  const std::string_view prefix = t.substr(0, q);
  return prefix.empty() || prefix == "L" || prefix == "u" || prefix == "U";
}

}  // namespace detail

/// Replaces literals with `<INT>`, `<FLOAT>`, `<STRING>`, `<CHAR>`.
inline TokenSequence normalize_literals(const TokenSequence& tokens) {
  TokenSequence out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (detail::is_string_literal(t)) {
      out.emplace_back(tokens::kString);
    } else if (detail::is_char_literal(t)) {
      out.emplace_back(tokens::kChar);
    } else if (detail::is_number_literal(t)) {
      out.emplace_back(detail::is_integer_literal(t) ? tokens::kInt : tokens::kFloat);
    } else {
      out.push_back(t);
    }
  }
  return out;
}

struct RevisionStatements {
  StatementSequence additive;
  StatementSequence subtractive;
};

inline StatementSequence lines_to_statements(const std::vector<std::string>& lines) {
  StatementSequence seq;
  for (const auto& line : lines) {
    auto toks = normalize_literals(lex_code_statement(line));
    if (!toks.empty()) seq.statements.push_back(std::move(toks));
  }
  return seq;
}

/// One statement per physical line; lines that lex to nothing are dropped.
inline RevisionStatements revision_to_statements(const CodeRevision& revision) {
  return {lines_to_statements(revision.additive_statements), lines_to_statements(revision.subtractive_statements)};
}

/// Share of additive tokens that also occur (as a multiset) on the
/// subtractive side. Zero when either side is empty.
inline double revision_token_similarity(const CodeRevision& revision) {
  const auto sides = revision_to_statements(revision);
  std::map<std::string, std::size_t> removed;
  std::size_t removed_total = 0;
  for (const auto& s : sides.subtractive.statements) {
    for (const auto& t : s) {
      ++removed[t];
      ++removed_total;
    }
  }
  std::size_t added_total = 0;
  std::size_t common = 0;
  for (const auto& s : sides.additive.statements) {
    for (const auto& t : s) {
      ++added_total;
      auto it = removed.find(t);
      if (it != removed.end() && it->second > 0) {
        --it->second;
        ++common;
      }
    }
  }
  if (added_total == 0 || removed_total == 0) return 0.0;
  return static_cast<double>(common) / static_cast<double>(std::max<std::size_t>(1, added_total));
}

}  // namespace spi
