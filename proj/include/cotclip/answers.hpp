#pragma once

// Boxed-answer extraction and normalization. Every answer stored or compared
// anywhere in the library is in the normalized form produced here; raw model
// text survives only in audit logs.

#include <cctype>
#include <optional>
#include <string>
#include <string_view>

namespace cotclip::eval {

/// A normalized answer. Absent means NO_ANSWER: the completion carried no
/// parseable boxed span. NO_ANSWER never matches a real answer.
using Answer = std::optional<std::string>;

namespace detail {

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::string trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

inline std::string collapse_ws(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_ws = false;
  for (char c : s) {
    if (is_space(c)) {
      in_ws = true;
    } else {
      if (in_ws && !out.empty()) out.push_back(' ');
      in_ws = false;
      out.push_back(c);
    }
  }
  return out;
}

// Plain decimal number, optionally signed, with optional thousands commas
// (groups of exactly three) and fractional part. "1,000.50" yes; "1,2" no;
// "1.2.3" no; "e4" no.
inline bool is_plain_number(std::string_view s) {
  size_t i = 0;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
  size_t digits = 0;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++digits, ++i;
  if (digits == 0) return false;
  if (i < s.size() && s[i] == ',') {
    if (digits > 3) return false;
    while (i < s.size() && s[i] == ',') {
      ++i;
      for (int k = 0; k < 3; ++k, ++i)
        if (i >= s.size() || !std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    }
  }
  if (i < s.size() && s[i] == '.') {
    ++i;
    if (i >= s.size()) return false;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
  }
  return i == s.size();
}

// Remove commas, strip a leading '+', trim trailing fractional zeros
// ("1,000.50" -> "1000.5", "12.0" -> "12").
inline std::string canonicalize_number(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  size_t i = 0;
  if (i < s.size() && s[i] == '+') ++i;
  for (; i < s.size(); ++i)
    if (s[i] != ',') out.push_back(s[i]);
  if (out.find('.') != std::string::npos) {
    size_t e = out.size();
    while (e > 0 && out[e - 1] == '0') --e;
    if (e > 0 && out[e - 1] == '.') --e;
    out.resize(e);
  }
  return out;
}

}  // namespace detail

/// Normalize an answer string: trim, strip surrounding `$`, collapse
/// whitespace, lowercase, strip trailing punctuation, canonicalize numbers.
/// Idempotent. Returns NO_ANSWER when nothing survives.
inline Answer normalize_answer(std::string_view raw) {
  std::string s = detail::trim(raw);
  while (s.size() >= 2 && s.front() == '$' && s.back() == '$') {
    s = detail::trim(std::string_view(s).substr(1, s.size() - 2));
  }
  s = detail::collapse_ws(s);
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  while (!s.empty()) {
    char c = s.back();
    if (c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == '?') {
      s.pop_back();
    } else {
      break;
    }
  }
  s = detail::trim(s);
  if (s.empty()) return std::nullopt;
  if (detail::is_plain_number(s)) s = detail::canonicalize_number(s);
  return s;
}

/// Parse the last balanced `\boxed{...}` span of a completion and normalize
/// its content. Total function: absent or unbalanced spans yield NO_ANSWER.
inline Answer extract_answer(std::string_view completion) {
  static constexpr std::string_view kTag = "\\boxed{";
  size_t search_end = completion.size();
  while (true) {
    size_t pos = completion.rfind(kTag, search_end == 0 ? 0 : search_end - 1);
    if (pos == std::string_view::npos) return std::nullopt;
    size_t i = pos + kTag.size();
    int depth = 1;
    for (; i < completion.size(); ++i) {
      char c = completion[i];
      if (c == '{') {
        ++depth;
      } else if (c == '}') {
        if (--depth == 0) break;
      }
    }
    if (depth == 0) {
      std::string_view content = completion.substr(pos + kTag.size(), i - pos - kTag.size());
      return normalize_answer(content);
    }
    if (pos == 0) return std::nullopt;
    search_end = pos;  // unbalanced; try an earlier span
  }
}

/// Strict match used by stopping policies: NO_ANSWER never matches anything,
/// not even another NO_ANSWER.
inline bool answers_match(const Answer& a, const Answer& b) {
  return a.has_value() && b.has_value() && *a == *b;
}

}  // namespace cotclip::eval
