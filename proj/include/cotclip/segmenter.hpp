#pragma once

// Sentence-level chunking of reasoning text, offline (whole text) and online
// (token stream). Both paths share one boundary scanner, so streaming any
// token split of a text and flushing yields exactly split_sentences(text).
//
// Boundary rules: terminal punctuation (., !, ?) followed by whitespace and
// an uppercase letter, digit or opening math delimiter; a paragraph break
// (double newline); or end of text. Decimal points, known abbreviations and
// ellipses never terminate. `$...$` and `\boxed{...}` spans are opaque: no
// boundary fires inside them.

#include <cctype>
#include <fstream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cotclip/errors.hpp"
#include "cotclip/trace_model.hpp"

namespace cotclip::seg {

struct SegmenterOptions {
  std::set<std::string, std::less<>> abbreviations;
};

inline const std::set<std::string, std::less<>>& default_abbreviations() {
  static const std::set<std::string, std::less<>> kAbbrevs = {
      "e.g.",    "i.e.",  "etc.",   "cf.",    "vs.",    "viz.",   "al.",   "ca.",
      "approx.", "resp.", "w.r.t.", "a.k.a.", "i.i.d.", "s.t.",   "Dr.",   "Mr.",
      "Mrs.",    "Ms.",   "Prof.",  "St.",    "Jr.",    "Sr.",    "Ph.D.", "M.Sc.",
      "B.Sc.",   "U.S.",  "U.K.",   "Fig.",   "Figs.",  "Eq.",    "Eqs.",  "Sec.",
      "Secs.",   "Ch.",   "Chs.",   "Thm.",   "Lem.",   "Cor.",   "Prop.", "Def.",
      "Alg.",    "App.",  "Tab.",   "Vol.",   "pp.",
  };
  return kAbbrevs;
}

inline SegmenterOptions default_options() { return SegmenterOptions{default_abbreviations()}; }

/// Plain-text abbreviation list, one entry per line (`--abbrev-file`).
inline SegmenterOptions load_abbreviations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open abbreviation file " + path);
  SegmenterOptions opts;
  std::string line;
  while (std::getline(in, line)) {
    std::string entry = eval::detail::trim(line);
    if (!entry.empty()) opts.abbreviations.insert(entry);
  }
  return opts;
}

namespace detail {

inline bool is_ws(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }
inline bool is_inline_ws(char c) { return c == ' ' || c == '\t' || c == '\r'; }
inline bool is_digit(char c) { return c >= '0' && c <= '9'; }
inline bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }
inline bool is_opener(char c) {
  return c == '$' || c == '\\' || c == '(' || c == '[' || c == '{';
}
inline bool is_closer(char c) {
  return c == ')' || c == ']' || c == '}' || c == '"' || c == '\'';
}

struct ScanOutcome {
  enum Kind { kBoundary, kNeedMore, kNoBoundary } kind = kNoBoundary;
  size_t chunk_end = 0;   // exclusive end of the chunk text
  size_t next_start = 0;  // where the next chunk's scan resumes
};

// A `$` opens an opaque inline-math span only when it is not a currency
// amount (`$` + digit) and the closing `$` lies within this many characters.
inline constexpr size_t kDollarSpanWindow = 80;

// Scan `text` (which always begins at a chunk start, outside any math span)
// for the first confirmed boundary. With eof=false the scanner refuses to
// decide anything that could be changed by unseen characters.
inline ScanOutcome find_boundary(std::string_view text, bool eof, const SegmenterOptions& opts) {
  int boxed_depth = 0;
  size_t i = 0;
  const size_t n = text.size();
  auto need_more = [&]() { return ScanOutcome{ScanOutcome::kNeedMore, 0, 0}; };

  while (i < n) {
    char c = text[i];

    if (boxed_depth > 0) {
      if (c == '{') ++boxed_depth;
      if (c == '}') --boxed_depth;
      ++i;
      continue;
    }

    if (c == '\\') {
      static constexpr std::string_view kBoxed = "boxed";
      if (i + 1 + kBoxed.size() > n && !eof) return need_more();
      if (text.substr(i + 1, kBoxed.size()) == kBoxed) {
        size_t j = i + 1 + kBoxed.size();
        while (j < n && is_inline_ws(text[j])) ++j;
        if (j == n && !eof) return need_more();
        if (j < n && text[j] == '{') {
          boxed_depth = 1;
          i = j + 1;
          continue;
        }
        i = j;
        continue;
      }
      i += 2;  // escaped char or command head; never a boundary itself
      continue;
    }

    if (c == '$') {
      if (i + 1 == n && !eof) return need_more();
      if (i + 1 < n && is_digit(text[i + 1])) {  // currency amount, not math
        ++i;
        continue;
      }
      size_t limit = i + 1 + kDollarSpanWindow;
      size_t q = i + 1;
      bool closed = false;
      for (; q < n && q < limit; ++q) {
        if (text[q] == '$' && text[q - 1] != '\\') {
          closed = true;
          break;
        }
      }
      if (closed) {
        i = q + 1;  // opaque span, no boundary inside
        continue;
      }
      if (q == n && n < limit && !eof) return need_more();
      ++i;  // no close in sight: literal dollar sign
      continue;
    }

    if (c == '\n') {
      size_t j = i + 1;
      while (j < n && is_inline_ws(text[j])) ++j;
      if (j == n && !eof) return need_more();
      if (j < n && text[j] == '\n') {
        size_t k = j + 1;
        while (k < n && is_ws(text[k])) ++k;
        return ScanOutcome{ScanOutcome::kBoundary, i, k};
      }
      ++i;
      continue;
    }

    if (c == '.' || c == '!' || c == '?') {
      if (c == '.') {
        if (i + 1 == n && !eof) return need_more();
        bool prev_dot = i > 0 && text[i - 1] == '.';
        bool next_dot = i + 1 < n && text[i + 1] == '.';
        if (prev_dot || next_dot) {  // ellipsis run
          ++i;
          continue;
        }
        if (i > 0 && is_digit(text[i - 1]) && i + 1 < n && is_digit(text[i + 1])) {
          ++i;  // decimal point
          continue;
        }
        size_t w = i;
        while (w > 0 && !is_ws(text[w - 1])) --w;
        std::string_view word = text.substr(w, i + 1 - w);
        while (!word.empty() && (word.front() == '(' || word.front() == '[' ||
                                 word.front() == '{' || word.front() == '"' ||
                                 word.front() == '\'')) {
          word.remove_prefix(1);
        }
        if (opts.abbreviations.count(word)) {
          ++i;
          continue;
        }
      }
      size_t j = i + 1;
      while (j < n && is_closer(text[j])) ++j;
      if (j == n && !eof) return need_more();
      size_t k = j;
      while (k < n && is_ws(text[k])) ++k;
      if (k == n && !eof) return need_more();
      if (k == n) return ScanOutcome{ScanOutcome::kBoundary, j, n};  // end of text
      if (k == j) {  // no whitespace after the punctuation: not a boundary
        i = j;
        continue;
      }
      char next = text[k];
      if (is_upper(next) || is_digit(next) || is_opener(next))
        return ScanOutcome{ScanOutcome::kBoundary, j, k};
      i = k;
      continue;
    }

    ++i;
  }
  return eof ? ScanOutcome{ScanOutcome::kNoBoundary, 0, 0} : need_more();
}

}  // namespace detail

/// Split reasoning text into sentence-level chunks. Pure; whitespace-only
/// input yields an empty list. Chunk token counts are left at zero (tokens
/// are a decoding-time notion; the streaming segmenter fills them in).
inline std::vector<ChunkSpan> split_sentences(std::string_view text,
                                              const SegmenterOptions& opts = default_options()) {
  std::vector<ChunkSpan> out;
  size_t start = 0;
  auto emit = [&](size_t end) {
    std::string chunk = eval::detail::trim(text.substr(start, end - start));
    if (!chunk.empty())
      out.push_back(ChunkSpan{static_cast<int>(out.size()), std::move(chunk), 0});
  };
  while (start < text.size()) {
    auto hit = detail::find_boundary(text.substr(start), /*eof=*/true, opts);
    if (hit.kind != detail::ScanOutcome::kBoundary) {
      emit(text.size());
      break;
    }
    emit(start + hit.chunk_end);
    start += hit.next_start;
  }
  return out;
}

/// Online counterpart of split_sentences for a decoding stream. One instance
/// per stream; feed() the decoded text of each generated token and collect
/// completed chunks; flush() at end of stream.
class StreamSegmenter {
 public:
  explicit StreamSegmenter(SegmenterOptions opts = default_options())
      : opts_(std::move(opts)) {}

  std::vector<ChunkSpan> feed(std::string_view token_text, std::int64_t n_tokens = 1) {
    pending_text_ += token_text;
    pending_tokens_ += n_tokens;
    return drain(/*eof=*/false);
  }

  /// End of stream: emits any confirmed boundaries plus the trailing
  /// remainder as a final chunk.
  std::vector<ChunkSpan> flush() {
    auto out = drain(/*eof=*/true);
    std::string rest = eval::detail::trim(pending_text_);
    if (!rest.empty()) {
      out.push_back(ChunkSpan{next_index_++, std::move(rest), pending_tokens_});
      pending_tokens_ = 0;
      last_chunk_end_ = base_ + pending_text_.size();
      recent_ends_.push_back(last_chunk_end_);
    }
    base_ += pending_text_.size();
    pending_text_.clear();
    return out;
  }

  /// Absolute offset (in the raw stream) just past the most recently emitted
  /// chunk. Probe prefixes slice the raw stream at this offset.
  size_t last_chunk_end() const { return last_chunk_end_; }

  /// Absolute end offsets of the chunks returned by the most recent feed()
  /// or flush() call, in emission order.
  const std::vector<size_t>& recent_chunk_ends() const { return recent_ends_; }

  int emitted_chunks() const { return next_index_; }

 private:
  std::vector<ChunkSpan> drain(bool eof) {
    std::vector<ChunkSpan> out;
    recent_ends_.clear();
    while (true) {
      auto hit = detail::find_boundary(pending_text_, eof, opts_);
      if (hit.kind != detail::ScanOutcome::kBoundary) break;
      std::string chunk = eval::detail::trim(std::string_view(pending_text_).substr(0, hit.chunk_end));
      if (!chunk.empty()) {
        out.push_back(ChunkSpan{next_index_++, std::move(chunk), pending_tokens_});
        pending_tokens_ = 0;
        last_chunk_end_ = base_ + hit.chunk_end;
        recent_ends_.push_back(last_chunk_end_);
      }
      base_ += hit.next_start;
      pending_text_.erase(0, hit.next_start);
    }
    return out;
  }

  SegmenterOptions opts_;
  std::string pending_text_;      // raw stream since the last boundary
  size_t base_ = 0;               // absolute offset of pending_text_[0]
  size_t last_chunk_end_ = 0;
  std::vector<size_t> recent_ends_;
  std::int64_t pending_tokens_ = 0;
  int next_index_ = 0;
};

}  // namespace cotclip::seg
