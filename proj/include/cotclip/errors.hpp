#pragma once

#include <stdexcept>
#include <string>

namespace cotclip {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed input file (JSONL record, mock script, config...). Carries the
/// offending line number when known.
struct ParseError : Error {
  explicit ParseError(const std::string& msg, long line = -1)
      : Error(line >= 0 ? "line " + std::to_string(line) + ": " + msg : msg),
        line_number(line) {}
  long line_number;
};

/// Invalid configuration detected at setup time (before any generation).
struct ConfigError : Error {
  using Error::Error;
};

/// Transport-level backend failure, surfaced with the attempt count.
struct TransportError : Error {
  TransportError(const std::string& msg, int attempts_made)
      : Error(msg + " (after " + std::to_string(attempts_made) + " attempt" +
              (attempts_made == 1 ? "" : "s") + ")"),
        attempts(attempts_made) {}
  int attempts;
};

/// Filesystem failure.
struct IoError : Error {
  using Error::Error;
};

/// Violated domain invariant (named in the message).
struct InvariantError : Error {
  using Error::Error;
};

}  // namespace cotclip
