#pragma once

// Shared test utilities: scratch directories, deterministic generators, and
// the independent oracles the unit suites check implementations against.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

namespace testutil {

namespace fs = std::filesystem;

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("cotclip-" + tag + "-" + std::to_string(::getpid()) + "-" +
             std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

inline std::string fixture_path(const std::string& rel) {
  return std::string(COTCLIP_SOURCE_DIR) + "/fixtures/" + rel;
}

// ---------------------------------------------------------------------------
// Oracles (kept independent of the implementations they check)
// ---------------------------------------------------------------------------

/// Brute-force earliest-stable scan: smallest s with answers[j] == full for
/// all j >= s. `answers` is indexed by prefix length 0..T.
inline size_t oracle_earliest_stable(const std::vector<std::optional<std::string>>& answers,
                                     const std::optional<std::string>& full) {
  for (size_t s = 0; s < answers.size(); ++s) {
    bool stable = true;
    for (size_t j = s; j < answers.size(); ++j) {
      if (answers[j] != full) {
        stable = false;
        break;
      }
    }
    if (stable) return s;
  }
  return answers.size();  // unreachable when the last entry equals full
}

/// Brute-force consistency-stop oracle: first 1-based chunk index i such that
/// chunk answers i-k+1..i are all present and identical. nullopt = no stop.
inline std::optional<int> oracle_first_k_run(
    const std::vector<std::optional<std::string>>& chunk_answers, int k) {
  int run = 0;
  std::optional<std::string> last;
  for (size_t i = 0; i < chunk_answers.size(); ++i) {
    const auto& a = chunk_answers[i];
    if (!a.has_value()) {
      run = 0;
      last.reset();
      continue;
    }
    if (last.has_value() && *last == *a) {
      ++run;
    } else {
      run = 1;
      last = a;
    }
    if (run >= k) return static_cast<int>(i) + 1;
  }
  return std::nullopt;
}

/// Random whitespace split of a string into 1..n pieces (for offline/online
/// equivalence property tests).
inline std::vector<std::string> random_pieces(const std::string& text, std::mt19937_64& rng) {
  std::vector<std::string> out;
  size_t i = 0;
  std::uniform_int_distribution<size_t> len(1, 6);
  while (i < text.size()) {
    size_t n = std::min(len(rng), text.size() - i);
    out.push_back(text.substr(i, n));
    i += n;
  }
  return out;
}

}  // namespace testutil
