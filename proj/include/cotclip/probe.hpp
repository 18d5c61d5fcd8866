#pragma once

// Incremental-prefix probing: reveal a reasoning trace chunk by chunk, force
// an answer after each prefix, find the earliest prefix whose answer stays
// equal to the full-chain answer, and summarize the resulting convergence
// ratios as a histogram.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cotclip/answers.hpp"
#include "cotclip/backend.hpp"
#include "cotclip/trace_model.hpp"

namespace cotclip::probe {

struct ConvergenceRecord {
  std::string example_id;
  std::vector<eval::Answer> prefix_answers;  // indexed by prefix length 0..T
  eval::Answer full_answer;                  // the probe at prefix length T
  int earliest_stable = 0;                   // smallest s stable through to T
  double acr = 0.0;                          // earliest_stable / T
  std::int64_t probe_tokens = 0;

  bool operator==(const ConvergenceRecord&) const = default;
};

/// Earliest stable prefix and ACR. `prefix_answers[s]` is the answer probed
/// after the first s chunks; the last entry equals `full_answer` by
/// construction. Two NO_ANSWER entries compare equal here (it is one
/// distinguished value); the consistency policy's stricter rule lives in
/// answers_match.
inline std::pair<int, double> compute_acr(const std::vector<eval::Answer>& prefix_answers,
                                          const eval::Answer& full_answer) {
  if (prefix_answers.empty()) throw InvariantError("compute_acr: prefix_answers is empty");
  if (prefix_answers.back() != full_answer)
    throw InvariantError("compute_acr: last prefix answer must equal full_answer");
  int n = static_cast<int>(prefix_answers.size());
  int s = n - 1;
  while (s > 0 && prefix_answers[s - 1] == full_answer) --s;
  int t = n - 1;
  double acr = t > 0 ? static_cast<double>(s) / static_cast<double>(t) : 0.0;
  return {s, acr};
}

struct ScanOptions {
  std::int64_t probe_budget = 64;
  bool include_empty_prefix = true;  // probe prefix length 0 (no reasoning)
};

/// Prefix handed to the backend for a probe after the first `s` chunks.
/// Central so that scripted fixtures and live scans build identical strings.
inline std::string probe_prefix(const std::string& prompt, const std::vector<ChunkSpan>& chunks,
                                size_t s) {
  std::string out = prompt;
  out += '\n';
  for (size_t i = 0; i < s && i < chunks.size(); ++i) {
    if (i > 0) out += ' ';
    out += chunks[i].text;
  }
  return out;
}

/// Probe every prefix length 0..T of a trace and locate the earliest stable
/// answer. Probes run sequentially; token spend is accumulated on the record.
inline ConvergenceRecord convergence_scan(backend::Backend& b, const DatasetExample& example,
                                          const ReasoningTrace& trace, const std::string& prompt,
                                          const ScanOptions& opts = {}) {
  if (trace.chunks.empty())
    throw InvariantError("convergence_scan: trace must have at least one chunk");
  ConvergenceRecord rec;
  rec.example_id = example.id;
  const size_t t_chunks = trace.chunks.size();
  for (size_t s = 0; s <= t_chunks; ++s) {
    if (s == 0 && !opts.include_empty_prefix) {
      rec.prefix_answers.push_back(std::nullopt);  // not probed
      continue;
    }
    try {
      auto probe = backend::probe_continuation(b, probe_prefix(prompt, trace.chunks, s),
                                               opts.probe_budget);
      rec.probe_tokens += probe.tokens_used;
      rec.prefix_answers.push_back(eval::extract_answer(probe.text));
    } catch (const std::exception& ex) {
      throw Error("probe at prefix length " + std::to_string(s) + " of example '" +
                  example.id + "' failed: " + ex.what());
    }
  }
  rec.full_answer = rec.prefix_answers.back();
  auto [earliest, acr] = compute_acr(rec.prefix_answers, rec.full_answer);
  rec.earliest_stable = earliest;
  rec.acr = acr;
  return rec;
}

// ---------------------------------------------------------------------------
// Histogram (Fig. 2 style; emitted as data, never images)
// ---------------------------------------------------------------------------

struct Histogram {
  std::vector<double> edges;        // bins + 1 uniform edges over [0, 1]
  std::vector<std::int64_t> counts;
};

inline Histogram acr_histogram(const std::vector<ConvergenceRecord>& records, int bins) {
  if (bins < 1) throw InvariantError("acr_histogram: bins must be >= 1");
  Histogram h;
  h.edges.resize(bins + 1);
  for (int i = 0; i <= bins; ++i) h.edges[i] = static_cast<double>(i) / bins;
  h.counts.assign(bins, 0);
  for (const auto& r : records) {
    int bin = static_cast<int>(std::floor(r.acr * bins));
    bin = std::min(std::max(bin, 0), bins - 1);  // acr == 1.0 lands in the top bin
    ++h.counts[bin];
  }
  return h;
}

inline void write_histogram_csv(const Histogram& h, const std::string& path) {
  auto out = cotclip::detail::open_out(path);
  out << "bin_lo,bin_hi,count\n";
  char buf[64];
  for (size_t i = 0; i < h.counts.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.4f,%.4f,%lld", h.edges[i], h.edges[i + 1],
                  static_cast<long long>(h.counts[i]));
    out << buf << '\n';
  }
}

// ---------------------------------------------------------------------------
// Record file I/O
// ---------------------------------------------------------------------------

inline json to_json(const ConvergenceRecord& r) {
  json answers = json::array();
  for (const auto& a : r.prefix_answers) answers.push_back(cotclip::detail::answer_to_json(a));
  return json{{"example_id", r.example_id},
              {"prefix_answers", std::move(answers)},
              {"full_answer", cotclip::detail::answer_to_json(r.full_answer)},
              {"earliest_stable", r.earliest_stable},
              {"acr", r.acr},
              {"probe_tokens", r.probe_tokens}};
}

inline ConvergenceRecord record_from_json(const json& j, long line = -1) {
  ConvergenceRecord r;
  r.example_id = cotclip::detail::require(j, "example_id", line).get<std::string>();
  for (const json& a : cotclip::detail::require(j, "prefix_answers", line))
    r.prefix_answers.push_back(cotclip::detail::answer_from_json(a));
  r.full_answer = cotclip::detail::answer_from_json(cotclip::detail::require(j, "full_answer", line));
  r.earliest_stable = cotclip::detail::require(j, "earliest_stable", line).get<int>();
  r.acr = cotclip::detail::require(j, "acr", line).get<double>();
  r.probe_tokens = cotclip::detail::require(j, "probe_tokens", line).get<std::int64_t>();
  return r;
}

inline void write_records(const std::vector<ConvergenceRecord>& records, const std::string& path) {
  auto out = cotclip::detail::open_out(path);
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

inline std::vector<ConvergenceRecord> read_records(const std::string& path) {
  std::vector<ConvergenceRecord> out;
  cotclip::detail::for_each_jsonl_record(path, [&](const json& j, long line) {
    out.push_back(record_from_json(j, line));
  });
  return out;
}

}  // namespace cotclip::probe
