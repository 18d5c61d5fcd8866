#pragma once

// Scoring and reporting: exact-match accuracy over normalized answers, token
// means and reduction versus a named baseline, stop-quality classification
// against convergence records, the concise-CoT baseline prompt, and CSV
// report emission.

#include <array>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cotclip/answers.hpp"
#include "cotclip/probe.hpp"
#include "cotclip/prompts.hpp"
#include "cotclip/trace_model.hpp"

namespace cotclip::eval {

struct Metrics {
  std::string policy_name;
  std::int64_t n_examples = 0;
  double accuracy = 0.0;
  double mean_tokens = 0.0;
  double mean_tokens_incl_probes = 0.0;
  std::optional<double> reduction_pct;  // vs a named baseline run
  double stop_rate = 0.0;
};

/// Per-example answer aliases (plug-in point for datasets whose gold answers
/// admit several surface forms). Keyed by example id; entries are normalized.
using AliasMap = std::map<std::string, std::set<std::string>>;

/// Exact-match scoring over normalized answers. Failed episodes count wrong;
/// examples without a gold answer are excluded from accuracy but not from
/// token statistics. Reduction is computed only when a baseline is given and
/// requires the two runs to cover the same example ids.
inline Metrics score_run(const std::vector<EpisodeResult>& episodes,
                         const std::vector<DatasetExample>& dataset,
                         const std::vector<EpisodeResult>* baseline = nullptr,
                         const AliasMap* aliases = nullptr) {
  std::map<std::string, const DatasetExample*> by_id;
  for (const auto& ex : dataset) by_id[ex.id] = &ex;

  Metrics m;
  m.n_examples = static_cast<std::int64_t>(episodes.size());
  if (!episodes.empty()) m.policy_name = episodes.front().policy_name;

  std::int64_t scored = 0, correct = 0, stopped = 0;
  double tokens = 0.0, tokens_incl = 0.0;
  for (const auto& ep : episodes) {
    auto it = by_id.find(ep.example_id);
    if (it == by_id.end())
      throw ConfigError("episode example id '" + ep.example_id + "' is not in the dataset");
    tokens += static_cast<double>(ep.generated_tokens);
    tokens_incl += static_cast<double>(ep.generated_tokens + ep.probe_tokens);
    if (ep.stop_chunk.has_value()) ++stopped;
    const auto& gold = it->second->gold_answer;
    if (!gold.has_value()) continue;
    ++scored;
    bool ok = !ep.failed && answers_match(ep.final_answer, gold);
    if (!ok && aliases && ep.final_answer) {
      auto al = aliases->find(ep.example_id);
      ok = al != aliases->end() && al->second.count(*ep.final_answer) > 0;
    }
    if (ok) ++correct;
  }
  if (scored > 0) m.accuracy = static_cast<double>(correct) / static_cast<double>(scored);
  if (!episodes.empty()) {
    m.mean_tokens = tokens / static_cast<double>(episodes.size());
    m.mean_tokens_incl_probes = tokens_incl / static_cast<double>(episodes.size());
    m.stop_rate = static_cast<double>(stopped) / static_cast<double>(episodes.size());
  }
  if (baseline) {
    std::set<std::string> ours, theirs;
    for (const auto& ep : episodes) ours.insert(ep.example_id);
    for (const auto& ep : *baseline) theirs.insert(ep.example_id);
    if (ours != theirs)
      throw ConfigError("baseline run does not cover the same example ids");
    double base_tokens = 0.0;
    for (const auto& ep : *baseline) base_tokens += static_cast<double>(ep.generated_tokens);
    double base_mean = base_tokens / static_cast<double>(baseline->size());
    m.reduction_pct = 100.0 * (1.0 - m.mean_tokens / base_mean);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Stop quality
// ---------------------------------------------------------------------------

enum class StopQuality { kPerfectStop, kLateStop, kIncorrectStop, kUndeterminedFaithfulness };

inline const char* to_string(StopQuality q) {
  switch (q) {
    case StopQuality::kPerfectStop: return "PerfectStop";
    case StopQuality::kLateStop: return "LateStop";
    case StopQuality::kIncorrectStop: return "IncorrectStop";
    case StopQuality::kUndeterminedFaithfulness: return "UndeterminedFaithfulness";
  }
  return "?";
}

/// Classify one early-stopped episode against its convergence record. Only
/// meaningful where the full chain is correct (record.full_answer == gold);
/// the caller filters to those examples. An episode that never stopped is
/// treated as stopping at the final chunk. Stops preceding the earliest
/// correct-and-stable probe are never auto-labelled unfaithful, only flagged
/// for human review.
inline StopQuality classify_stop(const probe::ConvergenceRecord& record,
                                 const EpisodeResult& episode, const Answer& gold) {
  if (!answers_match(record.full_answer, gold))
    throw InvariantError("classify_stop applies only where the full chain is correct");
  if (episode.failed || !answers_match(episode.final_answer, gold))
    return StopQuality::kIncorrectStop;
  const int t_chunks = static_cast<int>(record.prefix_answers.size()) - 1;
  const int consumed = episode.stop_chunk ? *episode.stop_chunk + 1 : t_chunks;
  // chunk-indexed policies cannot stop before chunk 1
  const int earliest = std::max(record.earliest_stable, 1);
  if (consumed == earliest) return StopQuality::kPerfectStop;
  if (consumed > earliest) return StopQuality::kLateStop;
  return StopQuality::kUndeterminedFaithfulness;
}

struct StopQualityCounts {
  std::string policy_name;
  std::int64_t perfect = 0;
  std::int64_t late = 0;
  std::int64_t incorrect = 0;
  std::int64_t undetermined = 0;

  void add(StopQuality q) {
    switch (q) {
      case StopQuality::kPerfectStop: ++perfect; break;
      case StopQuality::kLateStop: ++late; break;
      case StopQuality::kIncorrectStop: ++incorrect; break;
      case StopQuality::kUndeterminedFaithfulness: ++undetermined; break;
    }
  }
};

// ---------------------------------------------------------------------------
// Concise-CoT baseline prompt
// ---------------------------------------------------------------------------

/// The prompt-level budget baseline: the standard template plus a line
/// limiting the thinking process to `budget_words` words.
inline std::string ccot_prompt(const std::string& question, int budget_words) {
  if (budget_words < 1) throw ConfigError("ccot budget must be >= 1");
  return prompts::render_prompt("ccot_qa", question, budget_words);
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

namespace report_detail {

inline std::string f4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace report_detail

inline void write_metrics_csv(const std::vector<Metrics>& rows, const std::string& path) {
  auto out = cotclip::detail::open_out(path);
  out << "policy,n_examples,accuracy,mean_tokens,mean_tokens_incl_probes,reduction_pct,"
         "stop_rate\n";
  for (const auto& m : rows) {
    out << m.policy_name << ',' << m.n_examples << ',' << report_detail::f4(m.accuracy) << ','
        << report_detail::f4(m.mean_tokens) << ','
        << report_detail::f4(m.mean_tokens_incl_probes) << ','
        << (m.reduction_pct ? report_detail::f4(*m.reduction_pct) : std::string()) << ','
        << report_detail::f4(m.stop_rate) << '\n';
  }
}

inline void write_stop_quality_csv(const std::vector<StopQualityCounts>& rows,
                                   const std::string& path) {
  auto out = cotclip::detail::open_out(path);
  out << "policy,category,count\n";
  for (const auto& r : rows) {
    out << r.policy_name << ",PerfectStop," << r.perfect << '\n';
    out << r.policy_name << ",LateStop," << r.late << '\n';
    out << r.policy_name << ",IncorrectStop," << r.incorrect << '\n';
    out << r.policy_name << ",UndeterminedFaithfulness," << r.undetermined << '\n';
  }
}

/// Emit metrics.csv, acr_hist.csv, stop_quality.csv and a human-readable
/// summary under out_dir, in a deterministic order. Reruns on identical
/// inputs produce byte-identical files.
inline std::vector<std::string> emit_report(const std::vector<Metrics>& metrics,
                                            const probe::Histogram& hist,
                                            const std::vector<StopQualityCounts>& quality,
                                            const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::vector<std::string> written;
  const std::string metrics_path = out_dir + "/metrics.csv";
  write_metrics_csv(metrics, metrics_path);
  written.push_back(metrics_path);
  const std::string hist_path = out_dir + "/acr_hist.csv";
  probe::write_histogram_csv(hist, hist_path);
  written.push_back(hist_path);
  const std::string quality_path = out_dir + "/stop_quality.csv";
  write_stop_quality_csv(quality, quality_path);
  written.push_back(quality_path);

  const std::string summary_path = out_dir + "/summary.txt";
  auto out = cotclip::detail::open_out(summary_path);
  out << "run summary\n===========\n";
  for (const auto& m : metrics) {
    out << m.policy_name << ": acc " << report_detail::f4(m.accuracy) << ", tokens "
        << report_detail::f4(m.mean_tokens) << " (incl probes "
        << report_detail::f4(m.mean_tokens_incl_probes) << ")";
    if (m.reduction_pct) out << ", reduction " << report_detail::f4(*m.reduction_pct) << "%";
    out << ", stop rate " << report_detail::f4(m.stop_rate) << ", n=" << m.n_examples << '\n';
  }
  if (!quality.empty()) {
    out << "\nstop quality\n";
    for (const auto& r : quality)
      out << r.policy_name << ": perfect " << r.perfect << ", late " << r.late << ", incorrect "
          << r.incorrect << ", undetermined " << r.undetermined << '\n';
  }
  written.push_back(summary_path);
  return written;
}

}  // namespace cotclip::eval
