#pragma once

// Core domain types shared by all modules, plus their line-delimited JSON
// file formats. One record per line; all values immutable once constructed.

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cotclip/answers.hpp"
#include "cotclip/errors.hpp"

namespace cotclip {

using json = nlohmann::ordered_json;

struct DatasetExample {
  std::string id;
  std::string question;
  eval::Answer gold_answer;  // stored post-normalization
  std::string task_tag;

  bool operator==(const DatasetExample&) const = default;
};

struct ChunkSpan {
  int index = 0;  // 0-based, contiguous within one trace
  std::string text;
  std::int64_t token_count = 0;

  bool operator==(const ChunkSpan&) const = default;
};

struct ReasoningTrace {
  std::string example_id;
  std::vector<ChunkSpan> chunks;
  eval::Answer full_answer;  // normalized answer after the complete chain
  std::int64_t total_tokens = 0;

  bool operator==(const ReasoningTrace&) const = default;
};

struct ActivationSequence {
  std::string example_id;
  int dim = 0;
  std::vector<std::vector<double>> vectors;  // one per chunk, final-layer

  bool operator==(const ActivationSequence&) const = default;
};

struct EpisodeResult {
  std::string example_id;
  std::string policy_name;
  std::optional<int> stop_chunk;  // 0-based; absent = ran to natural end
  eval::Answer final_answer;
  std::int64_t generated_tokens = 0;  // reasoning + marker + answer, excl. probes
  std::int64_t reasoning_tokens = 0;  // reasoning + marker only
  std::int64_t probe_tokens = 0;      // extra tokens spent on answer probes
  bool truncated = false;             // reasoning budget exhausted
  bool failed = false;                // backend failure mid-stream
  std::vector<json> wall_events;      // ordered decision log for audit

  bool operator==(const EpisodeResult&) const = default;
};

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

inline void validate(const ReasoningTrace& t) {
  if (t.chunks.empty())
    throw InvariantError("trace '" + t.example_id + "': chunks must be non-empty");
  std::int64_t sum = 0;
  for (size_t i = 0; i < t.chunks.size(); ++i) {
    const ChunkSpan& c = t.chunks[i];
    if (c.index != static_cast<int>(i))
      throw InvariantError("trace '" + t.example_id + "': chunk indices must be contiguous from 0");
    if (eval::detail::trim(c.text).empty())
      throw InvariantError("trace '" + t.example_id + "': chunk text must be non-empty");
    if (c.token_count < 0)
      throw InvariantError("trace '" + t.example_id + "': token counts must be non-negative");
    sum += c.token_count;
  }
  if (t.total_tokens < sum)
    throw InvariantError("trace '" + t.example_id +
                         "': total_tokens must be >= sum of chunk token_counts");
}

inline void validate(const ActivationSequence& a) {
  if (a.dim <= 0)
    throw InvariantError("activations '" + a.example_id + "': dim must be positive");
  for (const auto& v : a.vectors)
    if (static_cast<int>(v.size()) != a.dim)
      throw InvariantError("activations '" + a.example_id +
                           "': every vector must have length dim");
}

inline void validate(const EpisodeResult& e) {
  if (!e.failed && e.generated_tokens <= 0)
    throw InvariantError("episode '" + e.example_id +
                         "': generated_tokens must be positive for a non-empty episode");
  if (e.generated_tokens < 0 || e.probe_tokens < 0 || e.reasoning_tokens < 0)
    throw InvariantError("episode '" + e.example_id + "': token counts must be non-negative");
}

// ---------------------------------------------------------------------------
// JSON record conversions
// ---------------------------------------------------------------------------

namespace detail {

inline json answer_to_json(const eval::Answer& a) {
  return a ? json(*a) : json(nullptr);
}

inline eval::Answer answer_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<std::string>();
}

inline const json& require(const json& j, const char* field, long line) {
  auto it = j.find(field);
  if (it == j.end()) throw ParseError(std::string("missing field \"") + field + "\"", line);
  return *it;
}

}  // namespace detail

inline json to_json(const DatasetExample& e) {
  return json{{"id", e.id},
              {"question", e.question},
              {"gold_answer", detail::answer_to_json(e.gold_answer)},
              {"task_tag", e.task_tag}};
}

inline DatasetExample dataset_example_from_json(const json& j, long line = -1) {
  DatasetExample e;
  e.id = detail::require(j, "id", line).get<std::string>();
  e.question = detail::require(j, "question", line).get<std::string>();
  e.gold_answer = detail::answer_from_json(detail::require(j, "gold_answer", line));
  e.task_tag = detail::require(j, "task_tag", line).get<std::string>();
  if (e.question.empty()) throw ParseError("question must be non-empty", line);
  return e;
}

inline json to_json(const ReasoningTrace& t) {
  json chunks = json::array();
  for (const ChunkSpan& c : t.chunks)
    chunks.push_back(json{{"index", c.index}, {"text", c.text}, {"token_count", c.token_count}});
  return json{{"example_id", t.example_id},
              {"chunks", std::move(chunks)},
              {"full_answer", detail::answer_to_json(t.full_answer)},
              {"total_tokens", t.total_tokens}};
}

inline ReasoningTrace trace_from_json(const json& j, long line = -1) {
  ReasoningTrace t;
  t.example_id = detail::require(j, "example_id", line).get<std::string>();
  for (const json& cj : detail::require(j, "chunks", line)) {
    ChunkSpan c;
    c.index = detail::require(cj, "index", line).get<int>();
    c.text = detail::require(cj, "text", line).get<std::string>();
    c.token_count = detail::require(cj, "token_count", line).get<std::int64_t>();
    t.chunks.push_back(std::move(c));
  }
  t.full_answer = detail::answer_from_json(detail::require(j, "full_answer", line));
  t.total_tokens = detail::require(j, "total_tokens", line).get<std::int64_t>();
  return t;
}

inline json to_json(const ActivationSequence& a) {
  return json{{"example_id", a.example_id}, {"dim", a.dim}, {"vectors", a.vectors}};
}

inline ActivationSequence activations_from_json(const json& j, long line = -1) {
  ActivationSequence a;
  a.example_id = detail::require(j, "example_id", line).get<std::string>();
  a.dim = detail::require(j, "dim", line).get<int>();
  a.vectors = detail::require(j, "vectors", line).get<std::vector<std::vector<double>>>();
  return a;
}

inline json to_json(const EpisodeResult& e) {
  return json{{"example_id", e.example_id},
              {"policy_name", e.policy_name},
              {"stop_chunk", e.stop_chunk ? json(*e.stop_chunk) : json(nullptr)},
              {"final_answer", detail::answer_to_json(e.final_answer)},
              {"generated_tokens", e.generated_tokens},
              {"reasoning_tokens", e.reasoning_tokens},
              {"probe_tokens", e.probe_tokens},
              {"truncated", e.truncated},
              {"failed", e.failed},
              {"wall_events", e.wall_events}};
}

inline EpisodeResult episode_from_json(const json& j, long line = -1) {
  EpisodeResult e;
  e.example_id = detail::require(j, "example_id", line).get<std::string>();
  e.policy_name = detail::require(j, "policy_name", line).get<std::string>();
  const json& sc = detail::require(j, "stop_chunk", line);
  if (!sc.is_null()) e.stop_chunk = sc.get<int>();
  e.final_answer = detail::answer_from_json(detail::require(j, "final_answer", line));
  e.generated_tokens = detail::require(j, "generated_tokens", line).get<std::int64_t>();
  e.reasoning_tokens = detail::require(j, "reasoning_tokens", line).get<std::int64_t>();
  e.probe_tokens = detail::require(j, "probe_tokens", line).get<std::int64_t>();
  e.truncated = detail::require(j, "truncated", line).get<bool>();
  e.failed = detail::require(j, "failed", line).get<bool>();
  for (const json& ev : detail::require(j, "wall_events", line)) e.wall_events.push_back(ev);
  return e;
}

// ---------------------------------------------------------------------------
// Line-delimited file I/O
// ---------------------------------------------------------------------------

namespace detail {

template <typename Fn>
void for_each_jsonl_record(const std::string& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (eval::detail::trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(std::string("malformed JSON: ") + ex.what(), line_no);
    }
    fn(j, line_no);
  }
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // binary: byte-identical across reruns
  if (!out) throw IoError("cannot write " + path);
  return out;
}

}  // namespace detail

inline std::vector<DatasetExample> read_dataset(const std::string& path) {
  std::vector<DatasetExample> out;
  std::set<std::string> seen;
  detail::for_each_jsonl_record(path, [&](const json& j, long line) {
    DatasetExample e = dataset_example_from_json(j, line);
    if (!seen.insert(e.id).second)
      throw ParseError("duplicate id \"" + e.id + "\"", line);
    out.push_back(std::move(e));
  });
  return out;
}

inline void write_dataset(const std::vector<DatasetExample>& examples, const std::string& path) {
  auto out = detail::open_out(path);
  for (const auto& e : examples) out << to_json(e).dump() << '\n';
}

inline void write_trace(const ReasoningTrace& t, std::ostream& out) {
  validate(t);
  out << to_json(t).dump() << '\n';
}

inline void write_trace(const ReasoningTrace& t, const std::string& path) {
  auto out = detail::open_out(path);
  write_trace(t, out);
}

inline void write_traces(const std::vector<ReasoningTrace>& traces, const std::string& path) {
  auto out = detail::open_out(path);
  for (const auto& t : traces) write_trace(t, out);
}

inline std::vector<ReasoningTrace> read_traces(const std::string& path) {
  std::vector<ReasoningTrace> out;
  detail::for_each_jsonl_record(path, [&](const json& j, long line) {
    ReasoningTrace t = trace_from_json(j, line);
    try {
      validate(t);
    } catch (const InvariantError& ex) {
      throw ParseError(ex.what(), line);
    }
    out.push_back(std::move(t));
  });
  return out;
}

inline ReasoningTrace read_trace(const std::string& path) {
  auto all = read_traces(path);
  if (all.size() != 1)
    throw ParseError("expected exactly one trace record in " + path + ", found " +
                     std::to_string(all.size()));
  return all.front();
}

inline void write_activations(const std::vector<ActivationSequence>& seqs,
                              const std::string& path) {
  auto out = detail::open_out(path);
  for (const auto& a : seqs) {
    validate(a);
    out << to_json(a).dump() << '\n';
  }
}

inline std::vector<ActivationSequence> read_activations(const std::string& path) {
  std::vector<ActivationSequence> out;
  detail::for_each_jsonl_record(path, [&](const json& j, long line) {
    ActivationSequence a = activations_from_json(j, line);
    try {
      validate(a);
    } catch (const InvariantError& ex) {
      throw ParseError(ex.what(), line);
    }
    out.push_back(std::move(a));
  });
  return out;
}

inline void write_episodes(const std::vector<EpisodeResult>& eps, const std::string& path) {
  auto out = detail::open_out(path);
  for (const auto& e : eps) {
    validate(e);
    out << to_json(e).dump() << '\n';
  }
}

inline std::vector<EpisodeResult> read_episodes(const std::string& path) {
  std::vector<EpisodeResult> out;
  detail::for_each_jsonl_record(path, [&](const json& j, long line) {
    out.push_back(episode_from_json(j, line));
  });
  return out;
}

}  // namespace cotclip
