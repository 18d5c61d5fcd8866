#pragma once

// Deterministic synthetic corpora and mock scripts. Everything here is a
// pure function of its spec + seed, so offline runs (selftest, acceptance,
// bundled fixtures) are reproducible byte for byte.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cotclip/mock_backend.hpp"
#include "cotclip/policy.hpp"
#include "cotclip/probe.hpp"
#include "cotclip/prompts.hpp"
#include "cotclip/trace_model.hpp"

namespace cotclip::synth {

struct CorpusSpec {
  int examples = 200;
  int min_chunks = 25;
  int max_chunks = 35;
  double stable_fraction = 0.6;  // probes match the final answer from floor(f*T) on
  int min_words = 6;             // words (= stream tokens) per sentence
  int max_words = 12;
  int activation_dim = 8;
  double activation_noise = 0.1;
  std::uint64_t seed = 2024;
  std::string task_tag = "synthetic";
  std::string prompt_template = "math";
};

struct SyntheticCorpus {
  std::vector<DatasetExample> dataset;
  std::vector<ReasoningTrace> traces;
  std::vector<ActivationSequence> activations;
  backend::MockScript script;
  std::vector<std::string> prompts;        // rendered prompt per example
  std::vector<int> stable_chunk;           // 1-based earliest stable chunk per example
};

namespace detail {

inline const char* kFiller[] = {"the",  "value", "term",  "sum",   "is",   "now",
                                "still", "we",    "get",   "so",    "then", "next",
                                "part",  "total", "count", "gives", "equal", "to"};

/// One reasoning sentence of exactly `words` whitespace-separated words,
/// ending in a period. Starts uppercase so the following sentence confirms
/// the previous boundary.
inline std::string make_sentence(int chunk_no, int words, std::mt19937_64& rng) {
  std::string s = "Step " + std::to_string(chunk_no);
  for (int w = 2; w < words - 1; ++w) {
    s += ' ';
    s += kFiller[rng() % std::size(kFiller)];
  }
  s += " v" + std::to_string(rng() % 100) + ".";
  return s;
}

/// Split a sentence into word tokens; every token after the first carries its
/// leading space so concatenation reproduces the text exactly.
inline std::vector<std::string> word_tokens(const std::string& sentence, bool leading_space) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : sentence) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur = " ";
    } else {
      cur += c;
    }
  }
  if (!cur.empty() && cur != " ") out.push_back(cur);
  if (leading_space && !out.empty()) out.front() = " " + out.front();
  return out;
}

inline backend::ScriptEntry probe_entry(const std::string& full_probe_prompt,
                                        const std::string& boxed_answer) {
  return backend::ScriptEntry{backend::prompt_digest(full_probe_prompt),
                              {" \\boxed{" + boxed_answer + "}"},
                              {},
                              {},
                              {}};
}

}  // namespace detail

/// Build a corpus whose probe answers stabilize at `stable_fraction` of the
/// chunks: before the stable point every prefix probes to a distinct wrong
/// answer (no accidental runs), from it onward to the final answer. Chunk
/// activations carry the stop signal on coordinate 0 (+2 after the stable
/// point, -2 before) plus Gaussian noise elsewhere.
inline SyntheticCorpus make_corpus(const CorpusSpec& spec) {
  SyntheticCorpus corpus;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.activation_noise);
  const std::string marker = "</think>";

  for (int i = 0; i < spec.examples; ++i) {
    const std::string id = "syn-" + std::to_string(i);
    const std::string final_answer = std::to_string(100 + (i * 7) % 900);
    const int t_chunks =
        spec.min_chunks + static_cast<int>(rng() % (spec.max_chunks - spec.min_chunks + 1));
    const int stable = std::max(1, static_cast<int>(spec.stable_fraction * t_chunks));

    DatasetExample ex;
    ex.id = id;
    ex.question = "Series " + std::to_string(i) + ": what value remains after step " +
                  std::to_string(t_chunks) + "?";
    ex.gold_answer = final_answer;
    ex.task_tag = spec.task_tag;
    const std::string prompt = prompts::render_prompt(spec.prompt_template, ex.question);

    ReasoningTrace trace;
    trace.example_id = id;
    std::vector<std::string> stream_tokens;
    for (int t = 1; t <= t_chunks; ++t) {
      const int words = spec.min_words +
                        static_cast<int>(rng() % (spec.max_words - spec.min_words + 1));
      std::string sentence = detail::make_sentence(t, words, rng);
      auto tokens = detail::word_tokens(sentence, /*leading_space=*/t > 1);
      trace.chunks.push_back(
          ChunkSpan{t - 1, sentence, static_cast<std::int64_t>(tokens.size())});
      trace.total_tokens += static_cast<std::int64_t>(tokens.size());
      for (auto& tok : tokens) stream_tokens.push_back(std::move(tok));
    }
    stream_tokens.push_back(marker);
    trace.total_tokens += 1;
    trace.full_answer = final_answer;

    ActivationSequence act;
    act.example_id = id;
    act.dim = spec.activation_dim;
    for (int t = 1; t <= t_chunks; ++t) {
      std::vector<double> v(spec.activation_dim);
      for (auto& x : v) x = noise(rng);
      v[0] = t >= stable ? 2.0 : -2.0;
      act.vectors.push_back(std::move(v));
    }

    backend::ScriptEntry main_entry{prompt, std::move(stream_tokens), {}, act.vectors, {}};
    corpus.script.entries.push_back(std::move(main_entry));
    for (int s = 0; s <= t_chunks; ++s) {
      const std::string answer =
          s >= stable ? final_answer : "w" + std::to_string(i) + "x" + std::to_string(s);
      corpus.script.entries.push_back(detail::probe_entry(
          probe::probe_prefix(prompt, trace.chunks, static_cast<size_t>(s)) + marker, answer));
    }

    corpus.dataset.push_back(std::move(ex));
    corpus.traces.push_back(std::move(trace));
    corpus.activations.push_back(std::move(act));
    corpus.prompts.push_back(prompt);
    corpus.stable_chunk.push_back(stable);
  }
  return corpus;
}

/// Script for a single example whose probe answers are given explicitly per
/// prefix (nullopt probes return unboxed text). Used for consistency-oracle
/// property tests.
struct AnswerSequenceFixture {
  std::string prompt;
  ReasoningTrace trace;
  backend::MockScript script;
};

inline AnswerSequenceFixture make_answer_sequence_fixture(
    const std::string& id, const std::vector<eval::Answer>& chunk_answers,
    const eval::Answer& empty_prefix_answer = std::nullopt) {
  AnswerSequenceFixture fx;
  fx.prompt = "probe sequence " + id;
  fx.trace.example_id = id;
  const int t_chunks = static_cast<int>(chunk_answers.size());
  std::vector<std::string> stream_tokens;
  for (int t = 1; t <= t_chunks; ++t) {
    std::string sentence = "Step " + std::to_string(t) + " runs.";
    fx.trace.chunks.push_back(ChunkSpan{t - 1, sentence, 1});
    fx.trace.total_tokens += 1;
    stream_tokens.push_back(t == 1 ? sentence : " " + sentence);
  }
  stream_tokens.push_back("</think>");
  fx.trace.total_tokens += 1;
  fx.trace.full_answer = chunk_answers.empty() ? std::nullopt : chunk_answers.back();
  fx.script.entries.push_back(backend::ScriptEntry{fx.prompt, std::move(stream_tokens), {}, {}, {}});
  auto answer_entry = [&](size_t s, const eval::Answer& a) {
    const std::string key =
        probe::probe_prefix(fx.prompt, fx.trace.chunks, s) + "</think>";
    std::string text = a ? " \\boxed{" + *a + "}" : " undecided";
    fx.script.entries.push_back(
        backend::ScriptEntry{backend::prompt_digest(key), {text}, {}, {}, {}});
  };
  answer_entry(0, empty_prefix_answer);
  for (int s = 1; s <= t_chunks; ++s) answer_entry(static_cast<size_t>(s), chunk_answers[s - 1]);
  return fx;
}

/// Scripted-logits fixture for the boost policy: a miniature vocabulary, a
/// rising marker logit, the marker emitted naturally at the final step, and
/// an answer entry for every possible truncation point.
struct BoostFixture {
  std::string prompt;
  backend::MockScript script;
  int natural_marker_step = 0;             // step index of the scripted marker
  std::vector<std::vector<double>> logits;  // per pre-marker step
};

inline BoostFixture make_boost_fixture(int steps_before_marker, double marker_logit_start = 1.0,
                                       double marker_logit_end = 4.0) {
  BoostFixture fx;
  fx.prompt = "boost fixture";
  fx.natural_marker_step = steps_before_marker;
  backend::ScriptEntry main_entry;
  main_entry.match = fx.prompt;
  const std::vector<std::string> vocab = {"alpha", "beta", "gamma", "delta", "</think>"};
  fx.script.vocab = vocab;
  std::string raw;
  // answer entry for a stop before any token
  auto add_answer = [&](const std::string& reasoning) {
    const std::string key = policy::answer_prefix(fx.prompt, reasoning) + "</think>";
    fx.script.entries.push_back(
        backend::ScriptEntry{backend::prompt_digest(key), {" \\boxed{9}"}, {}, {}, {}});
  };
  add_answer(raw);
  for (int s = 0; s < steps_before_marker; ++s) {
    const int best = s % 4;
    std::vector<double> row(vocab.size(), 0.0);
    row[best] = 5.0;
    row[(best + 1) % 4] = 2.0;
    double frac = steps_before_marker > 1
                      ? static_cast<double>(s) / (steps_before_marker - 1)
                      : 1.0;
    row[4] = marker_logit_start + (marker_logit_end - marker_logit_start) * frac;
    fx.logits.push_back(row);
    main_entry.logits.push_back(row);
    main_entry.tokens.push_back(s == 0 ? vocab[best] : " " + vocab[best]);
    raw += main_entry.tokens.back();
    add_answer(raw);
  }
  std::vector<double> marker_row(vocab.size(), 0.0);
  marker_row[4] = 5.0;
  main_entry.logits.push_back(marker_row);
  main_entry.tokens.push_back("</think>");
  fx.script.entries.push_back(std::move(main_entry));
  return fx;
}

}  // namespace cotclip::synth
