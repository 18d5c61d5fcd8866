#pragma once

// The unified early-stopping decoding loop and the three stopping policies:
// answer consistency (probe at sentence boundaries, stop after k identical
// answers), end-of-think logit boosting (adaptive adjustment every decoding
// step until the marker is emitted), and the learned stopper (LSTM over
// per-chunk activations, stop when p_hat >= tau).

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cotclip/answers.hpp"
#include "cotclip/backend.hpp"
#include "cotclip/lstm.hpp"
#include "cotclip/probe.hpp"
#include "cotclip/segmenter.hpp"
#include "cotclip/trace_model.hpp"

namespace cotclip::policy {

enum class Decision { kContinue, kStop };

// ---------------------------------------------------------------------------
// Policy configuration
// ---------------------------------------------------------------------------

struct NonePolicy {};

struct ConsistencyPolicy {
  int k = 10;  // consecutive identical probe answers required
  std::int64_t probe_budget = 64;
};

struct ThinkBoostPolicy {
  double alpha = 0.6;
  bool boundaries_only = false;         // apply only at sentence boundaries
  std::optional<double> fixed_bias;     // top-k fallback: constant logit bias
};

struct LearnToStopPolicy {
  l2s::StopPredictor predictor;
  double tau = 0.5;
};

using PolicyVariant = std::variant<NonePolicy, ConsistencyPolicy, ThinkBoostPolicy,
                                   LearnToStopPolicy>;

struct StopPolicyConfig {
  PolicyVariant variant;
  std::int64_t max_reasoning_tokens = 4096;
  std::int64_t answer_budget = 64;
  int probe_stride = 1;  // probe every Nth sentence boundary

  std::string name() const {
    struct Namer {
      std::string operator()(const NonePolicy&) const { return "none"; }
      std::string operator()(const ConsistencyPolicy&) const { return "consistency"; }
      std::string operator()(const ThinkBoostPolicy& p) const {
        return p.fixed_bias ? "boost-approx" : "boost";
      }
      std::string operator()(const LearnToStopPolicy&) const { return "l2s"; }
    };
    return std::visit(Namer{}, variant);
  }

  void validate() const {
    if (max_reasoning_tokens < 1) throw ConfigError("max_reasoning_tokens must be >= 1");
    if (answer_budget < 1) throw ConfigError("answer budget must be >= 1");
    if (probe_stride < 1) throw ConfigError("probe stride must be >= 1");
    if (const auto* c = std::get_if<ConsistencyPolicy>(&variant)) {
      if (c->k < 1) throw ConfigError("consistency k must be >= 1");
      if (c->probe_budget < 1) throw ConfigError("probe budget must be >= 1");
    } else if (const auto* b = std::get_if<ThinkBoostPolicy>(&variant)) {
      if (b->alpha < 0.0) throw ConfigError("boost alpha must be >= 0");
    } else if (const auto* l = std::get_if<LearnToStopPolicy>(&variant)) {
      if (l->tau <= 0.0 || l->tau >= 1.0) throw ConfigError("tau must lie in (0,1)");
    }
  }
};

// ---------------------------------------------------------------------------
// Answer consistency (one fold step)
// ---------------------------------------------------------------------------

struct ConsistencyState {
  eval::Answer last_answer;
  int run_length = 0;
};

/// Fold one probed answer into the run. A parsed answer extends or restarts
/// the run; NO_ANSWER never matches anything and resets it. STOP exactly when
/// the run reaches k.
inline Decision consistency_step(ConsistencyState& state, const eval::Answer& probed, int k) {
  if (!probed.has_value()) {
    state.last_answer.reset();
    state.run_length = 0;
    return Decision::kContinue;
  }
  if (eval::answers_match(state.last_answer, probed)) {
    ++state.run_length;
  } else {
    state.last_answer = probed;
    state.run_length = 1;
  }
  return state.run_length >= k ? Decision::kStop : Decision::kContinue;
}

// ---------------------------------------------------------------------------
// Think token adjustment
// ---------------------------------------------------------------------------

/// y[t*] += alpha * (max(y) - mean(y)), both taken from the pre-adjustment
/// vector. Only the think token's coordinate changes; the added term is
/// always non-negative.
inline std::vector<double> think_boost(const std::vector<double>& logits, int think_index,
                                       double alpha) {
  if (logits.size() < 2) throw InvariantError("think_boost: logit vector too short");
  if (think_index < 0 || think_index >= static_cast<int>(logits.size()))
    throw InvariantError("think_boost: think_index out of range");
  double max_v = logits[0];
  double sum = 0.0;
  for (double v : logits) {
    max_v = std::max(max_v, v);
    sum += v;
  }
  const double mean = sum / static_cast<double>(logits.size());
  std::vector<double> out = logits;
  out[think_index] += alpha * (max_v - mean);
  return out;
}

inline int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

// ---------------------------------------------------------------------------
// Learned stopper (one chunk step)
// ---------------------------------------------------------------------------

struct L2sCarry {
  l2s::LstmState state;
};

inline L2sCarry initial_carry(const l2s::StopPredictor& pred) {
  return L2sCarry{l2s::initial_state(pred)};
}

struct L2sStep {
  double p_hat = 0.0;
  Decision decision = Decision::kContinue;
};

/// Advance the recurrence one chunk and threshold the stop probability
/// (inclusive: p_hat >= tau stops). Inference applies no dropout.
inline L2sStep l2s_decide(const l2s::StopPredictor& pred, const std::vector<double>& h_t,
                          L2sCarry& carry, double tau) {
  if (static_cast<int>(h_t.size()) != pred.input_dim)
    throw ConfigError("l2s_decide: activation dim " + std::to_string(h_t.size()) +
                      " does not match predictor input dim " + std::to_string(pred.input_dim));
  l2s::Vec x = Eigen::Map<const l2s::Vec>(h_t.data(), h_t.size());
  auto act = l2s::lstm_step(pred, x, carry.state);
  carry.state.h = act.h;
  carry.state.c = act.c;
  L2sStep out;
  out.p_hat = l2s::sigmoid(l2s::head_logit(pred, act.h));
  out.decision = out.p_hat >= tau ? Decision::kStop : Decision::kContinue;
  return out;
}

// ---------------------------------------------------------------------------
// Episode runner
// ---------------------------------------------------------------------------

struct EpisodeOptions {
  seg::SegmenterOptions segmenter = seg::default_options();
  /// Activation lookup by example id for backends that cannot export
  /// activations (HTTP); the mock supplies its own.
  const std::map<std::string, ActivationSequence>* activation_store = nullptr;
  /// Token id of the end-of-think marker on the serving side, required for
  /// the fixed-bias boost fallback.
  std::optional<int> think_token_id;
};

/// Prefix handed to the backend when answering from a truncated chain.
inline std::string answer_prefix(const std::string& prompt, const std::string& reasoning_text) {
  return prompt + "\n" + eval::detail::trim(reasoning_text);
}

namespace detail {

inline json chunk_event(int chunk, const eval::Answer& probe_answer, std::optional<double> p_hat,
                        Decision decision, const char* note = nullptr) {
  json ev{{"chunk", chunk},
          {"probe_answer", probe_answer ? json(*probe_answer) : json(nullptr)},
          {"p_hat", p_hat ? json(*p_hat) : json(nullptr)},
          {"decision", decision == Decision::kStop ? "stop" : "continue"}};
  if (note) ev["note"] = note;
  return ev;
}

}  // namespace detail

/// Run one policy-controlled decoding episode: stream tokens through the
/// segmenter, consult the policy at each completed chunk (or each step, for
/// boosting), and on STOP append the end-of-think marker and decode the final
/// answer greedily. Capability requirements are checked before any
/// generation. Tokens consumed from the stream are counted as generated even
/// when a stop truncates the usable reasoning at an earlier boundary.
inline EpisodeResult decode_with_policy(backend::Backend& b, const DatasetExample& example,
                                        const std::string& prompt, const StopPolicyConfig& cfg,
                                        const EpisodeOptions& opts = {}) {
  cfg.validate();
  const auto caps = b.capabilities();
  const std::string& marker = b.options().think_marker;

  const auto* consistency = std::get_if<ConsistencyPolicy>(&cfg.variant);
  const auto* boost = std::get_if<ThinkBoostPolicy>(&cfg.variant);
  const auto* l2s_cfg = std::get_if<LearnToStopPolicy>(&cfg.variant);

  // Setup-time capability gating: never fail mid-run for a known reason.
  std::optional<int> think_id;
  if (boost) {
    if (boost->fixed_bias) {
      if (!caps.logit_bias)
        throw ConfigError("fixed-bias boost requires a backend with logit_bias support");
      if (!opts.think_token_id)
        throw ConfigError("fixed-bias boost requires the marker's token id");
      think_id = opts.think_token_id;
    } else {
      if (!caps.full_logits)
        throw ConfigError(
            "think-boost requires full logits; this backend exposes top-k only "
            "(use the fixed-bias fallback)");
      think_id = b.token_id(marker);
      if (!think_id)
        throw ConfigError("think-boost requires the marker to map to a single token id");
    }
  }

  std::optional<ActivationSequence> activations;
  if (l2s_cfg) {
    if (caps.activations) activations = b.activations_for_prompt(prompt);
    if (!activations && opts.activation_store) {
      auto it = opts.activation_store->find(example.id);
      if (it != opts.activation_store->end()) activations = it->second;
    }
    if (!activations)
      throw ConfigError("learn-to-stop requires activations for example '" + example.id +
                        "' (backend export or --activations file)");
  }

  EpisodeResult ep;
  ep.example_id = example.id;
  ep.policy_name = cfg.name();

  backend::GenRequest req;
  req.prompt = prompt;
  req.max_tokens = cfg.max_reasoning_tokens;
  req.greedy = true;
  req.stop_sequences = {marker};
  req.want_logits = boost && !boost->fixed_bias;
  if (boost && boost->fixed_bias) req.logit_bias[*think_id] = *boost->fixed_bias;

  seg::StreamSegmenter segmenter(opts.segmenter);
  ConsistencyState cstate;
  L2sCarry carry = l2s_cfg ? initial_carry(l2s_cfg->predictor) : L2sCarry{};

  std::string raw;                 // reasoning text consumed so far
  std::int64_t step = 0;           // reasoning decoding steps
  int boundaries_seen = 0;
  bool stopped = false;            // policy or boost forced the marker
  bool marker_consumed = false;    // model emitted the marker itself
  bool chunk_just_closed = false;  // for --boost-at-boundaries-only
  std::optional<int> stop_chunk;
  size_t stop_chunk_end = 0;       // raw offset where usable reasoning ends

  auto handle_chunk = [&](const ChunkSpan& chunk, size_t chunk_end) -> Decision {
    ++boundaries_seen;
    if (consistency) {
      if (boundaries_seen % cfg.probe_stride != 0) {
        ep.wall_events.push_back(
            detail::chunk_event(chunk.index, std::nullopt, std::nullopt, Decision::kContinue,
                                "stride_skip"));
        return Decision::kContinue;
      }
      std::string prefix = answer_prefix(prompt, raw.substr(0, chunk_end));
      auto probe = backend::probe_continuation(b, prefix, consistency->probe_budget);
      ep.probe_tokens += probe.tokens_used;
      eval::Answer ans = eval::extract_answer(probe.text);
      Decision d = consistency_step(cstate, ans, consistency->k);
      ep.wall_events.push_back(detail::chunk_event(chunk.index, ans, std::nullopt, d));
      return d;
    }
    if (l2s_cfg) {
      if (chunk.index >= static_cast<int>(activations->vectors.size())) {
        ep.wall_events.push_back(detail::chunk_event(chunk.index, std::nullopt, std::nullopt,
                                                     Decision::kContinue, "no_activation"));
        return Decision::kContinue;
      }
      L2sStep s = l2s_decide(l2s_cfg->predictor, activations->vectors[chunk.index], carry,
                             l2s_cfg->tau);
      ep.wall_events.push_back(
          detail::chunk_event(chunk.index, std::nullopt, s.p_hat, s.decision));
      return s.decision;
    }
    ep.wall_events.push_back(
        detail::chunk_event(chunk.index, std::nullopt, std::nullopt, Decision::kContinue));
    return Decision::kContinue;
  };

  auto process_chunks = [&](const std::vector<ChunkSpan>& chunks,
                            const std::vector<size_t>& ends) {
    for (size_t ci = 0; ci < chunks.size(); ++ci) {
      if (handle_chunk(chunks[ci], ends[ci]) == Decision::kStop) {
        stopped = true;
        stop_chunk = chunks[ci].index;
        stop_chunk_end = ends[ci];
        return;
      }
    }
  };

  auto stream = b.generate(req);
  try {
    while (auto ev = stream->next()) {
      if (ev->is_end_of_think) {
        // Natural end of reasoning. The trailing sentence only completes
        // here, so it still gets a policy decision (a stop on it records
        // convergence but saves nothing).
        marker_consumed = true;
        ep.reasoning_tokens += ev->token_count;
        auto chunks = segmenter.flush();
        process_chunks(chunks, segmenter.recent_chunk_ends());
        break;
      }
      // Think token adjustment, applied before this step's token commits.
      // Emitting the marker (above) disables it for the rest of the episode.
      if (boost && !boost->fixed_bias) {
        bool applicable = !boost->boundaries_only || chunk_just_closed;
        if (applicable) {
          if (!ev->logits_view || !ev->logits_view->full)
            throw Error("think-boost: backend produced no full logits at step " +
                        std::to_string(step));
          auto adjusted = think_boost(*ev->logits_view->full, *think_id, boost->alpha);
          bool force = argmax(adjusted) == *think_id && ev->token_id != *think_id;
          ep.wall_events.push_back(json{{"step", step},
                                        {"boost_applied", true},
                                        {"decision", force ? "stop" : "continue"}});
          if (force) {
            stopped = true;
            break;
          }
        } else {
          ep.wall_events.push_back(
              json{{"step", step}, {"boost_applied", false}, {"decision", "continue"}});
        }
      }
      raw += ev->text;
      ep.reasoning_tokens += ev->token_count;
      ++step;
      auto chunks = segmenter.feed(ev->text, ev->token_count);
      chunk_just_closed = !chunks.empty();
      process_chunks(chunks, segmenter.recent_chunk_ends());
      if (stopped) break;
      if (ep.reasoning_tokens >= cfg.max_reasoning_tokens) {
        ep.truncated = true;
        break;
      }
    }
  } catch (const TransportError& ex) {
    ep.failed = true;
    ep.generated_tokens = ep.reasoning_tokens;
    ep.wall_events.push_back(json{{"kind", "failure"}, {"error", ex.what()}});
    return ep;
  }

  // Where does the usable reasoning end? Policy stops truncate at the last
  // completed boundary; boost stops truncate right before the forced marker;
  // otherwise the whole stream counts.
  std::string reasoning_text;
  if (stopped && stop_chunk.has_value()) {
    reasoning_text = raw.substr(0, stop_chunk_end);
  } else {
    reasoning_text = raw;
  }
  if (stopped && !stop_chunk.has_value()) {
    // boost-forced stop: attribute the stop to the chunk the marker landed in
    auto rest = segmenter.flush();
    for (const auto& chunk : rest)
      ep.wall_events.push_back(detail::chunk_event(chunk.index, std::nullopt, std::nullopt,
                                                   Decision::kStop, "boost_stop"));
    stop_chunk = std::max(segmenter.emitted_chunks() - 1, 0);
  } else if (!stopped && !marker_consumed) {
    auto rest = segmenter.flush();
    for (const auto& chunk : rest)
      ep.wall_events.push_back(detail::chunk_event(chunk.index, std::nullopt, std::nullopt,
                                                   Decision::kContinue, "flush"));
  }
  if (stopped) {
    ep.stop_chunk = stop_chunk;
    if (!marker_consumed) ep.reasoning_tokens += 1;  // the appended marker
  }

  try {
    auto answer = backend::probe_continuation(b, answer_prefix(prompt, reasoning_text),
                                              cfg.answer_budget);
    ep.final_answer = eval::extract_answer(answer.text);
    ep.generated_tokens = ep.reasoning_tokens + answer.tokens_used;
    ep.wall_events.push_back(json{{"kind", "answer"}, {"tokens", answer.tokens_used}});
  } catch (const TransportError& ex) {
    ep.failed = true;
    ep.generated_tokens = ep.reasoning_tokens;
    ep.wall_events.push_back(json{{"kind", "failure"}, {"error", ex.what()}});
  }
  return ep;
}

}  // namespace cotclip::policy
