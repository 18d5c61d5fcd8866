#pragma once

// Uniform model-access layer: token-by-token generation with optional logit
// access, forced-continuation answer probes, and activation export. Two
// implementations: a scripted deterministic mock (mock_backend.hpp) and an
// OpenAI-compatible HTTP client (http_backend.hpp).

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cotclip/errors.hpp"
#include "cotclip/trace_model.hpp"

namespace cotclip::backend {

/// Logits visible at one decoding step. The mock exposes the full vector over
/// its miniature vocabulary; HTTP backends expose only top-K logprobs. A view
/// never fabricates data: `full` is absent unless the source really returned
/// a full distribution.
struct LogitView {
  std::optional<std::vector<double>> full;
  std::optional<std::vector<std::pair<int, double>>> topk;  // sorted desc by logprob
  /// Wire formats expose token text, not ids; kept alongside topk for
  /// analysis when ids are unavailable (id slots then hold -1).
  std::optional<std::vector<std::pair<std::string, double>>> topk_text;

  bool operator==(const LogitView&) const = default;
};

struct TokenEvent {
  int token_id = -1;  // -1 when the backend cannot resolve ids
  std::string text;
  std::optional<LogitView> logits_view;
  bool is_end_of_think = false;
  std::int64_t token_count = 1;  // >1 only for coarse text pieces (HTTP fallback)

  bool operator==(const TokenEvent&) const = default;
};

struct BackendCaps {
  bool full_logits = false;
  bool logit_bias = false;
  bool activations = false;
  std::int64_t max_context = 0;
};

struct GenRequest {
  std::string prompt;
  std::int64_t max_tokens = 1;
  bool greedy = true;
  std::vector<std::string> stop_sequences;
  std::map<int, double> logit_bias;
  bool want_logits = false;
};

/// Single-consumer pull stream. Dropping the stream cancels any generation
/// still in flight.
class TokenStream {
 public:
  virtual ~TokenStream() = default;
  virtual std::optional<TokenEvent> next() = 0;
  /// "stop" | "length" | "end"; meaningful once next() returned nullopt.
  virtual std::string finish_reason() const = 0;
};

struct BackendOptions {
  std::string think_marker = "</think>";
  std::string answer_cue;  // optional suffix appended after the marker in probes
};

class Backend {
 public:
  explicit Backend(BackendOptions opts = {}) : opts_(std::move(opts)) {}
  virtual ~Backend() = default;

  virtual BackendCaps capabilities() const = 0;
  virtual std::unique_ptr<TokenStream> generate(const GenRequest& req) = 0;

  /// Per-chunk final-layer activations for the generation scripted at this
  /// prompt, when the backend has them (mock only; never fetched over HTTP).
  virtual std::optional<ActivationSequence> activations_for_prompt(const std::string&) const {
    return std::nullopt;
  }

  /// Token id for a piece of text, when the backend has a vocabulary.
  virtual std::optional<int> token_id(const std::string&) const { return std::nullopt; }

  const BackendOptions& options() const { return opts_; }

 private:
  BackendOptions opts_;
};

struct ProbeResult {
  std::string text;
  std::int64_t tokens_used = 0;
};

/// Force-continue a partial chain: append the end-of-reasoning marker (plus
/// the configured answer cue) and greedily decode an answer within `budget`
/// tokens.
inline ProbeResult probe_continuation(Backend& b, const std::string& prefix,
                                      std::int64_t budget = 64) {
  GenRequest req;
  req.prompt = prefix + b.options().think_marker + b.options().answer_cue;
  req.max_tokens = budget;
  req.greedy = true;
  auto stream = b.generate(req);
  ProbeResult out;
  while (auto ev = stream->next()) {
    out.text += ev->text;
    out.tokens_used += ev->token_count;
  }
  return out;
}

}  // namespace cotclip::backend
