#pragma once

// Deterministic scripted backend. A script is line-delimited JSON: an
// optional header record {"vocab": [...]} followed by entry records
//
//   {"match": <key>, "tokens": [...], "logits": [[...]]?,
//    "activations": [[...]]?, "fail_after": n?}
//
// where <key> is a literal prompt, a literal prompt prefix, a digest key
// "fnv1a:<16 hex>" of the exact prompt, or "*" (fallback). Lookup order:
// exact literal, digest, longest literal prefix, fallback; no match is an
// error. All outputs are pure functions of (script, request).

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cotclip/backend.hpp"

namespace cotclip::backend {

/// FNV-1a 64-bit digest of a prompt, in the script key form "fnv1a:<hex>".
inline std::string prompt_digest(std::string_view prompt) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : prompt) {
    h ^= c;
    h *= 1099511628211ull;
  }
  static const char* hexd = "0123456789abcdef";
  std::string hex(16, '0');
  for (int i = 15; i >= 0; --i) {
    hex[i] = hexd[h & 0xf];
    h >>= 4;
  }
  return "fnv1a:" + hex;
}

struct ScriptEntry {
  std::string match;
  std::vector<std::string> tokens;
  std::vector<std::vector<double>> logits;          // per step, over vocab
  std::vector<std::vector<double>> activations;     // per chunk
  std::optional<std::int64_t> fail_after;           // throw after n events
};

struct MockScript {
  std::vector<std::string> vocab;
  std::vector<ScriptEntry> entries;
};

inline json to_json(const ScriptEntry& e) {
  json j{{"match", e.match}, {"tokens", e.tokens}};
  if (!e.logits.empty()) j["logits"] = e.logits;
  if (!e.activations.empty()) j["activations"] = e.activations;
  if (e.fail_after) j["fail_after"] = *e.fail_after;
  return j;
}

inline void write_script(const MockScript& script, const std::string& path) {
  auto out = cotclip::detail::open_out(path);
  if (!script.vocab.empty()) out << json{{"vocab", script.vocab}}.dump() << '\n';
  for (const auto& e : script.entries) out << to_json(e).dump() << '\n';
}

class MockBackend final : public Backend {
 public:
  MockBackend(MockScript script, BackendOptions opts = {})
      : Backend(std::move(opts)), script_(std::move(script)) {
    for (size_t i = 0; i < script_.vocab.size(); ++i)
      vocab_index_[script_.vocab[i]] = static_cast<int>(i);
    for (size_t i = 0; i < script_.entries.size(); ++i) {
      const ScriptEntry& e = script_.entries[i];
      if (e.match == "*") {
        fallback_ = static_cast<int>(i);
      } else if (e.match.rfind("fnv1a:", 0) == 0) {
        digest_index_[e.match] = static_cast<int>(i);
      } else {
        literal_index_[e.match] = static_cast<int>(i);
      }
      if (!e.logits.empty()) {
        if (script_.vocab.empty())
          throw ConfigError("mock script: logits require a vocab header record");
        for (const auto& row : e.logits)
          if (row.size() != script_.vocab.size())
            throw ConfigError("mock script: logits row length must equal vocab size");
        if (!vocab_index_.count(options().think_marker))
          throw ConfigError("mock script: end-of-think marker \"" + options().think_marker +
                            "\" must be a vocabulary entry when logits are scripted");
      }
    }
  }

  BackendCaps capabilities() const override {
    return BackendCaps{/*full_logits=*/true, /*logit_bias=*/false,
                       /*activations=*/true, /*max_context=*/1 << 20};
  }

  std::unique_ptr<TokenStream> generate(const GenRequest& req) override {
    const ScriptEntry& e = entry_for(req.prompt);
    return std::make_unique<Stream>(this, &e, req);
  }

  std::optional<ActivationSequence> activations_for_prompt(const std::string& prompt) const override {
    const ScriptEntry* e = find_entry(prompt);
    if (!e || e->activations.empty()) return std::nullopt;
    ActivationSequence a;
    a.dim = static_cast<int>(e->activations.front().size());
    a.vectors = e->activations;
    return a;
  }

  std::optional<int> token_id(const std::string& text) const override {
    auto it = vocab_index_.find(text);
    if (it == vocab_index_.end()) return std::nullopt;
    return it->second;
  }

 private:
  class Stream final : public TokenStream {
   public:
    Stream(const MockBackend* owner, const ScriptEntry* entry, GenRequest req)
        : owner_(owner), entry_(entry), req_(std::move(req)) {}

    std::optional<TokenEvent> next() override {
      if (done_) return std::nullopt;
      if (entry_->fail_after && cursor_ >= *entry_->fail_after)
        throw TransportError("scripted mid-stream failure for prompt", 1);
      if (cursor_ >= static_cast<std::int64_t>(entry_->tokens.size())) {
        finish_ = "end";
        done_ = true;
        return std::nullopt;
      }
      if (cursor_ >= req_.max_tokens) {
        finish_ = "length";
        done_ = true;
        return std::nullopt;
      }
      TokenEvent ev;
      ev.text = entry_->tokens[cursor_];
      if (auto id = owner_->token_id(ev.text)) ev.token_id = *id;
      ev.is_end_of_think = ev.text == owner_->options().think_marker;
      if (req_.want_logits && cursor_ < static_cast<std::int64_t>(entry_->logits.size())) {
        LogitView view;
        view.full = entry_->logits[cursor_];
        ev.logits_view = std::move(view);
      }
      ++cursor_;
      for (const auto& stop : req_.stop_sequences) {
        if (ev.text == stop) {
          finish_ = "stop";
          done_ = true;
          break;
        }
      }
      return ev;
    }

    std::string finish_reason() const override { return finish_; }

   private:
    const MockBackend* owner_;
    const ScriptEntry* entry_;
    GenRequest req_;
    std::int64_t cursor_ = 0;
    bool done_ = false;
    std::string finish_ = "end";
  };

  const ScriptEntry* find_entry(const std::string& prompt) const {
    if (auto it = literal_index_.find(prompt); it != literal_index_.end())
      return &script_.entries[it->second];
    if (auto it = digest_index_.find(prompt_digest(prompt)); it != digest_index_.end())
      return &script_.entries[it->second];
    const ScriptEntry* best = nullptr;
    size_t best_len = 0;
    for (const auto& [key, idx] : literal_index_) {
      if (key.size() > best_len && prompt.rfind(key, 0) == 0) {
        best = &script_.entries[idx];
        best_len = key.size();
      }
    }
    if (best) return best;
    if (fallback_ >= 0) return &script_.entries[fallback_];
    return nullptr;
  }

  const ScriptEntry& entry_for(const std::string& prompt) const {
    const ScriptEntry* e = find_entry(prompt);
    if (!e)
      throw Error("mock script has no entry matching prompt (digest " +
                  prompt_digest(prompt) + "): " +
                  (prompt.size() > 120 ? prompt.substr(0, 120) + "..." : prompt));
    return *e;
  }

  MockScript script_;
  std::unordered_map<std::string, int> vocab_index_;
  std::unordered_map<std::string, int> literal_index_;
  std::unordered_map<std::string, int> digest_index_;
  int fallback_ = -1;
};

/// Parse a script file into a backend. Malformed records are reported with
/// their line number.
inline std::unique_ptr<MockBackend> load_script(const std::string& path,
                                                BackendOptions opts = {}) {
  MockScript script;
  bool first = true;
  cotclip::detail::for_each_jsonl_record(path, [&](const json& j, long line) {
    try {
      if (first && j.contains("vocab")) {
        script.vocab = j.at("vocab").get<std::vector<std::string>>();
        first = false;
        return;
      }
      first = false;
      ScriptEntry e;
      e.match = j.at("match").get<std::string>();
      e.tokens = j.at("tokens").get<std::vector<std::string>>();
      if (j.contains("logits"))
        e.logits = j.at("logits").get<std::vector<std::vector<double>>>();
      if (j.contains("activations"))
        e.activations = j.at("activations").get<std::vector<std::vector<double>>>();
      if (j.contains("fail_after")) e.fail_after = j.at("fail_after").get<std::int64_t>();
      script.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(std::string("bad script record: ") + ex.what(), line);
    }
  });
  return std::make_unique<MockBackend>(std::move(script), std::move(opts));
}

}  // namespace cotclip::backend
