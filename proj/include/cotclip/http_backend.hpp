#pragma once

// OpenAI-compatible HTTP client: streamed completions (SSE) with optional
// top-K logprobs and logit_bias, plus a chat-endpoint adapter that wraps the
// prompt in a single user message. Greedy requests are idempotent, so
// transport failures retry with exponential backoff (attempt count surfaced).
//
// The client never fabricates logits: LogitView.full stays absent, and topk
// carries whatever the server returned. Activations are never fetched over
// HTTP. When the end-of-think marker is used as a server-side stop sequence,
// the (excluded) stop text is surfaced as one synthetic marker event so that
// decoding loops see the same shape as on the mock.

#include <atomic>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

// glibc's resolv.h (dragged in by httplib) leaks a `_res` macro that breaks
// Eigen's internals when both end up in one translation unit.
#ifdef _res
#undef _res
#endif

#include "cotclip/backend.hpp"

namespace cotclip::backend {

struct HttpConfig {
  std::string base_url = "http://127.0.0.1:8000";
  std::string model;
  std::string api_key;            // empty: taken from COTCLIP_API_KEY
  bool chat = false;              // use the chat endpoint via adapter
  int top_logprobs = 0;           // K; 0 = do not request logprobs
  bool logit_bias_supported = true;
  std::int64_t max_context = 32768;
  int max_attempts = 3;
  int backoff_ms = 250;
  int read_timeout_s = 300;
  std::string completions_path = "/v1/completions";
  std::string chat_path = "/v1/chat/completions";
};

namespace http_detail {

inline std::string api_key_or_env(const HttpConfig& cfg) {
  if (!cfg.api_key.empty()) return cfg.api_key;
  const char* env = std::getenv("COTCLIP_API_KEY");
  return env ? env : "";
}

inline std::optional<LogitView> topk_view(const json& top_logprobs) {
  if (!top_logprobs.is_object() && !top_logprobs.is_array()) return std::nullopt;
  std::vector<std::pair<int, double>> pairs;
  std::vector<std::pair<std::string, double>> texts;
  if (top_logprobs.is_object()) {  // completions style: {"tok": lp, ...}
    for (auto it = top_logprobs.begin(); it != top_logprobs.end(); ++it)
      texts.emplace_back(it.key(), it.value().get<double>());
  } else {  // chat style: [{"token": t, "logprob": lp}, ...]
    for (const auto& e : top_logprobs)
      if (e.contains("token") && e.contains("logprob"))
        texts.emplace_back(e["token"].get<std::string>(), e["logprob"].get<double>());
  }
  if (texts.empty()) return std::nullopt;
  std::sort(texts.begin(), texts.end(),
            [](const auto& a, const auto& b) { return a.second > b.second; });
  pairs.reserve(texts.size());
  for (const auto& [text, lp] : texts) {
    (void)text;  // token ids are not exposed by the wire format
    pairs.emplace_back(-1, lp);
  }
  LogitView view;
  view.topk = std::move(pairs);
  view.topk_text = std::move(texts);
  return view;
}

}  // namespace http_detail

class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(HttpConfig cfg, BackendOptions opts = {})
      : Backend(std::move(opts)), cfg_(std::move(cfg)) {
    if (cfg_.model.empty()) throw ConfigError("http backend requires a model name");
  }

  BackendCaps capabilities() const override {
    return BackendCaps{/*full_logits=*/false, cfg_.logit_bias_supported,
                       /*activations=*/false, cfg_.max_context};
  }

  std::unique_ptr<TokenStream> generate(const GenRequest& req) override;

 private:
  friend class HttpTokenStream;
  HttpConfig cfg_;
};

class HttpTokenStream final : public TokenStream {
 public:
  HttpTokenStream(HttpConfig cfg, BackendOptions opts, GenRequest req)
      : cfg_(std::move(cfg)), opts_(std::move(opts)), req_(std::move(req)) {
    worker_ = std::thread([this] { run(); });
  }

  ~HttpTokenStream() override {
    cancelled_.store(true);
    if (worker_.joinable()) worker_.join();
  }

  std::optional<TokenEvent> next() override {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !queue_.empty() || done_; });
    if (!queue_.empty()) {
      TokenEvent ev = std::move(queue_.front());
      queue_.pop_front();
      return ev;
    }
    if (error_attempts_ >= 0) throw TransportError(error_, error_attempts_);
    if (!error_.empty()) throw Error(error_);
    return std::nullopt;
  }

  std::string finish_reason() const {
    std::lock_guard lock(mu_);
    return finish_;
  }

 private:
  void push(TokenEvent ev) {
    std::lock_guard lock(mu_);
    got_event_ = true;
    queue_.push_back(std::move(ev));
    cv_.notify_all();
  }

  void finish(std::string reason) {
    std::lock_guard lock(mu_);
    if (!reason.empty()) finish_ = std::move(reason);
    done_ = true;
    cv_.notify_all();
  }

  void fail(std::string message, int attempts /*-1 = non-transport*/) {
    std::lock_guard lock(mu_);
    error_ = std::move(message);
    error_attempts_ = attempts;
    done_ = true;
    cv_.notify_all();
  }

  json request_body() const {
    json body{{"model", cfg_.model},
              {"max_tokens", req_.max_tokens},
              {"temperature", 0.0},
              {"stream", true}};
    if (cfg_.chat) {
      body["messages"] = json::array({json{{"role", "user"}, {"content", req_.prompt}}});
      if (cfg_.top_logprobs > 0) {
        body["logprobs"] = true;
        body["top_logprobs"] = cfg_.top_logprobs;
      }
    } else {
      body["prompt"] = req_.prompt;
      if (cfg_.top_logprobs > 0) body["logprobs"] = cfg_.top_logprobs;
    }
    if (!req_.stop_sequences.empty()) body["stop"] = req_.stop_sequences;
    if (!req_.logit_bias.empty()) {
      json bias = json::object();
      for (const auto& [id, v] : req_.logit_bias) bias[std::to_string(id)] = v;
      body["logit_bias"] = std::move(bias);
    }
    return body;
  }

  // One SSE "data:" payload -> zero or more token events.
  void handle_payload(const std::string& payload) {
    if (payload == "[DONE]") return;
    json j;
    try {
      j = json::parse(payload);
    } catch (const nlohmann::json::exception&) {
      return;  // keep-alives and comments are not token data
    }
    if (!j.contains("choices") || j["choices"].empty()) return;
    const json& choice = j["choices"][0];
    if (choice.contains("finish_reason") && !choice["finish_reason"].is_null())
      wire_finish_ = choice["finish_reason"].get<std::string>();

    auto emit = [&](const std::string& text, std::optional<LogitView> view) {
      if (text.empty()) return;
      TokenEvent ev;
      ev.text = text;
      ev.logits_view = std::move(view);
      ev.is_end_of_think = text == opts_.think_marker;
      push(std::move(ev));
    };

    if (!cfg_.chat) {
      const json* lp = choice.contains("logprobs") && !choice["logprobs"].is_null()
                           ? &choice["logprobs"]
                           : nullptr;
      if (lp && lp->contains("tokens") && !(*lp)["tokens"].empty()) {
        const json& tokens = (*lp)["tokens"];
        const json* tops = lp->contains("top_logprobs") ? &(*lp)["top_logprobs"] : nullptr;
        for (size_t i = 0; i < tokens.size(); ++i) {
          std::optional<LogitView> view;
          if (req_.want_logits || cfg_.top_logprobs > 0)
            if (tops && i < tops->size()) view = http_detail::topk_view((*tops)[i]);
          emit(tokens[i].get<std::string>(), std::move(view));
        }
      } else if (choice.contains("text")) {
        emit(choice["text"].get<std::string>(), std::nullopt);
      }
    } else {
      const json* lp = choice.contains("logprobs") && !choice["logprobs"].is_null() &&
                               choice["logprobs"].contains("content")
                           ? &choice["logprobs"]["content"]
                           : nullptr;
      if (lp && !lp->empty()) {
        for (const auto& entry : *lp) {
          std::optional<LogitView> view;
          if (entry.contains("top_logprobs")) view = http_detail::topk_view(entry["top_logprobs"]);
          emit(entry["token"].get<std::string>(), std::move(view));
        }
      } else if (choice.contains("delta") && choice["delta"].contains("content") &&
                 !choice["delta"]["content"].is_null()) {
        emit(choice["delta"]["content"].get<std::string>(), std::nullopt);
      }
    }
  }

  void consume_sse(const char* data, size_t len) {
    buffer_.append(data, len);
    size_t pos;
    while ((pos = buffer_.find('\n')) != std::string::npos) {
      std::string line = buffer_.substr(0, pos);
      buffer_.erase(0, pos + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.rfind("data:", 0) == 0) {
        std::string payload = line.substr(5);
        if (!payload.empty() && payload.front() == ' ') payload.erase(0, 1);
        handle_payload(payload);
      }
    }
  }

  void run() {
    const std::string body = request_body().dump();
    const std::string path = cfg_.chat ? cfg_.chat_path : cfg_.completions_path;
    httplib::Headers headers;
    const std::string key = http_detail::api_key_or_env(cfg_);
    if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);
    headers.emplace("Accept", "text/event-stream");

    std::string last_error;
    for (int attempt = 1; attempt <= cfg_.max_attempts; ++attempt) {
      httplib::Client cli(cfg_.base_url);
      cli.set_read_timeout(cfg_.read_timeout_s, 0);
      cli.set_connection_timeout(10, 0);
      buffer_.clear();
      wire_finish_.clear();
      int status = 0;
      std::string error_body;
      httplib::Request hreq;
      hreq.method = "POST";
      hreq.path = path;
      hreq.headers = headers;
      hreq.body = body;
      hreq.set_header("Content-Type", "application/json");
      hreq.response_handler = [&](const httplib::Response& response) {
        status = response.status;
        return true;
      };
      hreq.content_receiver = [&](const char* data, size_t len, uint64_t, uint64_t) {
        if (cancelled_.load()) return false;
        if (status == 200) {
          consume_sse(data, len);
        } else {
          error_body.append(data, len);
        }
        return true;
      };
      auto res = cli.send(hreq);

      if (cancelled_.load()) {
        finish("cancelled");
        return;
      }
      if (res && status == 200) {
        std::string reason = wire_finish_ == "stop"     ? "stop"
                             : wire_finish_ == "length" ? "length"
                                                        : "end";
        // Servers exclude matched stop text; surface the marker explicitly.
        if (reason == "stop") {
          for (const auto& stop : req_.stop_sequences) {
            if (stop == opts_.think_marker) {
              TokenEvent ev;
              ev.text = opts_.think_marker;
              ev.is_end_of_think = true;
              push(std::move(ev));
              break;
            }
          }
        }
        finish(reason);
        return;
      }
      if (res && status >= 400 && status < 500) {
        std::string msg = "http " + std::to_string(status) + " from " + path;
        if (!error_body.empty()) msg += ": " + error_body.substr(0, 300);
        if (msg.find("context") != std::string::npos)
          msg = "context overflow (prompt too long for the model): " + msg;
        fail(msg, -1);  // permanent, no retry
        return;
      }
      last_error = res ? "http " + std::to_string(status)
                       : "connection error (" + httplib::to_string(res.error()) + ")";
      if (got_event_.load()) break;  // mid-stream failure: do not replay
      if (attempt < cfg_.max_attempts)
        std::this_thread::sleep_for(
            std::chrono::milliseconds(cfg_.backoff_ms * (1 << (attempt - 1))));
    }
    fail("backend request failed: " + last_error, cfg_.max_attempts);
  }

  HttpConfig cfg_;
  BackendOptions opts_;
  GenRequest req_;
  std::thread worker_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<TokenEvent> queue_;
  bool done_ = false;
  std::string finish_ = "end";
  std::string error_;
  int error_attempts_ = -1;
  std::atomic<bool> cancelled_{false};
  std::atomic<bool> got_event_{false};

  std::string buffer_;       // worker-side SSE reassembly
  std::string wire_finish_;  // worker-side finish reason
};

inline std::unique_ptr<TokenStream> HttpBackend::generate(const GenRequest& req) {
  return std::make_unique<HttpTokenStream>(cfg_, options(), req);
}

}  // namespace cotclip::backend
