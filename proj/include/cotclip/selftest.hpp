#pragma once

// Offline invariant suite run by `cotclip selftest`: exercises the bundled
// fixtures and the library's core properties without any model. Prints one
// line per check and reports overall success.

#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "cotclip/mock_backend.hpp"
#include "cotclip/policy.hpp"
#include "cotclip/probe.hpp"
#include "cotclip/prompts.hpp"
#include "cotclip/segmenter.hpp"
#include "cotclip/trace_model.hpp"

namespace cotclip::selftest {

namespace detail {

struct Suite {
  std::ostream& out;
  int failures = 0;

  void check(const std::string& name, const std::function<void()>& body) {
    try {
      body();
      out << "PASS " << name << '\n';
    } catch (const std::exception& ex) {
      ++failures;
      out << "FAIL " << name << ": " << ex.what() << '\n';
    }
  }
};

inline void expect(bool cond, const std::string& what) {
  if (!cond) throw Error(what);
}

// forward brute-force scan, independent of compute_acr's backward scan
inline int oracle_earliest(const std::vector<eval::Answer>& answers, const eval::Answer& full) {
  for (size_t s = 0; s < answers.size(); ++s) {
    bool ok = true;
    for (size_t j = s; j < answers.size(); ++j)
      if (answers[j] != full) {
        ok = false;
        break;
      }
    if (ok) return static_cast<int>(s);
  }
  return static_cast<int>(answers.size());
}

}  // namespace detail

/// Returns the number of failed checks (0 = success).
inline int run(const std::string& fixtures_dir, std::ostream& out = std::cout) {
  namespace fs = std::filesystem;
  detail::Suite suite{out};

  suite.check("segmenter fixture corpus", [&] {
    std::ifstream in(fixtures_dir + "/segmenter_corpus.jsonl");
    detail::expect(in.good(), "cannot open " + fixtures_dir + "/segmenter_corpus.jsonl");
    std::string line;
    std::mt19937_64 rng(7);
    int cases = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = json::parse(line);
      const auto text = j.at("text").get<std::string>();
      const auto want = j.at("chunks").get<std::vector<std::string>>();
      auto got = seg::split_sentences(text);
      detail::expect(got.size() == want.size(), "chunk count mismatch on: " + text);
      for (size_t i = 0; i < got.size(); ++i)
        detail::expect(got[i].text == want[i], "chunk text mismatch on: " + text);
      // offline/online equivalence under a random token split
      seg::StreamSegmenter stream;
      std::vector<std::string> streamed;
      size_t pos = 0;
      while (pos < text.size()) {
        size_t len = std::min<size_t>(1 + rng() % 5, text.size() - pos);
        for (auto& c : stream.feed(text.substr(pos, len))) streamed.push_back(c.text);
        pos += len;
      }
      for (auto& c : stream.flush()) streamed.push_back(c.text);
      detail::expect(streamed.size() == want.size(), "stream chunk count mismatch on: " + text);
      for (size_t i = 0; i < streamed.size(); ++i)
        detail::expect(streamed[i] == want[i], "stream chunk mismatch on: " + text);
      ++cases;
    }
    detail::expect(cases >= 20, "fixture corpus too small");
  });

  suite.check("acr scan equals brute force (200 random lists)", [&] {
    std::mt19937_64 rng(17);
    const char* alphabet[] = {"a", "b", "c", "d"};
    for (int iter = 0; iter < 200; ++iter) {
      size_t len = 1 + rng() % 30;
      std::vector<eval::Answer> pa(len);
      for (auto& a : pa) a = alphabet[rng() % 4];
      auto [earliest, acr] = probe::compute_acr(pa, pa.back());
      detail::expect(earliest == detail::oracle_earliest(pa, pa.back()), "oracle mismatch");
      detail::expect(acr >= 0.0 && acr <= 1.0, "acr out of range");
    }
  });

  suite.check("think boost properties (200 random vectors)", [&] {
    std::mt19937_64 rng(23);
    std::normal_distribution<double> gauss;
    for (int iter = 0; iter < 200; ++iter) {
      size_t n = 2 + rng() % 30;
      std::vector<double> y(n);
      for (auto& v : y) v = gauss(rng);
      int think = static_cast<int>(rng() % n);
      auto out2 = policy::think_boost(y, think, 0.6);
      for (size_t i = 0; i < n; ++i)
        if (static_cast<int>(i) != think)
          detail::expect(out2[i] == y[i], "non-think coordinate changed");
      detail::expect(out2[think] >= y[think], "boost must be non-negative");
      int after = policy::argmax(out2);
      detail::expect(after == policy::argmax(y) || after == think, "argmax property violated");
    }
  });

  suite.check("consistency fold equals first-k-run oracle", [&] {
    std::mt19937_64 rng(29);
    const char* alphabet[] = {"x", "y"};
    for (int iter = 0; iter < 200; ++iter) {
      int k = 1 + static_cast<int>(rng() % 6);
      size_t len = 1 + rng() % 25;
      std::vector<eval::Answer> probes(len);
      for (auto& a : probes)
        a = (rng() % 7 == 0) ? eval::Answer{} : eval::Answer{alphabet[rng() % 2]};
      policy::ConsistencyState st;
      int got = -1;
      for (size_t i = 0; i < len && got < 0; ++i)
        if (policy::consistency_step(st, probes[i], k) == policy::Decision::kStop)
          got = static_cast<int>(i) + 1;
      int want = -1, run = 0;
      eval::Answer last;
      for (size_t i = 0; i < len && want < 0; ++i) {
        if (!probes[i]) {
          run = 0;
          last.reset();
          continue;
        }
        run = (last && *last == *probes[i]) ? run + 1 : 1;
        last = probes[i];
        if (run >= k) want = static_cast<int>(i) + 1;
      }
      detail::expect(got == want, "fold/oracle mismatch");
    }
  });

  suite.check("demo mock script determinism", [&] {
    const std::string path = fixtures_dir + "/demo/mock_script.jsonl";
    detail::expect(fs::exists(path), "missing " + path);
    auto b1 = backend::load_script(path);
    auto b2 = backend::load_script(path);
    auto dataset = read_dataset(fixtures_dir + "/demo/dataset.jsonl");
    detail::expect(!dataset.empty(), "demo dataset empty");
    const std::string prompt =
        prompts::render_prompt("math", dataset.front().question);
    backend::GenRequest req;
    req.prompt = prompt;
    req.max_tokens = 4096;
    req.want_logits = false;
    auto s1 = b1->generate(req);
    auto s2 = b2->generate(req);
    while (true) {
      auto a = s1->next(), b = s2->next();
      detail::expect(a.has_value() == b.has_value(), "stream lengths differ");
      if (!a) break;
      detail::expect(a->text == b->text, "stream tokens differ");
    }
    auto p1 = backend::probe_continuation(*b1, prompt + "\n", 64);
    auto p2 = backend::probe_continuation(*b1, prompt + "\n", 64);
    detail::expect(p1.text == p2.text, "probe nondeterminism");
  });

  suite.check("demo corpus files round-trip", [&] {
    auto dataset = read_dataset(fixtures_dir + "/demo/dataset.jsonl");
    auto traces = read_traces(fixtures_dir + "/demo/traces.jsonl");
    auto acts = read_activations(fixtures_dir + "/demo/activations.jsonl");
    detail::expect(dataset.size() == traces.size() && traces.size() == acts.size(),
                   "demo corpus files disagree on example count");
    auto tmp = fs::temp_directory_path() / "cotclip-selftest";
    fs::create_directories(tmp);
    write_traces(traces, (tmp / "t.jsonl").string());
    detail::expect(read_traces((tmp / "t.jsonl").string()) == traces, "trace round-trip");
    write_activations(acts, (tmp / "a.jsonl").string());
    detail::expect(read_activations((tmp / "a.jsonl").string()) == acts,
                   "activation round-trip");
    fs::remove_all(tmp);
  });

  suite.check("prompt templates render deterministically", [&] {
    detail::expect(prompts::render_prompt("qa", "Q").find("Answer the following question.") == 0,
                   "qa template text");
    detail::expect(
        prompts::render_prompt("math", "Q").find("Solve the following math problem.") == 0,
        "math template text");
    auto c = prompts::render_prompt("ccot_math", "Q", 100);
    detail::expect(c.find("limit the thinking process length to 100 words") != std::string::npos,
                   "ccot budget text");
    detail::expect(prompts::render_prompt("qa", "Q") == prompts::render_prompt("qa", "Q"),
                   "template purity");
  });

  out << (suite.failures == 0 ? "selftest: all checks passed\n"
                              : "selftest: " + std::to_string(suite.failures) + " check(s) failed\n");
  return suite.failures;
}

}  // namespace cotclip::selftest
