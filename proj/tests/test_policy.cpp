#include <doctest.h>

#include <random>

#include "cotclip/policy.hpp"
#include "cotclip/synthetic.hpp"
#include "helpers.hpp"

using namespace cotclip;
using namespace cotclip::policy;
using eval::Answer;

namespace {

std::vector<Answer> fold_inputs(std::initializer_list<const char*> list) {
  std::vector<Answer> out;
  for (const char* s : list) out.emplace_back(s ? Answer(s) : std::nullopt);
  return out;
}

int stop_index_of(const std::vector<Answer>& probes, int k) {
  ConsistencyState st;
  for (size_t i = 0; i < probes.size(); ++i)
    if (consistency_step(st, probes[i], k) == Decision::kStop) return static_cast<int>(i) + 1;
  return -1;
}

}  // namespace

TEST_CASE("consistency_step: spec'd folds") {
  CHECK(stop_index_of(fold_inputs({"A", "A", "A"}), 3) == 3);
  CHECK(stop_index_of(fold_inputs({"A", "B", "B", "B"}), 3) == 4);
  CHECK(stop_index_of(fold_inputs({"A"}), 1) == 1);
  CHECK(stop_index_of(fold_inputs({"A", "B", "A", "B"}), 2) == -1);
  // NO_ANSWER resets the run and never matches anything
  CHECK(stop_index_of(fold_inputs({"A", "A", nullptr, "A", "A"}), 3) == -1);
  CHECK(stop_index_of(fold_inputs({nullptr, nullptr, "A", "A"}), 2) == 4);
}

TEST_CASE("consistency fold equals the first-k-run oracle on random sequences") {
  std::mt19937_64 rng(2025);
  const char* alphabet[] = {"x", "y", "z"};
  for (int iter = 0; iter < 500; ++iter) {
    int k = 1 + static_cast<int>(rng() % 10);
    size_t len = 1 + rng() % 40;
    std::vector<Answer> probes(len);
    for (auto& a : probes) {
      if (rng() % 8 == 0) {
        a = std::nullopt;
      } else {
        a = alphabet[rng() % 3];
      }
    }
    auto oracle = testutil::oracle_first_k_run(
        std::vector<std::optional<std::string>>(probes.begin(), probes.end()), k);
    int got = stop_index_of(probes, k);
    CHECK(got == (oracle ? *oracle : -1));
  }
}

TEST_CASE("think_boost: Eq-style hand case is exact in double precision") {
  auto out = think_boost({2.0, 1.0, 0.0}, 2, 0.6);
  CHECK(out[0] == 2.0);
  CHECK(out[1] == 1.0);
  CHECK(out[2] == 0.6);  // max 2, mean 1 -> boost 0.6 * 1
}

TEST_CASE("think_boost: zero alpha and uniform vectors are no-ops") {
  std::vector<double> y = {1.5, -2.0, 0.25, 9.0};
  CHECK(think_boost(y, 1, 0.0) == y);
  std::vector<double> uniform(17, 3.25);
  CHECK(think_boost(uniform, 4, 123.0) == uniform);
}

TEST_CASE("think_boost properties on random vectors") {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> gauss(0.0, 2.0);
  std::uniform_real_distribution<double> alpha_dist(0.0, 3.0);
  for (int iter = 0; iter < 1000; ++iter) {
    size_t n = 2 + rng() % 40;
    std::vector<double> y(n);
    for (auto& v : y) v = gauss(rng);
    int think = static_cast<int>(rng() % n);
    double alpha = alpha_dist(rng);
    auto out = think_boost(y, think, alpha);
    // exactly one coordinate changes, by a non-negative amount
    for (size_t i = 0; i < n; ++i)
      if (static_cast<int>(i) != think) CHECK(out[i] == y[i]);
    double max_v = *std::max_element(y.begin(), y.end());
    double mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
    CHECK(out[think] >= y[think]);
    CHECK(out[think] == doctest::Approx(y[think] + alpha * (max_v - mean)).epsilon(1e-12));
    // post-boost argmax is the old argmax or the think token
    int before = argmax(y);
    int after = argmax(out);
    CHECK((after == before || after == think));
    // boosted think logit is non-decreasing in alpha
    auto more = think_boost(y, think, alpha + 0.5);
    CHECK(more[think] >= out[think]);
    // a large enough alpha forces the marker whenever max > mean
    if (max_v - mean > 1e-9 && before != think) {
      double alpha_star = (max_v - y[think]) / (max_v - mean) + 1.0;
      CHECK(argmax(think_boost(y, think, alpha_star)) == think);
    }
  }
}

TEST_CASE("l2s_decide: zero head gives 0.5; threshold is inclusive") {
  auto pred = l2s::init_predictor(3, 4, 0);
  pred.w_x.setZero();
  pred.w_h.setZero();
  pred.bias.setZero();
  pred.head_w.setZero();
  pred.head_b = 0.0;
  L2sCarry carry = initial_carry(pred);
  auto step = l2s_decide(pred, {1.0, -2.0, 0.5}, carry, 0.5);
  CHECK(step.p_hat == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(step.decision == Decision::kStop);  // 0.5 >= 0.5
  L2sCarry carry2 = initial_carry(pred);
  CHECK(l2s_decide(pred, {1.0, -2.0, 0.5}, carry2, 0.51).decision == Decision::kContinue);
  CHECK_THROWS_AS(l2s_decide(pred, {1.0}, carry, 0.5), ConfigError);
}

TEST_CASE("decode_with_policy: consistency stop on a scripted example") {
  // probes wrong until chunk 5, stable "12" from chunk 5 onward; k=2 stops
  // at the 6th chunk (0-based stop_chunk 5)
  std::vector<Answer> chunk_answers;
  for (int t = 1; t <= 9; ++t) chunk_answers.emplace_back(t >= 5 ? "12" : std::to_string(t));
  auto fx = synth::make_answer_sequence_fixture("c1", chunk_answers);
  backend::MockBackend b(fx.script);

  DatasetExample ex;
  ex.id = "c1";
  ex.question = "q";
  StopPolicyConfig cfg;
  cfg.variant = ConsistencyPolicy{2, 32};
  auto ep = decode_with_policy(b, ex, fx.prompt, cfg);
  REQUIRE(ep.stop_chunk.has_value());
  CHECK(*ep.stop_chunk == 5);
  CHECK(ep.final_answer == Answer("12"));
  CHECK(ep.policy_name == "consistency");
  CHECK(ep.probe_tokens == 6);  // one probe per boundary, one token each
  CHECK_FALSE(ep.truncated);
  CHECK_FALSE(ep.failed);
  // audit: chunk events carry probe answers and the final decision is stop
  int stop_events = 0;
  for (const auto& ev : ep.wall_events)
    if (ev.contains("decision") && ev["decision"] == "stop") ++stop_events;
  CHECK(stop_events == 1);
}

TEST_CASE("decode_with_policy: variant None matches plain generation token-for-token") {
  std::vector<Answer> chunk_answers = {Answer("5"), Answer("5"), Answer("5")};
  auto fx = synth::make_answer_sequence_fixture("n1", chunk_answers);
  backend::MockBackend b(fx.script);
  DatasetExample ex;
  ex.id = "n1";
  ex.question = "q";
  StopPolicyConfig cfg;  // None by default
  auto ep = decode_with_policy(b, ex, fx.prompt, cfg);
  CHECK_FALSE(ep.stop_chunk.has_value());
  CHECK(ep.final_answer == Answer("5"));
  CHECK(ep.probe_tokens == 0);

  // unmodified baseline: raw stream + answer continuation
  backend::GenRequest req;
  req.prompt = fx.prompt;
  req.max_tokens = cfg.max_reasoning_tokens;
  req.stop_sequences = {"</think>"};
  auto stream = b.generate(req);
  std::int64_t raw_tokens = 0;
  std::string raw_text;
  while (auto ev = stream->next()) {
    raw_tokens += ev->token_count;
    if (!ev->is_end_of_think) raw_text += ev->text;
  }
  auto answer = backend::probe_continuation(b, answer_prefix(fx.prompt, raw_text), 64);
  CHECK(ep.generated_tokens == raw_tokens + answer.tokens_used);
  CHECK(ep.reasoning_tokens == raw_tokens);
}

TEST_CASE("decode_with_policy: boost forces the marker at the crossover step") {
  backend::MockScript script;
  script.vocab = {"a", "b", "</think>"};
  backend::ScriptEntry main_entry;
  main_entry.match = "p";
  main_entry.tokens = {"a", " a", " a", " a"};
  // boost = alpha * (max - mean); alpha 0.6
  // step0: [5,0,1] mean 2    -> think 1 + 1.8  = 2.8 < 5   continue
  // step1: [5,0,2] mean 7/3  -> think 2 + 1.6  = 3.6 < 5   continue
  // step2: [5,0,4.5] mean 19/6 -> think 4.5 + 0.8 = 5.3 > 5 force
  main_entry.logits = {{5, 0, 1}, {5, 0, 2}, {5, 0, 4.5}, {5, 0, 0}};
  script.entries.push_back(main_entry);
  const std::string reasoning_after_two = "a a";  // tokens 0..1
  script.entries.push_back(backend::ScriptEntry{
      backend::prompt_digest(answer_prefix("p", reasoning_after_two) + "</think>"),
      {" \\boxed{7}"},
      {},
      {},
      {}});
  backend::MockBackend b(std::move(script));

  DatasetExample ex;
  ex.id = "b1";
  ex.question = "q";
  StopPolicyConfig cfg;
  cfg.variant = ThinkBoostPolicy{0.6, false, std::nullopt};
  auto ep = decode_with_policy(b, ex, "p", cfg);
  CHECK(ep.final_answer == Answer("7"));
  REQUIRE(ep.stop_chunk.has_value());
  CHECK(ep.reasoning_tokens == 3);  // two consumed tokens + forced marker
  // audit: boost applied at steps 0,1 (continue) and 2 (stop); never later
  int last_boost_step = -1;
  for (const auto& ev : ep.wall_events) {
    if (ev.contains("boost_applied") && ev["boost_applied"].get<bool>())
      last_boost_step = ev["step"].get<int>();
  }
  CHECK(last_boost_step == 2);
}

TEST_CASE("decode_with_policy: disable-after-emit on a natural marker") {
  auto fx = synth::make_boost_fixture(6, 1.0, 2.0);  // marker stays uncompetitive
  backend::MockBackend b(fx.script);
  DatasetExample ex;
  ex.id = "b2";
  ex.question = "q";
  StopPolicyConfig cfg;
  cfg.variant = ThinkBoostPolicy{0.05, false, std::nullopt};  // too weak to force
  auto ep = decode_with_policy(b, ex, fx.prompt, cfg);
  CHECK_FALSE(ep.stop_chunk.has_value());
  CHECK(ep.final_answer == Answer("9"));
  // adjustments happen at steps < natural marker step and never after
  for (const auto& ev : ep.wall_events) {
    if (ev.contains("boost_applied")) {
      CHECK(ev["boost_applied"].get<bool>());
      CHECK(ev["step"].get<int>() < fx.natural_marker_step);
    }
  }
}

TEST_CASE("decode_with_policy: learn-to-stop consumes mock activations") {
  synth::CorpusSpec spec;
  spec.examples = 1;
  spec.min_chunks = 8;
  spec.max_chunks = 8;
  spec.activation_dim = 1;
  spec.activation_noise = 0.0;
  spec.seed = 5;
  auto corpus = synth::make_corpus(spec);
  backend::MockBackend b(corpus.script);

  // hand predictor: p_hat ~ sigmoid(7*tanh(tanh(x0))) crosses 0.9 when x0=+2
  auto pred = l2s::init_predictor(1, 1, 0);
  pred.w_x.setZero();
  pred.w_h.setZero();
  pred.bias.setZero();
  pred.w_x(2, 0) = 1.0;
  pred.bias(0) = 20.0;
  pred.bias(1) = -20.0;
  pred.bias(3) = 20.0;
  pred.head_w(0) = 7.0;

  StopPolicyConfig cfg;
  cfg.variant = LearnToStopPolicy{pred, 0.9};
  auto ep = decode_with_policy(b, corpus.dataset[0], corpus.prompts[0], cfg);
  REQUIRE(ep.stop_chunk.has_value());
  CHECK(*ep.stop_chunk == corpus.stable_chunk[0] - 1);  // 0-based
  CHECK(ep.final_answer == corpus.dataset[0].gold_answer);
  bool saw_p_hat = false;
  for (const auto& ev : ep.wall_events)
    if (ev.contains("p_hat") && !ev["p_hat"].is_null()) saw_p_hat = true;
  CHECK(saw_p_hat);
}

TEST_CASE("decode_with_policy: capability gating is a setup error") {
  struct TopkOnly final : backend::Backend {
    backend::BackendCaps capabilities() const override {
      return backend::BackendCaps{false, false, false, 4096};
    }
    std::unique_ptr<backend::TokenStream> generate(const backend::GenRequest&) override {
      throw Error("generate must not be reached");
    }
  };
  TopkOnly b;
  DatasetExample ex;
  ex.id = "x";
  ex.question = "q";
  StopPolicyConfig cfg;
  cfg.variant = ThinkBoostPolicy{0.6, false, std::nullopt};
  CHECK_THROWS_AS(decode_with_policy(b, ex, "p", cfg), ConfigError);
  // fixed-bias fallback additionally needs logit_bias support
  cfg.variant = ThinkBoostPolicy{0.6, false, 5.0};
  CHECK_THROWS_AS(decode_with_policy(b, ex, "p", cfg), ConfigError);
  // learn-to-stop without any activation source
  cfg.variant = LearnToStopPolicy{l2s::init_predictor(2, 2, 0), 0.5};
  CHECK_THROWS_AS(decode_with_policy(b, ex, "p", cfg), ConfigError);
}

TEST_CASE("decode_with_policy: budget exhaustion flags truncation") {
  std::vector<Answer> chunk_answers(6, Answer("8"));
  auto fx = synth::make_answer_sequence_fixture("t1", chunk_answers);
  backend::MockBackend b(fx.script);
  DatasetExample ex;
  ex.id = "t1";
  ex.question = "q";
  StopPolicyConfig cfg;
  cfg.max_reasoning_tokens = 3;
  auto ep = decode_with_policy(b, ex, fx.prompt, cfg);
  CHECK(ep.truncated);
  CHECK(ep.reasoning_tokens == 3);
  // answered from what exists: probe prefix after 3 chunks
  CHECK(ep.final_answer == Answer("8"));
}

TEST_CASE("decode_with_policy: mid-stream backend failure marks the episode failed") {
  backend::MockScript script;
  backend::ScriptEntry e{"p", {"First.", " Second.", " Third."}, {}, {}, std::int64_t{2}};
  script.entries.push_back(e);
  backend::MockBackend b(std::move(script));
  DatasetExample ex;
  ex.id = "f1";
  ex.question = "q";
  StopPolicyConfig cfg;
  auto ep = decode_with_policy(b, ex, "p", cfg);
  CHECK(ep.failed);
  CHECK(ep.final_answer == std::nullopt);
  CHECK(ep.generated_tokens == ep.reasoning_tokens);
  REQUIRE(!ep.wall_events.empty());
  CHECK(ep.wall_events.back()["kind"] == "failure");
}

TEST_CASE("decode_with_policy: probe stride skips boundaries") {
  std::vector<Answer> chunk_answers;
  for (int t = 1; t <= 8; ++t) chunk_answers.emplace_back("9");
  auto fx = synth::make_answer_sequence_fixture("s1", chunk_answers);
  backend::MockBackend b(fx.script);
  DatasetExample ex;
  ex.id = "s1";
  ex.question = "q";
  StopPolicyConfig cfg;
  cfg.variant = ConsistencyPolicy{2, 32};
  cfg.probe_stride = 2;  // probe chunks 2, 4, ...
  auto ep = decode_with_policy(b, ex, fx.prompt, cfg);
  REQUIRE(ep.stop_chunk.has_value());
  CHECK(*ep.stop_chunk == 3);   // second probed boundary (chunk 4, 0-based 3)
  CHECK(ep.probe_tokens == 2);  // only two probes ran
}

TEST_CASE("decode_with_policy: consistency stop matches the oracle end-to-end") {
  std::mt19937_64 rng(909);
  const char* alphabet[] = {"p", "q"};
  for (int iter = 0; iter < 60; ++iter) {
    int t_chunks = 2 + static_cast<int>(rng() % 10);
    int k = 1 + static_cast<int>(rng() % 4);
    std::vector<Answer> chunk_answers(t_chunks);
    for (auto& a : chunk_answers) {
      if (rng() % 6 == 0) {
        a = std::nullopt;
      } else {
        a = alphabet[rng() % 2];
      }
    }
    auto fx = synth::make_answer_sequence_fixture("r" + std::to_string(iter), chunk_answers);
    backend::MockBackend b(fx.script);
    DatasetExample ex;
    ex.id = fx.trace.example_id;
    ex.question = "q";
    StopPolicyConfig cfg;
    cfg.variant = ConsistencyPolicy{k, 16};
    auto ep = decode_with_policy(b, ex, fx.prompt, cfg);
    auto oracle = testutil::oracle_first_k_run(
        std::vector<std::optional<std::string>>(chunk_answers.begin(), chunk_answers.end()), k);
    if (oracle) {
      REQUIRE(ep.stop_chunk.has_value());
      CHECK(*ep.stop_chunk + 1 == *oracle);
    } else {
      CHECK_FALSE(ep.stop_chunk.has_value());
    }
  }
}
