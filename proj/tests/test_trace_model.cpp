#include <doctest.h>

#include <fstream>
#include <random>

#include "cotclip/trace_model.hpp"
#include "helpers.hpp"

using namespace cotclip;

namespace {

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  for (const auto& l : lines) out << l << '\n';
}

ReasoningTrace random_trace(std::mt19937_64& rng) {
  ReasoningTrace t;
  t.example_id = "ex-" + std::to_string(rng() % 1000000);
  int n = 1 + static_cast<int>(rng() % 6);
  std::int64_t sum = 0;
  for (int i = 0; i < n; ++i) {
    std::int64_t tokens = rng() % 20;
    sum += tokens;
    t.chunks.push_back(ChunkSpan{i, "Step " + std::to_string(i) + " does x.", tokens});
  }
  t.total_tokens = sum + static_cast<std::int64_t>(rng() % 5);
  if (rng() % 2) t.full_answer = std::to_string(rng() % 100);
  return t;
}

}  // namespace

TEST_CASE("read_dataset returns examples in file order") {
  testutil::TempDir dir("dataset");
  write_lines(dir.file("d.jsonl"),
              {R"({"id":"a","question":"What is 1+1?","gold_answer":"2","task_tag":"gsm8k"})",
               R"({"id":"b","question":"Capital of France?","gold_answer":"paris","task_tag":"nq"})",
               R"({"id":"c","question":"2*3?","gold_answer":null,"task_tag":"gsm8k"})"});
  auto ds = read_dataset(dir.file("d.jsonl"));
  REQUIRE(ds.size() == 3);
  CHECK(ds[0].id == "a");
  CHECK(ds[1].id == "b");
  CHECK(ds[2].gold_answer == std::nullopt);
}

TEST_CASE("read_dataset: empty file gives empty list") {
  testutil::TempDir dir("dataset");
  write_lines(dir.file("d.jsonl"), {});
  CHECK(read_dataset(dir.file("d.jsonl")).empty());
}

TEST_CASE("read_dataset: malformed line reported with its line number") {
  testutil::TempDir dir("dataset");
  write_lines(dir.file("d.jsonl"),
              {R"({"id":"a","question":"q1","gold_answer":null,"task_tag":"t"})",
               R"({"id":"b","gold_answer":null,"task_tag":"t"})"});
  CHECK_THROWS_WITH_AS(read_dataset(dir.file("d.jsonl")),
                       doctest::Contains("line 2"), ParseError);
}

TEST_CASE("read_dataset: duplicate id rejected by name") {
  testutil::TempDir dir("dataset");
  write_lines(dir.file("d.jsonl"),
              {R"({"id":"dup","question":"q1","gold_answer":null,"task_tag":"t"})",
               R"({"id":"dup","question":"q2","gold_answer":null,"task_tag":"t"})"});
  CHECK_THROWS_WITH_AS(read_dataset(dir.file("d.jsonl")),
                       doctest::Contains("dup"), ParseError);
}

TEST_CASE("trace round-trips bit-for-bit") {
  testutil::TempDir dir("trace");
  ReasoningTrace t;
  t.example_id = "ex1";
  t.chunks = {ChunkSpan{0, "A is 3.", 4}, ChunkSpan{1, "So B is 4.", 5}};
  t.full_answer = "4";
  t.total_tokens = 12;
  write_trace(t, dir.file("t.jsonl"));
  CHECK(read_trace(dir.file("t.jsonl")) == t);
}

TEST_CASE("trace with zero chunks rejected on write") {
  testutil::TempDir dir("trace");
  ReasoningTrace t;
  t.example_id = "empty";
  CHECK_THROWS_AS(write_trace(t, dir.file("t.jsonl")), InvariantError);
}

TEST_CASE("write_trace emits exactly one JSON record") {
  testutil::TempDir dir("trace");
  ReasoningTrace t;
  t.example_id = "ex";
  t.chunks = {ChunkSpan{0, "First.", 2}, ChunkSpan{1, "Second.", 2}};
  t.total_tokens = 4;
  write_trace(t, dir.file("t.jsonl"));
  std::ifstream in(dir.file("t.jsonl"));
  std::string line;
  int records = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++records;
  CHECK(records == 1);
}

TEST_CASE("trace read names the violated invariant") {
  testutil::TempDir dir("trace");
  write_lines(dir.file("bad.jsonl"),
              {R"({"example_id":"x","chunks":[{"index":0,"text":"A.","token_count":9}],)"
               R"("full_answer":null,"total_tokens":3})"});
  CHECK_THROWS_WITH_AS(read_traces(dir.file("bad.jsonl")),
                       doctest::Contains("total_tokens"), ParseError);
}

TEST_CASE("serialization round-trip holds over randomized instances") {
  testutil::TempDir dir("roundtrip");
  std::mt19937_64 rng(42);
  for (int iter = 0; iter < 50; ++iter) {
    ReasoningTrace t = random_trace(rng);
    CHECK(trace_from_json(json::parse(to_json(t).dump())) == t);

    ActivationSequence a;
    a.example_id = t.example_id;
    a.dim = 1 + static_cast<int>(rng() % 8);
    std::normal_distribution<double> gauss;
    for (size_t i = 0; i < t.chunks.size(); ++i) {
      std::vector<double> v(a.dim);
      for (auto& x : v) x = gauss(rng);
      a.vectors.push_back(std::move(v));
    }
    CHECK(activations_from_json(json::parse(to_json(a).dump())) == a);

    EpisodeResult e;
    e.example_id = t.example_id;
    e.policy_name = "consistency";
    if (rng() % 2) e.stop_chunk = static_cast<int>(rng() % t.chunks.size());
    e.final_answer = t.full_answer;
    e.generated_tokens = 1 + static_cast<std::int64_t>(rng() % 500);
    e.reasoning_tokens = e.generated_tokens / 2;
    e.probe_tokens = rng() % 100;
    e.wall_events.push_back(json{{"chunk", 0}, {"probe_answer", nullptr},
                                 {"p_hat", nullptr}, {"decision", "continue"}});
    CHECK(episode_from_json(json::parse(to_json(e).dump())) == e);
  }
}

TEST_CASE("activation files validate vector lengths") {
  testutil::TempDir dir("act");
  write_lines(dir.file("a.jsonl"),
              {R"({"example_id":"x","dim":3,"vectors":[[1.0,2.0,3.0],[1.0,2.0]]})"});
  CHECK_THROWS_WITH_AS(read_activations(dir.file("a.jsonl")),
                       doctest::Contains("length dim"), ParseError);
}

TEST_CASE("episode file round-trip preserves all fields") {
  testutil::TempDir dir("ep");
  EpisodeResult e;
  e.example_id = "ex";
  e.policy_name = "none";
  e.final_answer = "12";
  e.generated_tokens = 40;
  e.reasoning_tokens = 30;
  e.truncated = true;
  write_episodes({e}, dir.file("e.jsonl"));
  auto back = read_episodes(dir.file("e.jsonl"));
  REQUIRE(back.size() == 1);
  CHECK(back[0] == e);
}
