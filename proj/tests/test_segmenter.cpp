#include <doctest.h>

#include <fstream>
#include <random>

#include "cotclip/segmenter.hpp"
#include "helpers.hpp"

using namespace cotclip;
using seg::split_sentences;
using seg::StreamSegmenter;

namespace {

std::vector<std::string> chunk_texts(const std::vector<ChunkSpan>& chunks) {
  std::vector<std::string> out;
  for (const auto& c : chunks) out.push_back(c.text);
  return out;
}

std::vector<std::string> stream_in_pieces(const std::string& text,
                                          const std::vector<std::string>& pieces) {
  StreamSegmenter s;
  std::vector<std::string> out;
  for (const auto& p : pieces)
    for (const auto& c : s.feed(p)) out.push_back(c.text);
  for (const auto& c : s.flush()) out.push_back(c.text);
  (void)text;
  return out;
}

std::string collapse(const std::string& s) { return eval::detail::collapse_ws(s); }

struct FixtureCase {
  std::string text;
  std::vector<std::string> chunks;
};

std::vector<FixtureCase> load_corpus() {
  std::ifstream in(testutil::fixture_path("segmenter_corpus.jsonl"));
  REQUIRE(in.good());
  std::vector<FixtureCase> cases;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = json::parse(line);
    cases.push_back({j.at("text").get<std::string>(),
                     j.at("chunks").get<std::vector<std::string>>()});
  }
  REQUIRE(cases.size() >= 20);
  return cases;
}

}  // namespace

TEST_CASE("split_sentences: spec'd examples") {
  CHECK(chunk_texts(split_sentences("A is 3. So B is 4.")) ==
        std::vector<std::string>{"A is 3.", "So B is 4."});
  CHECK(chunk_texts(split_sentences("n = 90 / 7.5. Done.")) ==
        std::vector<std::string>{"n = 90 / 7.5.", "Done."});
  CHECK(split_sentences("").empty());
  CHECK(split_sentences("   \t \n ").empty());
}

TEST_CASE("split_sentences matches the hand-segmented fixture corpus") {
  for (const auto& fc : load_corpus()) {
    CAPTURE(fc.text);
    CHECK(chunk_texts(split_sentences(fc.text)) == fc.chunks);
  }
}

TEST_CASE("chunks reconstruct the input modulo whitespace runs") {
  for (const auto& fc : load_corpus()) {
    auto chunks = split_sentences(fc.text);
    std::string joined;
    for (const auto& c : chunks) {
      if (!joined.empty()) joined += ' ';
      joined += c.text;
    }
    CHECK(collapse(joined) == collapse(fc.text));
  }
}

TEST_CASE("chunk invariants: contiguous indices, non-empty text") {
  for (const auto& fc : load_corpus()) {
    auto chunks = split_sentences(fc.text);
    for (size_t i = 0; i < chunks.size(); ++i) {
      CHECK(chunks[i].index == static_cast<int>(i));
      CHECK_FALSE(eval::detail::trim(chunks[i].text).empty());
    }
  }
}

TEST_CASE("streaming: feed tokens then flush") {
  StreamSegmenter s;
  CHECK(s.feed("Hello").empty());
  CHECK(s.feed(" world").empty());
  CHECK(s.feed(".").empty());  // boundary unconfirmed until lookahead or flush
  auto fin = s.flush();
  REQUIRE(fin.size() == 1);
  CHECK(fin[0].text == "Hello world.");
  CHECK(fin[0].token_count == 3);
}

TEST_CASE("streaming: decimal never split across token boundaries") {
  StreamSegmenter s;
  std::vector<std::string> got;
  for (const char* tok : {"7", ".", "5", " apples."})
    for (const auto& c : s.feed(tok)) got.push_back(c.text);
  for (const auto& c : s.flush()) got.push_back(c.text);
  CHECK(got == std::vector<std::string>{"7.5 apples."});
}

TEST_CASE("offline/online equivalence on the corpus under random splits") {
  std::mt19937_64 rng(20240607);
  for (const auto& fc : load_corpus()) {
    auto offline = chunk_texts(split_sentences(fc.text));
    for (int rep = 0; rep < 8; ++rep) {
      auto pieces = testutil::random_pieces(fc.text, rng);
      CAPTURE(fc.text);
      CHECK(stream_in_pieces(fc.text, pieces) == offline);
    }
    // degenerate splits: one char at a time, and the whole text at once
    std::vector<std::string> single;
    for (char ch : fc.text) single.emplace_back(1, ch);
    CHECK(stream_in_pieces(fc.text, single) == offline);
    CHECK(stream_in_pieces(fc.text, {fc.text}) == offline);
  }
}

TEST_CASE("offline/online equivalence on random synthetic prose") {
  std::mt19937_64 rng(99);
  const std::string words[] = {"so", "x", "y", "7.5", "the", "value", "is", "Eq.",
                               "then", "$z$", "12", "fine", "wait..."};
  const std::string enders[] = {".", "!", "?", ".", "."};
  for (int iter = 0; iter < 150; ++iter) {
    std::string text;
    int sentences = 1 + static_cast<int>(rng() % 5);
    for (int s = 0; s < sentences; ++s) {
      int len = 1 + static_cast<int>(rng() % 7);
      for (int w = 0; w < len; ++w) {
        if (!text.empty()) text += ' ';
        text += words[rng() % std::size(words)];
      }
      text += enders[rng() % std::size(enders)];
      if (s + 1 < sentences) text += (rng() % 4 == 0) ? "\n\n" : " ";
    }
    auto offline = chunk_texts(split_sentences(text));
    auto pieces = testutil::random_pieces(text, rng);
    CAPTURE(text);
    CHECK(stream_in_pieces(text, pieces) == offline);
  }
}

TEST_CASE("streaming token counts are conserved") {
  std::mt19937_64 rng(7);
  for (const auto& fc : load_corpus()) {
    auto pieces = testutil::random_pieces(fc.text, rng);
    StreamSegmenter s;
    std::int64_t emitted = 0;
    for (const auto& p : pieces)
      for (const auto& c : s.feed(p)) emitted += c.token_count;
    for (const auto& c : s.flush()) emitted += c.token_count;
    CHECK(emitted == static_cast<std::int64_t>(pieces.size()));
  }
}

TEST_CASE("custom abbreviation file overrides the default set") {
  testutil::TempDir dir("abbrev");
  {
    std::ofstream out(dir.file("ab.txt"));
    out << "Qty.\n\nfoo.\n";
  }
  auto opts = seg::load_abbreviations(dir.file("ab.txt"));
  CHECK(opts.abbreviations.size() == 2);
  auto chunks = split_sentences("Qty. 5 is enough. Done.", opts);
  CHECK(chunk_texts(chunks) == std::vector<std::string>{"Qty. 5 is enough.", "Done."});
  // default set no longer applies
  auto chunks2 = split_sentences("Use Eq. 3 now.", opts);
  CHECK(chunk_texts(chunks2) == std::vector<std::string>{"Use Eq.", "3 now."});
}

TEST_CASE("last_chunk_end tracks absolute offsets for probe prefixes") {
  StreamSegmenter s;
  std::string raw = "A is 3. So B is 4. More";
  auto c1 = s.feed(raw);
  REQUIRE(c1.size() == 2);
  CHECK(raw.substr(0, s.last_chunk_end()) == "A is 3. So B is 4.");
}
