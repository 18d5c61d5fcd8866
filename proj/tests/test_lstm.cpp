#include <doctest.h>

#include <cmath>
#include <random>

#include "cotclip/lstm.hpp"
#include "helpers.hpp"

using namespace cotclip;
using namespace cotclip::l2s;

namespace {

ActivationSequence random_seq(int dim, int t_len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  ActivationSequence seq;
  seq.example_id = "seq-" + std::to_string(seed);
  seq.dim = dim;
  for (int t = 0; t < t_len; ++t) {
    std::vector<double> v(dim);
    for (auto& x : v) x = gauss(rng);
    seq.vectors.push_back(std::move(v));
  }
  return seq;
}

StopPredictor zero_predictor(int dim, int hidden) {
  StopPredictor p = init_predictor(dim, hidden, 0);
  p.w_x.setZero();
  p.w_h.setZero();
  p.bias.setZero();
  p.head_w.setZero();
  p.head_b = 0.0;
  return p;
}

}  // namespace

TEST_CASE("all-zero parameters give p_hat = 0.5 at every step") {
  StopPredictor p = zero_predictor(3, 4);
  auto seq = random_seq(3, 6, 1);
  Vec out = predict(p, seq);
  for (int t = 0; t < out.size(); ++t) CHECK(out(t) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("eval mode is deterministic (no dropout)") {
  StopPredictor p = init_predictor(5, 8, 7);
  auto seq = random_seq(5, 9, 2);
  CHECK(predict(p, seq) == predict(p, seq));
}

TEST_CASE("train-mode dropout masks are reproducible from the seed") {
  StopPredictor p = init_predictor(4, 8, 3);
  auto seq = random_seq(4, 7, 5);
  std::mt19937_64 r1(99), r2(99), r3(100);
  auto a = lstm_forward(p, seq, true, r1);
  auto b = lstm_forward(p, seq, true, r2);
  auto c = lstm_forward(p, seq, true, r3);
  CHECK(a.p_hat == b.p_hat);
  CHECK(a.p_hat != c.p_hat);
  REQUIRE(a.mask.size() == seq.vectors.size());
}

TEST_CASE("hand recurrence, H=2, d=1, T=2, matches to 1e-12") {
  StopPredictor p = init_predictor(1, 2, 0);
  // hand-set parameters
  double wx[8] = {0.5, -0.3, 0.2, 0.7, -0.1, 0.4, 0.6, -0.2};
  for (int r = 0; r < 8; ++r) p.w_x(r, 0) = wx[r];
  double wh[8][2] = {{0.1, -0.2}, {0.3, 0.0},  {-0.4, 0.2}, {0.5, 0.1},
                     {0.2, 0.2},  {-0.1, 0.3}, {0.0, -0.3}, {0.4, 0.4}};
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 2; ++c) p.w_h(r, c) = wh[r][c];
  double bias[8] = {0.05, -0.05, 1.0, 1.0, 0.1, -0.1, 0.2, -0.2};
  for (int r = 0; r < 8; ++r) p.bias(r) = bias[r];
  p.head_w(0) = 0.8;
  p.head_w(1) = -0.6;
  p.head_b = 0.25;

  ActivationSequence seq;
  seq.example_id = "hand";
  seq.dim = 1;
  seq.vectors = {{0.9}, {-1.2}};

  // independent scalar transcription of the recurrence
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  double h[2] = {0, 0}, c[2] = {0, 0};
  double expected[2];
  for (int t = 0; t < 2; ++t) {
    double x = seq.vectors[t][0];
    double pre[8];
    for (int r = 0; r < 8; ++r)
      pre[r] = wx[r] * x + wh[r][0] * h[0] + wh[r][1] * h[1] + bias[r];
    double gi[2] = {sig(pre[0]), sig(pre[1])};
    double gf[2] = {sig(pre[2]), sig(pre[3])};
    double gg[2] = {std::tanh(pre[4]), std::tanh(pre[5])};
    double go[2] = {sig(pre[6]), sig(pre[7])};
    for (int r = 0; r < 2; ++r) {
      c[r] = gf[r] * c[r] + gi[r] * gg[r];
      h[r] = go[r] * std::tanh(c[r]);
    }
    expected[t] = sig(0.8 * h[0] - 0.6 * h[1] + 0.25);
  }

  Vec got = predict(p, seq);
  CHECK(std::abs(got(0) - expected[0]) < 1e-12);
  CHECK(std::abs(got(1) - expected[1]) < 1e-12);
}

TEST_CASE("non-finite activation input names the chunk") {
  StopPredictor p = init_predictor(2, 4, 0);
  ActivationSequence seq;
  seq.example_id = "bad";
  seq.dim = 2;
  seq.vectors = {{1.0, 2.0}, {std::nan(""), 0.0}};
  std::mt19937_64 rng(0);
  CHECK_THROWS_WITH_AS(lstm_forward(p, seq, false, rng), doctest::Contains("chunk 2"), Error);
}

TEST_CASE("BCE hand values") {
  Vec p1(1);
  p1 << 0.5;
  CHECK(bce_loss(p1, {1}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Vec p2(2);
  p2 << 1.0, 0.0;  // perfect fit after clamping
  CHECK(bce_loss(p2, {1, 0}) == doctest::Approx(0.0).epsilon(1e-10));

  Vec p3(2);
  p3 << 0.9, 0.1;
  double expected = -(std::log(0.9) + std::log(0.9)) / 2.0;
  CHECK(bce_loss(p3, {1, 0}) == doctest::Approx(expected).epsilon(1e-9));
  CHECK(bce_loss(p3, {1, 0}) == doctest::Approx(0.10536).epsilon(1e-4));
}

TEST_CASE("BCE is permutation-equivariant and non-negative") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> uni(0.01, 0.99);
  for (int iter = 0; iter < 50; ++iter) {
    int t_len = 2 + static_cast<int>(rng() % 8);
    Vec p(t_len);
    std::vector<int> labels(t_len);
    for (int t = 0; t < t_len; ++t) {
      p(t) = uni(rng);
      labels[t] = static_cast<int>(rng() % 2);
    }
    double base = bce_loss(p, labels);
    CHECK(base >= 0.0);
    std::vector<int> perm(t_len);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Vec p2(t_len);
    std::vector<int> l2(t_len);
    for (int t = 0; t < t_len; ++t) {
      p2(t) = p(perm[t]);
      l2[t] = labels[perm[t]];
    }
    CHECK(bce_loss(p2, l2) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("analytic identity: zero params, zero labels give head_b grad 0.5") {
  StopPredictor p = zero_predictor(4, 8);
  auto seq = random_seq(4, 5, 9);
  std::mt19937_64 rng(0);
  auto cache = lstm_forward(p, seq, false, rng);
  auto g = backward(p, cache, std::vector<int>(5, 0));
  CHECK(g.head_b == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("BPTT matches central finite differences (H=8, d=4, T=5)") {
  StopPredictor p = init_predictor(4, 8, 2024);
  auto seq = random_seq(4, 5, 77);
  std::vector<int> labels = {0, 0, 1, 1, 1};
  double worst = grad_check(p, seq, labels, 1e-5, 250);
  CHECK(worst < 1e-5);
}

TEST_CASE("duplicated sequence contributes exactly double when summed") {
  StopPredictor p = init_predictor(3, 6, 5);
  auto seq = random_seq(3, 4, 11);
  std::vector<int> labels = {0, 1, 1, 1};
  std::mt19937_64 rng(0);
  auto cache = lstm_forward(p, seq, false, rng);
  auto g1 = backward(p, cache, labels);
  Gradients sum = zero_gradients(p);
  accumulate(sum, g1);
  accumulate(sum, g1);
  CHECK(sum.w_x.isApprox(2.0 * g1.w_x, 1e-15));
  CHECK(sum.head_b == doctest::Approx(2.0 * g1.head_b).epsilon(1e-15));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  StopPredictor p = init_predictor(2, 4, 1);
  StopPredictor before = p;
  AdamState st = init_adam(p);
  adam_step(p, zero_gradients(p), st, AdamHyper{}, 1);
  CHECK(p.w_x == before.w_x);
  CHECK(p.head_b == before.head_b);
}

TEST_CASE("adam: first step on unit gradient moves by about -lr") {
  StopPredictor p = zero_predictor(1, 1);
  AdamState st = init_adam(p);
  Gradients g = zero_gradients(p);
  g.head_b = 1.0;
  AdamHyper hyper;
  hyper.learning_rate = 5e-4;
  adam_step(p, g, st, hyper, 1);
  // bias-corrected m=1, v=1 -> update = -lr / (1 + eps)
  CHECK(p.head_b == doctest::Approx(-5e-4).epsilon(1e-6));
}

TEST_CASE("adam runs are bit-identical given identical inputs") {
  auto run = [] {
    StopPredictor p = init_predictor(3, 5, 42);
    AdamState st = init_adam(p);
    auto seq = random_seq(3, 6, 6);
    std::vector<int> labels = {0, 0, 0, 1, 1, 1};
    std::mt19937_64 rng(0);
    for (int step = 1; step <= 25; ++step) {
      auto cache = lstm_forward(p, seq, false, rng);
      auto g = backward(p, cache, labels);
      adam_step(p, g, st, AdamHyper{}, step);
    }
    return p;
  };
  StopPredictor a = run(), b = run();
  CHECK(a.w_x == b.w_x);
  CHECK(a.w_h == b.w_h);
  CHECK(a.bias == b.bias);
  CHECK(a.head_w == b.head_w);
  CHECK(a.head_b == b.head_b);
}

TEST_CASE("predictor persistence round-trips") {
  testutil::TempDir dir("pred");
  StopPredictor p = init_predictor(6, 10, 77);
  p.tau = 0.73;
  save_predictor(p, dir.file("p.json"));
  StopPredictor q = load_predictor(dir.file("p.json"));
  CHECK(q.input_dim == 6);
  CHECK(q.hidden_dim == 10);
  CHECK(q.tau == doctest::Approx(0.73));
  CHECK(q.w_x.isApprox(p.w_x, 0.0));
  CHECK(q.w_h.isApprox(p.w_h, 0.0));
  CHECK(q.head_w.isApprox(p.head_w, 0.0));
  CHECK(q.head_b == p.head_b);
  auto seq = random_seq(6, 5, 3);
  CHECK(predict(p, seq) == predict(q, seq));
}

TEST_CASE("dimension mismatch is a setup error") {
  StopPredictor p = init_predictor(4, 8, 0);
  auto seq = random_seq(3, 5, 1);
  std::mt19937_64 rng(0);
  CHECK_THROWS_AS(lstm_forward(p, seq, false, rng), ConfigError);
}
