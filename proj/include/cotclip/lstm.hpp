#pragma once

// Single-layer LSTM with a sigmoid stopping head, written from scratch at
// double precision: forward pass with inverted dropout, BCE loss,
// backpropagation through time, Adam, and a finite-difference gradient
// checker. Gate order is i, f, g (cell candidate), o stacked row-wise.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cotclip/errors.hpp"
#include "cotclip/trace_model.hpp"

namespace cotclip::l2s {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct StopPredictor {
  int input_dim = 0;
  int hidden_dim = 128;
  double dropout_rate = 0.1;
  double tau = 0.5;
  std::uint64_t seed = 0;
  Mat w_x;      // 4H x d
  Mat w_h;      // 4H x H
  Vec bias;     // 4H
  Vec head_w;   // H
  double head_b = 0.0;
};

/// Conventional initialization (recorded in the predictor file): weights
/// uniform in +-1/sqrt(H), biases zero except the forget gate block at 1.
inline StopPredictor init_predictor(int input_dim, int hidden_dim, std::uint64_t seed,
                                    double dropout_rate = 0.1) {
  if (input_dim < 1 || hidden_dim < 1)
    throw ConfigError("predictor dims must be positive");
  StopPredictor p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.dropout_rate = dropout_rate;
  p.seed = seed;
  const int h4 = 4 * hidden_dim;
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  std::uniform_real_distribution<double> uni(-bound, bound);
  auto fill = [&](Mat& m, int rows, int cols) {
    m.resize(rows, cols);
    for (int c = 0; c < cols; ++c)
      for (int r = 0; r < rows; ++r) m(r, c) = uni(rng);
  };
  fill(p.w_x, h4, input_dim);
  fill(p.w_h, h4, hidden_dim);
  p.bias = Vec::Zero(h4);
  p.bias.segment(hidden_dim, hidden_dim).setOnes();  // forget gate
  p.head_w.resize(hidden_dim);
  for (int r = 0; r < hidden_dim; ++r) p.head_w(r) = uni(rng);
  p.head_b = 0.0;
  return p;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct LstmState {
  Vec h, c;
};

inline LstmState initial_state(const StopPredictor& p) {
  return LstmState{Vec::Zero(p.hidden_dim), Vec::Zero(p.hidden_dim)};
}

struct StepActivations {
  Vec i, f, g, o, c, tc, h;
};

/// One recurrence step. Shared by training, inference and the per-chunk
/// online decision path.
inline StepActivations lstm_step(const StopPredictor& p, const Vec& x, const LstmState& prev) {
  const int h = p.hidden_dim;
  Vec pre = p.w_x * x + p.w_h * prev.h + p.bias;
  StepActivations a;
  a.i = pre.segment(0, h).unaryExpr([](double v) { return sigmoid(v); });
  a.f = pre.segment(h, h).unaryExpr([](double v) { return sigmoid(v); });
  a.g = pre.segment(2 * h, h).array().tanh();
  a.o = pre.segment(3 * h, h).unaryExpr([](double v) { return sigmoid(v); });
  a.c = a.f.cwiseProduct(prev.c) + a.i.cwiseProduct(a.g);
  a.tc = a.c.array().tanh();
  a.h = a.o.cwiseProduct(a.tc);
  return a;
}

inline double head_logit(const StopPredictor& p, const Vec& z) {
  return p.head_w.dot(z) + p.head_b;
}

struct ForwardCache {
  std::vector<Vec> x;
  std::vector<StepActivations> steps;
  std::vector<Vec> mask;  // inverted-dropout masks; empty in eval mode
  std::vector<Vec> z;     // head input (h after dropout)
  Vec p_hat;
};

/// Full-sequence forward pass. Zero initial hidden/cell state; dropout on
/// z_t only in train mode, inverted scaling 1/(1-rate).
inline ForwardCache lstm_forward(const StopPredictor& p, const ActivationSequence& seq,
                                 bool train_mode, std::mt19937_64& rng) {
  if (seq.dim != p.input_dim)
    throw ConfigError("activation dim " + std::to_string(seq.dim) +
                      " does not match predictor input dim " + std::to_string(p.input_dim));
  const int t_len = static_cast<int>(seq.vectors.size());
  ForwardCache cache;
  cache.p_hat.resize(t_len);
  LstmState state = initial_state(p);
  std::bernoulli_distribution keep(1.0 - p.dropout_rate);
  for (int t = 0; t < t_len; ++t) {
    Vec x = Eigen::Map<const Vec>(seq.vectors[t].data(), seq.dim);
    if (!x.allFinite())
      throw Error("non-finite activation input at chunk " + std::to_string(t + 1) +
                  " of example '" + seq.example_id + "'");
    StepActivations a = lstm_step(p, x, state);
    Vec z = a.h;
    if (train_mode && p.dropout_rate > 0.0) {
      Vec mask(p.hidden_dim);
      for (int r = 0; r < p.hidden_dim; ++r) mask(r) = keep(rng) ? 1.0 : 0.0;
      z = a.h.cwiseProduct(mask) / (1.0 - p.dropout_rate);
      cache.mask.push_back(std::move(mask));
    }
    cache.p_hat(t) = sigmoid(head_logit(p, z));
    state.h = a.h;
    state.c = a.c;
    cache.x.push_back(std::move(x));
    cache.steps.push_back(std::move(a));
    cache.z.push_back(std::move(z));
  }
  return cache;
}

/// Eval-mode convenience: deterministic, no dropout.
inline Vec predict(const StopPredictor& p, const ActivationSequence& seq) {
  std::mt19937_64 rng(0);
  return lstm_forward(p, seq, /*train_mode=*/false, rng).p_hat;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

inline constexpr double kBceEps = 1e-12;

/// Mean binary cross-entropy over the sequence (the 1/T factor), with
/// predictions clamped to [eps, 1-eps].
inline double bce_loss(const Vec& p_hat, const std::vector<int>& labels) {
  if (static_cast<size_t>(p_hat.size()) != labels.size())
    throw InvariantError("bce_loss: prediction / label length mismatch");
  if (labels.empty()) throw InvariantError("bce_loss: empty sequence");
  double total = 0.0;
  for (size_t t = 0; t < labels.size(); ++t) {
    double q = std::min(1.0 - kBceEps, std::max(kBceEps, p_hat(static_cast<int>(t))));
    total += labels[t] ? -std::log(q) : -std::log(1.0 - q);
  }
  return total / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Backpropagation through time
// ---------------------------------------------------------------------------

struct Gradients {
  Mat w_x, w_h;
  Vec bias, head_w;
  double head_b = 0.0;
};

inline Gradients zero_gradients(const StopPredictor& p) {
  Gradients g;
  g.w_x = Mat::Zero(4 * p.hidden_dim, p.input_dim);
  g.w_h = Mat::Zero(4 * p.hidden_dim, p.hidden_dim);
  g.bias = Vec::Zero(4 * p.hidden_dim);
  g.head_w = Vec::Zero(p.hidden_dim);
  g.head_b = 0.0;
  return g;
}

inline void accumulate(Gradients& into, const Gradients& g, double scale = 1.0) {
  into.w_x += scale * g.w_x;
  into.w_h += scale * g.w_h;
  into.bias += scale * g.bias;
  into.head_w += scale * g.head_w;
  into.head_b += scale * g.head_b;
}

/// Gradients of the per-sequence mean BCE loss w.r.t. every parameter,
/// reusing the forward cache (and its dropout masks, when present).
inline Gradients backward(const StopPredictor& p, const ForwardCache& cache,
                          const std::vector<int>& labels) {
  const int t_len = static_cast<int>(cache.steps.size());
  if (static_cast<size_t>(t_len) != labels.size())
    throw InvariantError("backward: cache / label length mismatch");
  const int h = p.hidden_dim;
  Gradients g = zero_gradients(p);
  Vec dh_next = Vec::Zero(h);
  Vec dc_next = Vec::Zero(h);
  const double inv_t = 1.0 / static_cast<double>(t_len);
  const bool dropped = !cache.mask.empty();
  for (int t = t_len - 1; t >= 0; --t) {
    const StepActivations& a = cache.steps[t];
    // d(BCE)/d(logit) = p_hat - label, averaged by the 1/T factor
    double dlogit = (cache.p_hat(t) - labels[t]) * inv_t;
    g.head_w += dlogit * cache.z[t];
    g.head_b += dlogit;
    Vec dz = p.head_w * dlogit;
    if (dropped) dz = dz.cwiseProduct(cache.mask[t]) / (1.0 - p.dropout_rate);
    Vec dh = dz + dh_next;
    Vec do_ = dh.cwiseProduct(a.tc);
    Vec dc = dh.cwiseProduct(a.o).cwiseProduct(
                 (1.0 - a.tc.array().square()).matrix()) +
             dc_next;
    const Vec& c_prev = t > 0 ? cache.steps[t - 1].c : Vec(Vec::Zero(h));
    Vec di = dc.cwiseProduct(a.g);
    Vec dg = dc.cwiseProduct(a.i);
    Vec df = dc.cwiseProduct(c_prev);
    dc_next = dc.cwiseProduct(a.f);
    Vec dpre(4 * h);
    dpre.segment(0, h) = di.cwiseProduct(a.i).cwiseProduct((1.0 - a.i.array()).matrix());
    dpre.segment(h, h) = df.cwiseProduct(a.f).cwiseProduct((1.0 - a.f.array()).matrix());
    dpre.segment(2 * h, h) = dg.cwiseProduct((1.0 - a.g.array().square()).matrix());
    dpre.segment(3 * h, h) = do_.cwiseProduct(a.o).cwiseProduct((1.0 - a.o.array()).matrix());
    const Vec& h_prev = t > 0 ? cache.steps[t - 1].h : Vec(Vec::Zero(h));
    g.w_x += dpre * cache.x[t].transpose();
    g.w_h += dpre * h_prev.transpose();
    g.bias += dpre;
    dh_next = p.w_h.transpose() * dpre;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamHyper {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Gradients m, v;
};

inline AdamState init_adam(const StopPredictor& p) {
  return AdamState{zero_gradients(p), zero_gradients(p)};
}

namespace detail {

inline void adam_update(double& param, double grad, double& m, double& v,
                        const AdamHyper& h, double bc1, double bc2) {
  m = h.beta1 * m + (1.0 - h.beta1) * grad;
  v = h.beta2 * v + (1.0 - h.beta2) * grad * grad;
  param -= h.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + h.eps);
}

template <typename EigenT>
void adam_tensor(EigenT& param, const EigenT& grad, EigenT& m, EigenT& v, const AdamHyper& h,
                 double bc1, double bc2) {
  for (Eigen::Index i = 0; i < param.size(); ++i)
    adam_update(param.data()[i], grad.data()[i], m.data()[i], v.data()[i], h, bc1, bc2);
}

}  // namespace detail

/// Standard bias-corrected Adam step; `t` counts update steps from 1.
inline void adam_step(StopPredictor& p, const Gradients& g, AdamState& state,
                      const AdamHyper& hyper, std::int64_t t) {
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
  detail::adam_tensor(p.w_x, g.w_x, state.m.w_x, state.v.w_x, hyper, bc1, bc2);
  detail::adam_tensor(p.w_h, g.w_h, state.m.w_h, state.v.w_h, hyper, bc1, bc2);
  detail::adam_tensor(p.bias, g.bias, state.m.bias, state.v.bias, hyper, bc1, bc2);
  detail::adam_tensor(p.head_w, g.head_w, state.m.head_w, state.v.head_w, hyper, bc1, bc2);
  detail::adam_update(p.head_b, g.head_b, state.m.head_b, state.v.head_b, hyper, bc1, bc2);
}

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

/// Central finite differences against BPTT on a subsample of coordinates
/// (>= 200, or all when fewer). Double precision, dropout disabled. The
/// relative error denominator is floored to stabilize near-zero gradients.
inline double grad_check(StopPredictor pred, const ActivationSequence& seq,
                         const std::vector<int>& labels, double step = 1e-5,
                         int min_coords = 200, std::uint64_t sample_seed = 1234) {
  std::mt19937_64 rng(0);
  auto loss_at = [&](const StopPredictor& p) {
    auto cache = lstm_forward(p, seq, /*train_mode=*/false, rng);
    return bce_loss(cache.p_hat, labels);
  };
  auto cache = lstm_forward(pred, seq, /*train_mode=*/false, rng);
  Gradients analytic = backward(pred, cache, labels);

  struct Coord {
    double* param;
    double analytic;
  };
  std::vector<Coord> coords;
  auto add_tensor = [&](double* data, const double* grad, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) coords.push_back({data + i, grad[i]});
  };
  add_tensor(pred.w_x.data(), analytic.w_x.data(), pred.w_x.size());
  add_tensor(pred.w_h.data(), analytic.w_h.data(), pred.w_h.size());
  add_tensor(pred.bias.data(), analytic.bias.data(), pred.bias.size());
  add_tensor(pred.head_w.data(), analytic.head_w.data(), pred.head_w.size());
  coords.push_back({&pred.head_b, analytic.head_b});

  std::vector<size_t> order(coords.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 srng(sample_seed);
  std::shuffle(order.begin(), order.end(), srng);
  size_t n_check = std::min(coords.size(), static_cast<size_t>(std::max(min_coords, 1)));

  double worst = 0.0;
  for (size_t k = 0; k < n_check; ++k) {
    Coord& c = coords[order[k]];
    const double saved = *c.param;
    *c.param = saved + step;
    double up = loss_at(pred);
    *c.param = saved - step;
    double down = loss_at(pred);
    *c.param = saved;
    double numeric = (up - down) / (2.0 * step);
    double rel = std::abs(c.analytic - numeric) /
                 std::max(1e-5, std::abs(c.analytic) + std::abs(numeric));
    worst = std::max(worst, rel);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Predictor persistence (single JSON document)
// ---------------------------------------------------------------------------

namespace detail {

inline json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Mat mat_from_json(const json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) return Mat(0, 0);
  Mat m(rows.size(), rows[0].size());
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size()) throw ParseError("ragged matrix in predictor file");
    for (size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  }
  return m;
}

inline json vec_to_json(const Vec& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Vec vec_from_json(const json& j) {
  const auto vals = j.get<std::vector<double>>();
  Vec v(vals.size());
  for (size_t i = 0; i < vals.size(); ++i) v(i) = vals[i];
  return v;
}

}  // namespace detail

inline void save_predictor(const StopPredictor& p, const std::string& path) {
  json doc{{"input_dim", p.input_dim},
           {"hidden_dim", p.hidden_dim},
           {"dropout_rate", p.dropout_rate},
           {"tau", p.tau},
           {"seed", p.seed},
           {"gate_order", "ifgo"},
           {"init", "uniform(+-1/sqrt(H)); forget bias 1.0; zero h0/c0"},
           {"w_x", detail::mat_to_json(p.w_x)},
           {"w_h", detail::mat_to_json(p.w_h)},
           {"bias", detail::vec_to_json(p.bias)},
           {"head_w", detail::vec_to_json(p.head_w)},
           {"head_b", p.head_b}};
  auto out = cotclip::detail::open_out(path);
  out << doc.dump(2) << '\n';
}

inline StopPredictor load_predictor(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open predictor file " + path);
  json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError("bad predictor file " + path + ": " + ex.what());
  }
  StopPredictor p;
  p.input_dim = doc.at("input_dim").get<int>();
  p.hidden_dim = doc.at("hidden_dim").get<int>();
  p.dropout_rate = doc.at("dropout_rate").get<double>();
  p.tau = doc.at("tau").get<double>();
  p.seed = doc.at("seed").get<std::uint64_t>();
  p.w_x = detail::mat_from_json(doc.at("w_x"));
  p.w_h = detail::mat_from_json(doc.at("w_h"));
  p.bias = detail::vec_from_json(doc.at("bias"));
  p.head_w = detail::vec_from_json(doc.at("head_w"));
  p.head_b = doc.at("head_b").get<double>();
  if (p.tau <= 0.0 || p.tau >= 1.0)
    throw InvariantError("predictor tau must lie in (0,1)");
  if (!p.w_x.allFinite() || !p.w_h.allFinite() || !p.bias.allFinite() ||
      !p.head_w.allFinite() || !std::isfinite(p.head_b))
    throw InvariantError("predictor parameters must be finite");
  if (p.w_x.rows() != 4 * p.hidden_dim || p.w_x.cols() != p.input_dim ||
      p.w_h.rows() != 4 * p.hidden_dim || p.w_h.cols() != p.hidden_dim ||
      p.bias.size() != 4 * p.hidden_dim || p.head_w.size() != p.hidden_dim)
    throw InvariantError("predictor parameter shapes are inconsistent");
  return p;
}

}  // namespace cotclip::l2s
