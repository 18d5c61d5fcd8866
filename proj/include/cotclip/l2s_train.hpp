#pragma once

// Training for the learned stopper: self-supervised label construction from
// convergence records, mini-batch training of the LSTM head (padding + loss
// masking over variable-length sequences, Adam, seeded shuffling/dropout),
// and validation threshold tuning.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "cotclip/lstm.hpp"
#include "cotclip/probe.hpp"

namespace cotclip::l2s {

struct LabeledSequence {
  ActivationSequence activations;
  std::vector<int> labels;  // chunk-indexed 1..T; non-decreasing, last entry 1
};

/// Chunk labels from a convergence record: labels[t-1] = 1 iff the probed
/// answer from chunk t onward always equals the self-predicted full answer.
/// The empty-prefix probe (index 0) does not participate; a stopper cannot
/// stop before chunk 1.
inline std::vector<int> build_labels(const std::vector<eval::Answer>& prefix_answers,
                                     const eval::Answer& full_answer) {
  if (prefix_answers.size() < 2)
    throw InvariantError("build_labels: need at least one chunk-indexed probe");
  if (prefix_answers.back() != full_answer)
    throw InvariantError("build_labels: last prefix answer must equal full_answer");
  const size_t t_len = prefix_answers.size() - 1;
  std::vector<int> labels(t_len, 0);
  size_t earliest = t_len;  // 1-based chunk index of the stable point
  while (earliest > 1 && prefix_answers[earliest - 1] == full_answer) --earliest;
  for (size_t t = earliest; t <= t_len; ++t) labels[t - 1] = 1;
  return labels;
}

inline void validate(const LabeledSequence& s) {
  validate(s.activations);
  if (s.labels.size() != s.activations.vectors.size())
    throw InvariantError("labeled sequence '" + s.activations.example_id +
                         "': labels must align with activation vectors");
  if (s.labels.empty() || s.labels.back() != 1)
    throw InvariantError("labeled sequence '" + s.activations.example_id +
                         "': final label must be 1");
  for (size_t t = 1; t < s.labels.size(); ++t)
    if (s.labels[t] < s.labels[t - 1])
      throw InvariantError("labeled sequence '" + s.activations.example_id +
                           "': labels must be non-decreasing");
}

struct TrainHyper {
  int epochs = 200;
  int batch_size = 32;
  double learning_rate = 5e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
};

struct TrainResult {
  StopPredictor predictor;
  std::vector<double> epoch_loss;  // mean per-sequence loss, one entry per epoch
};

namespace detail {

// Forward + BPTT over one padded batch. Columns are independent sequences;
// steps past a sequence's length receive zero loss gradient, so padding adds
// nothing to any parameter gradient.
struct BatchStep {
  Mat x, i, f, g, o, c, tc, h_prev, z, mask;
  Eigen::RowVectorXd dlogit;
};

inline double batch_pass(const StopPredictor& p, const std::vector<const LabeledSequence*>& batch,
                         bool train_mode, std::mt19937_64& dropout_rng, Gradients* out_grads,
                         double* out_loss_sum) {
  const int b_n = static_cast<int>(batch.size());
  const int h = p.hidden_dim;
  int t_max = 0;
  for (const auto* s : batch)
    t_max = std::max(t_max, static_cast<int>(s->labels.size()));

  std::vector<BatchStep> steps;
  steps.reserve(t_max);
  Mat h_state = Mat::Zero(h, b_n);
  Mat c_state = Mat::Zero(h, b_n);
  std::vector<double> seq_loss(b_n, 0.0);
  std::bernoulli_distribution keep(1.0 - p.dropout_rate);

  for (int t = 0; t < t_max; ++t) {
    BatchStep st;
    st.x = Mat::Zero(p.input_dim, b_n);
    for (int j = 0; j < b_n; ++j)
      if (t < static_cast<int>(batch[j]->labels.size()))
        st.x.col(j) = Eigen::Map<const Vec>(batch[j]->activations.vectors[t].data(), p.input_dim);
    Mat pre = (p.w_x * st.x + p.w_h * h_state).colwise() + p.bias;
    st.i = pre.middleRows(0, h).unaryExpr([](double v) { return sigmoid(v); });
    st.f = pre.middleRows(h, h).unaryExpr([](double v) { return sigmoid(v); });
    st.g = pre.middleRows(2 * h, h).array().tanh();
    st.o = pre.middleRows(3 * h, h).unaryExpr([](double v) { return sigmoid(v); });
    st.h_prev = h_state;
    c_state = st.f.cwiseProduct(c_state) + st.i.cwiseProduct(st.g);
    st.c = c_state;
    st.tc = c_state.array().tanh();
    h_state = st.o.cwiseProduct(st.tc);
    if (train_mode && p.dropout_rate > 0.0) {
      st.mask.resize(h, b_n);
      for (int j = 0; j < b_n; ++j)
        for (int r = 0; r < h; ++r) st.mask(r, j) = keep(dropout_rng) ? 1.0 : 0.0;
      st.z = h_state.cwiseProduct(st.mask) / (1.0 - p.dropout_rate);
    } else {
      st.z = h_state;
    }
    Eigen::RowVectorXd logits = (p.head_w.transpose() * st.z).array() + p.head_b;
    st.dlogit = Eigen::RowVectorXd::Zero(b_n);
    for (int j = 0; j < b_n; ++j) {
      const auto& labels = batch[j]->labels;
      if (t >= static_cast<int>(labels.size())) continue;
      double p_hat = sigmoid(logits(j));
      double q = std::min(1.0 - kBceEps, std::max(kBceEps, p_hat));
      seq_loss[j] += (labels[t] ? -std::log(q) : -std::log(1.0 - q)) /
                     static_cast<double>(labels.size());
      st.dlogit(j) = (p_hat - labels[t]) /
                     (static_cast<double>(labels.size()) * static_cast<double>(b_n));
    }
    steps.push_back(std::move(st));
  }

  double loss_sum = std::accumulate(seq_loss.begin(), seq_loss.end(), 0.0);
  if (out_loss_sum) *out_loss_sum = loss_sum;
  if (!out_grads) return loss_sum / b_n;

  Gradients g = zero_gradients(p);
  Mat dh_next = Mat::Zero(h, b_n);
  Mat dc_next = Mat::Zero(h, b_n);
  for (int t = t_max - 1; t >= 0; --t) {
    const BatchStep& st = steps[t];
    g.head_w += st.z * st.dlogit.transpose();
    g.head_b += st.dlogit.sum();
    Mat dz = p.head_w * st.dlogit;
    if (st.mask.size() > 0) dz = dz.cwiseProduct(st.mask) / (1.0 - p.dropout_rate);
    Mat dh = dz + dh_next;
    Mat do_ = dh.cwiseProduct(st.tc);
    Mat dc = dh.cwiseProduct(st.o).cwiseProduct((1.0 - st.tc.array().square()).matrix()) + dc_next;
    Mat c_prev = t > 0 ? steps[t - 1].c : Mat::Zero(h, b_n);
    Mat di = dc.cwiseProduct(st.g);
    Mat dg = dc.cwiseProduct(st.i);
    Mat df = dc.cwiseProduct(c_prev);
    dc_next = dc.cwiseProduct(st.f);
    Mat dpre(4 * h, b_n);
    dpre.middleRows(0, h) = di.cwiseProduct(st.i).cwiseProduct((1.0 - st.i.array()).matrix());
    dpre.middleRows(h, h) = df.cwiseProduct(st.f).cwiseProduct((1.0 - st.f.array()).matrix());
    dpre.middleRows(2 * h, h) = dg.cwiseProduct((1.0 - st.g.array().square()).matrix());
    dpre.middleRows(3 * h, h) = do_.cwiseProduct(st.o).cwiseProduct((1.0 - st.o.array()).matrix());
    g.w_x += dpre * st.x.transpose();
    g.w_h += dpre * st.h_prev.transpose();
    g.bias += dpre.rowwise().sum();
    dh_next = p.w_h.transpose() * dpre;
  }
  *out_grads = std::move(g);
  return loss_sum / b_n;
}

}  // namespace detail

/// Mini-batch training: epoch-level shuffling and dropout masks flow from the
/// single seed; returns the final-epoch parameters (tau untuned) and the
/// per-epoch loss history.
inline TrainResult train(const std::vector<LabeledSequence>& dataset, const TrainHyper& hyper,
                         int hidden_dim = 128, double dropout_rate = 0.1) {
  if (dataset.empty()) throw ConfigError("train: dataset is empty");
  if (hyper.epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (hyper.learning_rate <= 0.0) throw ConfigError("train: learning rate must be positive");
  if (hyper.batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  const int dim = dataset.front().activations.dim;
  for (const auto& s : dataset) {
    validate(s);
    if (s.activations.dim != dim)
      throw ConfigError("train: all sequences must share one activation dim");
  }

  TrainResult result;
  result.predictor = init_predictor(dim, hidden_dim, hyper.seed, dropout_rate);
  AdamHyper adam{hyper.learning_rate, hyper.adam_beta1, hyper.adam_beta2, hyper.adam_eps};
  AdamState opt = init_adam(result.predictor);
  std::mt19937_64 shuffle_rng(hyper.seed ^ 0x9e3779b97f4a7c15ull);
  std::mt19937_64 dropout_rng(hyper.seed ^ 0xc2b2ae3d27d4eb4full);

  std::vector<size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::int64_t step_count = 0;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss_sum = 0.0;
    for (size_t pos = 0; pos < order.size(); pos += hyper.batch_size) {
      std::vector<const LabeledSequence*> batch;
      for (size_t j = pos; j < std::min(order.size(), pos + hyper.batch_size); ++j)
        batch.push_back(&dataset[order[j]]);
      Gradients grads;
      double batch_loss_sum = 0.0;
      detail::batch_pass(result.predictor, batch, /*train_mode=*/true, dropout_rng, &grads,
                         &batch_loss_sum);
      epoch_loss_sum += batch_loss_sum;
      adam_step(result.predictor, grads, opt, adam, ++step_count);
    }
    result.epoch_loss.push_back(epoch_loss_sum / static_cast<double>(dataset.size()));
  }
  return result;
}

/// Per-chunk accuracy of thresholded predictions (p >= 0.5) against labels,
/// dropout disabled.
inline double label_accuracy(const StopPredictor& p, const std::vector<LabeledSequence>& data) {
  std::int64_t correct = 0, total = 0;
  for (const auto& s : data) {
    Vec p_hat = predict(p, s.activations);
    for (size_t t = 0; t < s.labels.size(); ++t) {
      bool predicted = p_hat(static_cast<int>(t)) >= 0.5;
      correct += predicted == (s.labels[t] == 1);
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

struct ThresholdOutcome {
  double tau = 0.5;
  double answer_match_rate = 1.0;  // vs the full-chain answer
  double mean_stop_chunk = 0.0;
};

/// Simulate stopping on validation sequences for each candidate tau and pick
/// the one maximizing chunk savings subject to an answer-match drop of at
/// most epsilon (the full chain matches itself by construction). Ties break
/// toward larger tau; if no candidate meets the constraint, the tau with the
/// smallest drop wins (larger tau on ties).
inline ThresholdOutcome tune_threshold(
    const StopPredictor& pred,
    const std::vector<std::pair<LabeledSequence, probe::ConvergenceRecord>>& validation,
    const std::vector<double>& grid, double epsilon) {
  if (validation.empty()) throw ConfigError("tune_threshold: validation set is empty");
  if (grid.empty()) throw ConfigError("tune_threshold: candidate grid is empty");
  for (double tau : grid)
    if (tau <= 0.0 || tau >= 1.0)
      throw ConfigError("tune_threshold: grid values must lie in (0,1)");

  std::vector<Vec> p_hats;
  p_hats.reserve(validation.size());
  for (const auto& [seq, rec] : validation) {
    if (rec.prefix_answers.size() != seq.activations.vectors.size() + 1)
      throw ConfigError("tune_threshold: record for '" + rec.example_id +
                        "' does not align with its activation sequence");
    p_hats.push_back(predict(pred, seq.activations));
  }

  std::optional<ThresholdOutcome> best;
  bool best_feasible = false;
  for (double tau : grid) {
    double matches = 0.0;
    double stop_sum = 0.0;
    for (size_t v = 0; v < validation.size(); ++v) {
      const auto& rec = validation[v].second;
      const Vec& p_hat = p_hats[v];
      const int t_len = static_cast<int>(p_hat.size());
      int stop = t_len;  // no stop: full chain
      for (int t = 0; t < t_len; ++t) {
        if (p_hat(t) >= tau) {  // inclusive threshold
          stop = t + 1;
          break;
        }
      }
      const eval::Answer& at_stop = rec.prefix_answers[stop];
      matches += at_stop == rec.full_answer ? 1.0 : 0.0;
      stop_sum += stop;
    }
    ThresholdOutcome cand;
    cand.tau = tau;
    cand.answer_match_rate = matches / static_cast<double>(validation.size());
    cand.mean_stop_chunk = stop_sum / static_cast<double>(validation.size());
    bool feasible = (1.0 - cand.answer_match_rate) <= epsilon + 1e-12;
    auto better = [&]() {
      if (!best) return true;
      if (feasible != best_feasible) return feasible;
      if (feasible) {
        if (cand.mean_stop_chunk < best->mean_stop_chunk - 1e-12) return true;
        if (cand.mean_stop_chunk > best->mean_stop_chunk + 1e-12) return false;
        return cand.tau > best->tau;
      }
      if (cand.answer_match_rate > best->answer_match_rate + 1e-12) return true;
      if (cand.answer_match_rate < best->answer_match_rate - 1e-12) return false;
      return cand.tau > best->tau;
    };
    if (better()) {
      best = cand;
      best_feasible = feasible;
    }
  }
  return *best;
}

}  // namespace cotclip::l2s
