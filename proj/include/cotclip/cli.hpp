#pragma once

// Command-line entry point: configuration loading, backend construction, the
// worker pool, and the end-to-end pipelines wiring the other modules.
// Subcommands: probe-acr, run, train-stop, tune-threshold, eval, report,
// selftest. Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <atomic>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "cotclip/eval_report.hpp"
#include "cotclip/http_backend.hpp"
#include "cotclip/l2s_train.hpp"
#include "cotclip/mock_backend.hpp"
#include "cotclip/policy.hpp"
#include "cotclip/probe.hpp"
#include "cotclip/prompts.hpp"
#include "cotclip/segmenter.hpp"
#include "cotclip/selftest.hpp"

namespace cotclip::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Worker pool (bounded parallelism; outputs land by index, so results are
// deterministic regardless of scheduling)
// ---------------------------------------------------------------------------

template <typename Fn>
void run_parallel(int workers, size_t n, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex err_mu;
  std::exception_ptr first_error;
  size_t pool_size = std::min(static_cast<size_t>(workers), n);
  std::vector<std::thread> pool;
  for (size_t w = 0; w < pool_size; ++w) {
    pool.emplace_back([&] {
      while (!failed.load()) {
        size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(err_mu);
          if (!first_error) first_error = std::current_exception();
          failed.store(true);
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Shared flag bundles
// ---------------------------------------------------------------------------

struct BackendFlags {
  std::string mock_script;
  std::string base_url;
  std::string model;
  bool chat = false;
  int top_logprobs = 0;
  std::string api_key;
  bool no_logit_bias = false;
  std::int64_t max_context = 32768;
  std::string think_marker = "</think>";
  std::string answer_cue;
};

inline void add_backend_flags(CLI::App* cmd, BackendFlags& f) {
  cmd->add_option("--mock-script", f.mock_script, "scripted mock backend (jsonl)");
  cmd->add_option("--base-url", f.base_url, "OpenAI-compatible server base url");
  cmd->add_option("--model", f.model, "model name for the http backend");
  cmd->add_flag("--chat", f.chat, "use the chat completions endpoint");
  cmd->add_option("--top-logprobs", f.top_logprobs, "request top-K logprobs (http)");
  cmd->add_option("--api-key", f.api_key, "bearer token (default: $COTCLIP_API_KEY)");
  cmd->add_flag("--no-logit-bias", f.no_logit_bias, "server lacks logit_bias support");
  cmd->add_option("--max-context", f.max_context, "context limit for the http backend");
  cmd->add_option("--think-marker", f.think_marker, "end-of-reasoning marker");
  cmd->add_option("--answer-cue", f.answer_cue, "suffix appended after the marker in probes");
}

inline std::unique_ptr<backend::Backend> make_backend(const BackendFlags& f) {
  const bool mock = !f.mock_script.empty();
  const bool http = !f.base_url.empty() || !f.model.empty();
  if (mock == http)
    throw ConfigError("select exactly one backend: --mock-script or --base-url/--model");
  backend::BackendOptions opts;
  opts.think_marker = f.think_marker;
  opts.answer_cue = f.answer_cue;
  if (mock) return backend::load_script(f.mock_script, opts);
  backend::HttpConfig cfg;
  cfg.base_url = f.base_url;
  cfg.model = f.model;
  cfg.chat = f.chat;
  cfg.top_logprobs = f.top_logprobs;
  cfg.api_key = f.api_key;
  cfg.logit_bias_supported = !f.no_logit_bias;
  cfg.max_context = f.max_context;
  return std::make_unique<backend::HttpBackend>(cfg, opts);
}

struct PromptFlags {
  std::string template_id = "math";
  int ccot_budget = 100;
};

inline void add_prompt_flags(CLI::App* cmd, PromptFlags& f) {
  cmd->add_option("--template", f.template_id, "prompt template: qa|math|ccot_qa|ccot_math");
  cmd->add_option("--ccot-budget", f.ccot_budget, "word budget for ccot templates");
}

inline std::string render(const PromptFlags& f, const std::string& question) {
  const bool ccot = f.template_id.rfind("ccot", 0) == 0;
  return prompts::render_prompt(f.template_id, question,
                                ccot ? std::optional<int>(f.ccot_budget) : std::nullopt);
}

inline seg::SegmenterOptions segmenter_options(const std::string& abbrev_file) {
  return abbrev_file.empty() ? seg::default_options() : seg::load_abbreviations(abbrev_file);
}

namespace detail {

inline std::map<std::string, ReasoningTrace> traces_by_id(const std::string& path) {
  std::map<std::string, ReasoningTrace> out;
  for (auto& t : read_traces(path)) {
    const std::string id = t.example_id;
    if (!out.emplace(id, std::move(t)).second)
      throw ParseError("duplicate trace for example '" + id + "' in " + path);
  }
  return out;
}

inline std::map<std::string, ActivationSequence> activations_by_id(const std::string& path) {
  std::map<std::string, ActivationSequence> out;
  for (auto& a : read_activations(path)) out[a.example_id] = std::move(a);
  return out;
}

inline std::map<std::string, probe::ConvergenceRecord> records_by_id(const std::string& path) {
  std::map<std::string, probe::ConvergenceRecord> out;
  for (auto& r : probe::read_records(path)) out[r.example_id] = std::move(r);
  return out;
}

inline std::string sibling(const std::string& path, const std::string& name) {
  fs::path p(path);
  return (p.has_parent_path() ? p.parent_path() / name : fs::path(name)).string();
}

inline std::vector<double> parse_grid(const std::string& csv) {
  std::vector<double> grid;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = eval::detail::trim(item);
    if (!item.empty()) grid.push_back(std::stod(item));
  }
  return grid;
}

inline std::vector<l2s::LabeledSequence> join_labeled(
    const std::map<std::string, ActivationSequence>& acts,
    const std::map<std::string, probe::ConvergenceRecord>& records) {
  std::vector<l2s::LabeledSequence> out;
  for (const auto& [id, act] : acts) {
    auto it = records.find(id);
    if (it == records.end()) continue;
    const auto& rec = it->second;
    if (rec.prefix_answers.size() != act.vectors.size() + 1)
      throw ConfigError("example '" + id + "': record has " +
                        std::to_string(rec.prefix_answers.size() - 1) + " chunk probes but " +
                        std::to_string(act.vectors.size()) + " activation vectors");
    l2s::LabeledSequence seq;
    seq.activations = act;
    seq.labels = l2s::build_labels(rec.prefix_answers, rec.full_answer);
    out.push_back(std::move(seq));
  }
  if (out.empty()) throw ConfigError("no examples present in both activations and records");
  return out;
}

inline eval::AliasMap load_aliases(const std::string& path) {
  eval::AliasMap aliases;
  cotclip::detail::for_each_jsonl_record(path, [&](const json& j, long line) {
    const auto id = cotclip::detail::require(j, "id", line).get<std::string>();
    for (const auto& a : cotclip::detail::require(j, "aliases", line)) {
      auto norm = eval::normalize_answer(a.get<std::string>());
      if (norm) aliases[id].insert(*norm);
    }
  });
  return aliases;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommand actions
// ---------------------------------------------------------------------------

struct ProbeAcrArgs {
  std::string dataset, traces, out, hist, abbrev_file;
  BackendFlags backend;
  PromptFlags prompt;
  int bins = 20;
  std::int64_t probe_budget = 64;
  bool include_empty_prefix = true;
  int parallel = 4;
};

inline int cmd_probe_acr(const ProbeAcrArgs& args, std::ostream& out) {
  auto dataset = read_dataset(args.dataset);
  auto traces = detail::traces_by_id(args.traces);
  std::vector<const DatasetExample*> todo;
  for (const auto& ex : dataset)
    if (traces.count(ex.id)) todo.push_back(&ex);
  if (todo.empty()) throw ConfigError("no dataset examples have traces in " + args.traces);

  auto b = make_backend(args.backend);
  probe::ScanOptions scan;
  scan.probe_budget = args.probe_budget;
  scan.include_empty_prefix = args.include_empty_prefix;

  std::vector<probe::ConvergenceRecord> records(todo.size());
  run_parallel(args.parallel, todo.size(), [&](size_t i) {
    const DatasetExample& ex = *todo[i];
    records[i] = probe::convergence_scan(*b, ex, traces.at(ex.id),
                                         render(args.prompt, ex.question), scan);
  });
  probe::write_records(records, args.out);
  const std::string hist_path =
      args.hist.empty() ? detail::sibling(args.out, "acr_hist.csv") : args.hist;
  probe::write_histogram_csv(probe::acr_histogram(records, args.bins), hist_path);

  double mean_acr = 0.0;
  for (const auto& r : records) mean_acr += r.acr;
  if (!records.empty()) mean_acr /= static_cast<double>(records.size());
  out << "probe-acr: " << records.size() << " records -> " << args.out << " (mean ACR "
      << eval::report_detail::f4(mean_acr) << "), histogram -> " << hist_path << '\n';
  return 0;
}

struct RunArgs {
  std::string policy, dataset, out, predictor, activations, abbrev_file;
  BackendFlags backend;
  PromptFlags prompt;
  int k = 10;
  double alpha = 0.6;
  double tau = -1.0;  // <0: use the predictor's stored tau
  std::int64_t max_reasoning_tokens = 4096;
  std::int64_t probe_budget = 64;
  std::int64_t answer_budget = 64;
  int probe_stride = 1;
  bool boost_at_boundaries_only = false;
  std::optional<double> fixed_think_bias;
  std::optional<int> think_token_id;
  int parallel = 4;
};

inline int cmd_run(const RunArgs& args, std::ostream& out) {
  policy::StopPolicyConfig cfg;
  cfg.max_reasoning_tokens = args.max_reasoning_tokens;
  cfg.answer_budget = args.answer_budget;
  cfg.probe_stride = args.probe_stride;
  if (args.policy == "none") {
    cfg.variant = policy::NonePolicy{};
  } else if (args.policy == "consistency") {
    cfg.variant = policy::ConsistencyPolicy{args.k, args.probe_budget};
  } else if (args.policy == "boost") {
    cfg.variant =
        policy::ThinkBoostPolicy{args.alpha, args.boost_at_boundaries_only, args.fixed_think_bias};
  } else if (args.policy == "l2s") {
    if (args.predictor.empty()) throw ConfigError("--policy l2s requires --predictor");
    auto pred = l2s::load_predictor(args.predictor);
    double tau = args.tau >= 0.0 ? args.tau : pred.tau;
    cfg.variant = policy::LearnToStopPolicy{std::move(pred), tau};
  } else {
    throw ConfigError("unknown policy '" + args.policy + "' (none|consistency|boost|l2s)");
  }
  cfg.validate();

  auto dataset = read_dataset(args.dataset);
  auto b = make_backend(args.backend);
  policy::EpisodeOptions opts;
  opts.segmenter = segmenter_options(args.abbrev_file);
  opts.think_token_id = args.think_token_id;
  std::map<std::string, ActivationSequence> store;
  if (!args.activations.empty()) {
    store = detail::activations_by_id(args.activations);
    opts.activation_store = &store;
  }

  std::vector<EpisodeResult> episodes(dataset.size());
  run_parallel(args.parallel, dataset.size(), [&](size_t i) {
    episodes[i] = policy::decode_with_policy(*b, dataset[i],
                                             render(args.prompt, dataset[i].question), cfg, opts);
  });
  write_episodes(episodes, args.out);

  std::int64_t stops = 0, failures = 0;
  double tokens = 0.0;
  for (const auto& ep : episodes) {
    stops += ep.stop_chunk.has_value();
    failures += ep.failed;
    tokens += static_cast<double>(ep.generated_tokens);
  }
  out << "run[" << cfg.name() << "]: " << episodes.size() << " episodes -> " << args.out
      << " (mean tokens " << eval::report_detail::f4(tokens / episodes.size()) << ", stops "
      << stops << ", failures " << failures << ")\n";
  return 0;
}

struct TrainArgs {
  std::string activations, records, out;
  int epochs = 200;
  int batch = 32;
  double lr = 5e-4;
  std::uint64_t seed = 0;
  int hidden = 128;
  double dropout = 0.1;
};

inline int cmd_train_stop(const TrainArgs& args, std::ostream& out) {
  auto data = detail::join_labeled(detail::activations_by_id(args.activations),
                                   detail::records_by_id(args.records));
  l2s::TrainHyper hyper;
  hyper.epochs = args.epochs;
  hyper.batch_size = args.batch;
  hyper.learning_rate = args.lr;
  hyper.seed = args.seed;
  auto result = l2s::train(data, hyper, args.hidden, args.dropout);
  l2s::save_predictor(result.predictor, args.out);
  out << "train-stop: " << data.size() << " sequences, " << args.epochs << " epochs, loss "
      << eval::report_detail::f4(result.epoch_loss.front()) << " -> "
      << eval::report_detail::f4(result.epoch_loss.back()) << ", label accuracy "
      << eval::report_detail::f4(l2s::label_accuracy(result.predictor, data)) << ", predictor -> "
      << args.out << '\n';
  return 0;
}

struct TuneArgs {
  std::string predictor, val_activations, val_records, out;
  std::string grid = "0.5,0.6,0.7,0.8,0.9,0.95,0.99";
  double epsilon = 0.0;
};

inline int cmd_tune_threshold(const TuneArgs& args, std::ostream& out) {
  auto pred = l2s::load_predictor(args.predictor);
  auto acts = detail::activations_by_id(args.val_activations);
  auto records = detail::records_by_id(args.val_records);
  std::vector<std::pair<l2s::LabeledSequence, probe::ConvergenceRecord>> validation;
  for (auto& seq : detail::join_labeled(acts, records)) {
    const std::string id = seq.activations.example_id;
    validation.emplace_back(std::move(seq), records.at(id));
  }
  auto outcome = l2s::tune_threshold(pred, validation, detail::parse_grid(args.grid),
                                     args.epsilon);
  pred.tau = outcome.tau;
  l2s::save_predictor(pred, args.out.empty() ? args.predictor : args.out);
  out << "tune-threshold: tau " << outcome.tau << " (answer match "
      << eval::report_detail::f4(outcome.answer_match_rate) << ", mean stop chunk "
      << eval::report_detail::f4(outcome.mean_stop_chunk) << ") -> "
      << (args.out.empty() ? args.predictor : args.out) << '\n';
  return 0;
}

struct EvalArgs {
  std::vector<std::string> episodes;
  std::string baseline, dataset, records, out_dir, aliases, traces;
  int bins = 20;
};

inline int cmd_eval(const EvalArgs& args, std::ostream& out) {
  auto dataset = read_dataset(args.dataset);
  std::map<std::string, eval::Answer> gold;
  for (const auto& ex : dataset) gold[ex.id] = ex.gold_answer;

  std::optional<std::vector<EpisodeResult>> baseline;
  if (!args.baseline.empty()) baseline = read_episodes(args.baseline);
  std::map<std::string, probe::ConvergenceRecord> records;
  if (!args.records.empty()) records = detail::records_by_id(args.records);
  eval::AliasMap aliases;
  if (!args.aliases.empty()) aliases = detail::load_aliases(args.aliases);
  const eval::AliasMap* alias_ptr = args.aliases.empty() ? nullptr : &aliases;

  std::map<std::string, ReasoningTrace> traces;
  if (!args.traces.empty()) traces = detail::traces_by_id(args.traces);

  std::vector<eval::Metrics> metrics;
  std::vector<eval::StopQualityCounts> quality;
  std::vector<json> review;  // truncated traces behind Undetermined stops
  if (baseline) {
    auto m = eval::score_run(*baseline, dataset, &*baseline, alias_ptr);
    if (m.policy_name.empty()) m.policy_name = "baseline";
    metrics.push_back(std::move(m));
  }
  for (const auto& path : args.episodes) {
    auto episodes = read_episodes(path);
    metrics.push_back(
        eval::score_run(episodes, dataset, baseline ? &*baseline : nullptr, alias_ptr));
    if (!records.empty()) {
      eval::StopQualityCounts counts;
      counts.policy_name = metrics.back().policy_name;
      for (const auto& ep : episodes) {
        auto rit = records.find(ep.example_id);
        auto git = gold.find(ep.example_id);
        if (rit == records.end() || git == gold.end()) continue;
        // the faithfulness protocol only applies where the full chain is correct
        if (!eval::answers_match(rit->second.full_answer, git->second)) continue;
        auto verdict = eval::classify_stop(rit->second, ep, git->second);
        counts.add(verdict);
        // the tool never claims unfaithfulness; it exports the truncated
        // trace for a human to adjudicate
        if (verdict == eval::StopQuality::kUndeterminedFaithfulness) {
          auto tit = traces.find(ep.example_id);
          if (tit != traces.end() && ep.stop_chunk.has_value()) {
            std::string truncated;
            for (int c = 0; c <= *ep.stop_chunk &&
                            c < static_cast<int>(tit->second.chunks.size());
                 ++c) {
              if (!truncated.empty()) truncated += ' ';
              truncated += tit->second.chunks[c].text;
            }
            review.push_back(json{{"example_id", ep.example_id},
                                  {"policy", ep.policy_name},
                                  {"stop_chunk", *ep.stop_chunk},
                                  {"truncated_text", truncated}});
          }
        }
      }
      quality.push_back(std::move(counts));
    }
  }

  probe::Histogram hist;
  if (!records.empty()) {
    std::vector<probe::ConvergenceRecord> recs;
    recs.reserve(records.size());
    for (const auto& [id, r] : records) recs.push_back(r);
    hist = probe::acr_histogram(recs, args.bins);
  }
  auto files = eval::emit_report(metrics, hist, quality, args.out_dir);
  if (!args.traces.empty()) {
    const std::string review_path = args.out_dir + "/undetermined_review.jsonl";
    auto rout = cotclip::detail::open_out(review_path);
    for (const auto& r : review) rout << r.dump() << '\n';
    files.push_back(review_path);
  }
  for (const auto& f : files) out << "wrote " << f << '\n';
  return 0;
}

struct SelftestArgs {
  std::string fixtures = "fixtures";
};

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// The wired option tree. Owning wrapper so tests can parse, inspect and
/// re-emit configuration without executing anything.
class Cli {
 public:
  explicit Cli(std::ostream& out = std::cout) : out_(out) { wire(); }

  CLI::App app{"cotclip: stop chain-of-thought decoding once the answer has converged"};
  std::function<int()> action;

 private:
  void wire();

  std::ostream& out_;
  std::shared_ptr<ProbeAcrArgs> pa_ = std::make_shared<ProbeAcrArgs>();
  std::shared_ptr<RunArgs> ra_ = std::make_shared<RunArgs>();
  std::shared_ptr<TrainArgs> ta_ = std::make_shared<TrainArgs>();
  std::shared_ptr<TuneArgs> na_ = std::make_shared<TuneArgs>();
  std::shared_ptr<EvalArgs> ea_ = std::make_shared<EvalArgs>();
  std::shared_ptr<EvalArgs> ma_ = std::make_shared<EvalArgs>();
  std::shared_ptr<SelftestArgs> sa_ = std::make_shared<SelftestArgs>();
};

inline void Cli::wire() {
  std::ostream& out = out_;
  auto& action = this->action;
  app.set_config("--config", "", "configuration file (ini sections per subcommand)");
  app.require_subcommand(1);

  auto pa = pa_;
  auto* probe_cmd = app.add_subcommand(
      "probe-acr", "probe every reasoning prefix and compute convergence records");
  probe_cmd->add_option("--dataset", pa->dataset, "dataset jsonl")->required();
  probe_cmd->add_option("--traces", pa->traces, "reasoning traces jsonl")->required();
  probe_cmd->add_option("--out", pa->out, "output records jsonl")->required();
  probe_cmd->add_option("--bins", pa->bins, "histogram bins");
  probe_cmd->add_option("--hist", pa->hist, "histogram csv path (default: alongside --out)");
  probe_cmd->add_option("--probe-budget", pa->probe_budget, "tokens per answer probe");
  probe_cmd->add_flag("--include-empty-prefix,!--no-include-empty-prefix",
                      pa->include_empty_prefix, "probe the empty (no-reasoning) prefix");
  probe_cmd->add_option("--parallel", pa->parallel, "bounded request parallelism");
  probe_cmd->add_option("--abbrev-file", pa->abbrev_file, "abbreviation list override");
  add_backend_flags(probe_cmd, pa->backend);
  add_prompt_flags(probe_cmd, pa->prompt);
  probe_cmd->callback([&action, pa, &out] { action = [pa, &out] { return cmd_probe_acr(*pa, out); }; });

  auto ra = ra_;
  auto* run_cmd = app.add_subcommand("run", "decode episodes under a stopping policy");
  run_cmd->add_option("--policy", ra->policy, "none|consistency|boost|l2s")->required();
  run_cmd->add_option("--dataset", ra->dataset, "dataset jsonl")->required();
  run_cmd->add_option("--out", ra->out, "output episodes jsonl")->required();
  run_cmd->add_option("--k", ra->k, "consecutive identical answers required");
  run_cmd->add_option("--alpha", ra->alpha, "think-boost strength");
  run_cmd->add_option("--tau", ra->tau, "stop threshold override for l2s");
  run_cmd->add_option("--predictor", ra->predictor, "trained predictor json");
  run_cmd->add_option("--activations", ra->activations, "activation sequences jsonl (l2s)");
  run_cmd->add_option("--max-reasoning-tokens", ra->max_reasoning_tokens, "reasoning budget");
  run_cmd->add_option("--probe-budget", ra->probe_budget, "tokens per consistency probe");
  run_cmd->add_option("--answer-budget", ra->answer_budget, "tokens for the final answer");
  run_cmd->add_option("--probe-stride", ra->probe_stride, "probe every Nth boundary");
  run_cmd->add_flag("--boost-at-boundaries-only", ra->boost_at_boundaries_only,
                    "apply the adjustment only at sentence boundaries");
  run_cmd->add_option("--fixed-think-bias", ra->fixed_think_bias,
                      "constant marker logit bias (top-k backends)");
  run_cmd->add_option("--think-token-id", ra->think_token_id,
                      "marker token id on the serving side");
  run_cmd->add_option("--parallel", ra->parallel, "bounded episode parallelism");
  run_cmd->add_option("--abbrev-file", ra->abbrev_file, "abbreviation list override");
  add_backend_flags(run_cmd, ra->backend);
  add_prompt_flags(run_cmd, ra->prompt);
  run_cmd->callback([&action, ra, &out] { action = [ra, &out] { return cmd_run(*ra, out); }; });

  auto ta = ta_;
  auto* train_cmd = app.add_subcommand("train-stop", "train the learned stopper");
  train_cmd->add_option("--activations", ta->activations, "activation sequences jsonl")->required();
  train_cmd->add_option("--records", ta->records, "convergence records jsonl")->required();
  train_cmd->add_option("--out", ta->out, "output predictor json")->required();
  train_cmd->add_option("--epochs", ta->epochs, "training epochs");
  train_cmd->add_option("--batch", ta->batch, "batch size");
  train_cmd->add_option("--lr", ta->lr, "learning rate");
  train_cmd->add_option("--seed", ta->seed, "training seed");
  train_cmd->add_option("--hidden", ta->hidden, "LSTM hidden units");
  train_cmd->add_option("--dropout", ta->dropout, "dropout rate on the LSTM output");
  train_cmd->callback([&action, ta, &out] { action = [ta, &out] { return cmd_train_stop(*ta, out); }; });

  auto na = na_;
  auto* tune_cmd = app.add_subcommand("tune-threshold", "tune tau on validation data");
  tune_cmd->add_option("--predictor", na->predictor, "trained predictor json")->required();
  tune_cmd->add_option("--val-activations", na->val_activations, "validation activations")
      ->required();
  tune_cmd->add_option("--val-records", na->val_records, "validation records")->required();
  tune_cmd->add_option("--grid", na->grid, "comma-separated tau candidates");
  tune_cmd->add_option("--epsilon", na->epsilon, "allowed answer-match drop");
  tune_cmd->add_option("--out", na->out, "output predictor (default: overwrite input)");
  tune_cmd->callback([&action, na, &out] { action = [na, &out] { return cmd_tune_threshold(*na, out); }; });

  auto ea = ea_;
  auto* eval_cmd = app.add_subcommand("eval", "score one episode run against a baseline");
  eval_cmd->add_option("--episodes", ea->episodes, "episodes jsonl")
      ->required()
      ->expected(1, 1);
  eval_cmd->add_option("--baseline", ea->baseline, "baseline episodes jsonl");
  eval_cmd->add_option("--dataset", ea->dataset, "dataset jsonl")->required();
  eval_cmd->add_option("--records", ea->records, "convergence records jsonl");
  eval_cmd->add_option("--out-dir", ea->out_dir, "report directory")->required();
  eval_cmd->add_option("--aliases", ea->aliases, "answer alias jsonl");
  eval_cmd->add_option("--traces", ea->traces, "traces jsonl (exports undetermined stops)");
  eval_cmd->add_option("--bins", ea->bins, "histogram bins");
  eval_cmd->callback([&action, ea, &out] { action = [ea, &out] { return cmd_eval(*ea, out); }; });

  auto ma = ma_;
  auto* report_cmd =
      app.add_subcommand("report", "combined report over multiple policy runs");
  report_cmd->add_option("--episodes", ma->episodes, "episodes jsonl (repeatable)")
      ->required()
      ->expected(1, 16);
  report_cmd->add_option("--baseline", ma->baseline, "baseline episodes jsonl");
  report_cmd->add_option("--dataset", ma->dataset, "dataset jsonl")->required();
  report_cmd->add_option("--records", ma->records, "convergence records jsonl");
  report_cmd->add_option("--out-dir", ma->out_dir, "report directory")->required();
  report_cmd->add_option("--aliases", ma->aliases, "answer alias jsonl");
  report_cmd->add_option("--traces", ma->traces, "traces jsonl (exports undetermined stops)");
  report_cmd->add_option("--bins", ma->bins, "histogram bins");
  report_cmd->callback([&action, ma, &out] { action = [ma, &out] { return cmd_eval(*ma, out); }; });

  auto sa = sa_;
  auto* self_cmd =
      app.add_subcommand("selftest", "run the invariant suite on the bundled fixtures");
  self_cmd->add_option("--fixtures", sa->fixtures, "fixtures directory");
  self_cmd->callback([&action, sa, &out] {
    action = [sa, &out] { return selftest::run(sa->fixtures, out) == 0 ? 0 : 2; };
  });
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  Cli cli(out);
  try {
    cli.app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = cli.app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }
  if (!cli.action) {
    err << cli.app.help();
    return 1;
  }
  try {
    return cli.action();
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return 2;
  }
}

}  // namespace cotclip::cli
