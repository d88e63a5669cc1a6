#pragma once

// Command implementations behind the gain-sched CLI. Each command writes its
// manifest before any other output and is deterministic given its inputs.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "gainsched/io.hpp"
#include "gainsched/scheduler.hpp"
#include "gainsched/signals.hpp"
#include "gainsched/simloop.hpp"
#include "gainsched/toymodel.hpp"
#include "gainsched/verify.hpp"

namespace gainsched {

enum ExitCode : int {
  kExitOk = 0,
  kExitOther = 1,
  kExitSchema = 2,
  kExitData = 3,
  kExitVerification = 4,
};

/// Run-time verification failure (cmd_verify with failing checks).
class VerificationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Schema reading with error accumulation.

class SchemaReader {
 public:
  SchemaReader(const json& j, std::string scope) : j_(j), scope_(std::move(scope)) {
    if (!j_.is_object()) add_error("must be a JSON object");
  }

  template <class T, class Check>
  T get(const std::string& key, T fallback, Check ok, const std::string& expect) {
    known_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return fallback;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!v.is_number_unsigned()) throw std::invalid_argument("type");
      } else if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw std::invalid_argument("type");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw std::invalid_argument("type");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw std::invalid_argument("type");
      }
      T out = v.get<T>();
      if (!ok(out)) throw std::invalid_argument("range");
      return out;
    } catch (const std::exception&) {
      add_error("'" + key + "' must be " + expect + " (got " + v.dump() + ")");
      return fallback;
    }
  }

  template <class T>
  T get(const std::string& key, T fallback, const std::string& expect) {
    return get<T>(key, fallback, [](const T&) { return true; }, expect);
  }

  bool has(const std::string& key) const { return j_.is_object() && j_.contains(key); }
  const json& raw(const std::string& key) {
    known_.insert(key);
    return j_.at(key);
  }
  void mark_known(const std::string& key) { known_.insert(key); }

  void add_error(const std::string& msg) {
    errors_.push_back(scope_.empty() ? msg : scope_ + ": " + msg);
  }
  void merge(const std::vector<std::string>& more) {
    errors_.insert(errors_.end(), more.begin(), more.end());
  }

  /// Records unknown keys and returns every error found so far.
  std::vector<std::string> finish() {
    if (j_.is_object()) {
      for (auto it = j_.begin(); it != j_.end(); ++it) {
        if (!known_.count(it.key())) add_error("unknown key '" + it.key() + "'");
      }
    }
    return errors_;
  }

 private:
  const json& j_;
  std::string scope_;
  std::set<std::string> known_;
  std::vector<std::string> errors_;
};

inline void throw_if_errors(const std::vector<std::string>& errors) {
  if (errors.empty()) return;
  std::string msg = std::to_string(errors.size()) + " schema error(s):";
  for (const auto& e : errors) msg += "\n  - " + e;
  throw SchemaError(msg);
}

inline json parse_config_text(const std::string& text, const std::string& path) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("config '" + path + "': malformed JSON (" + e.what() + ")");
  }
}

// ---------------------------------------------------------------------------
// Toy model configuration (prefill, trace-layers, reference population).

struct ToySpec {
  ToyConfig toy;
  SignalOptions signal;
};

inline json to_json(const ToySpec& s) {
  return json{{"d_model", s.toy.d_model},
              {"d_ffn", s.toy.d_ffn},
              {"n_layers", s.toy.n_layers},
              {"vocab", s.toy.vocab},
              {"seed", s.toy.seed},
              {"weight_mode", std::string(to_string(s.toy.weight_mode))},
              {"sink_bias", s.toy.sink_bias},
              {"weight_c", s.signal.weight_c},
              {"diagonal", s.signal.diagonal == DiagonalPolicy::include ? "include" : "exclude"}};
}

inline ToySpec read_toy_spec(const json& j, std::vector<std::string>& errors,
                             const std::string& scope = "toy") {
  SchemaReader r(j, scope);
  ToySpec s;
  auto positive = [](std::size_t v) { return v >= 1; };
  s.toy.d_model = r.get<std::size_t>("d_model", s.toy.d_model, positive, "an integer >= 1");
  s.toy.d_ffn = r.get<std::size_t>("d_ffn", s.toy.d_ffn, positive, "an integer >= 1");
  s.toy.n_layers = r.get<std::size_t>("n_layers", s.toy.n_layers, positive, "an integer >= 1");
  s.toy.vocab = r.get<std::size_t>("vocab", s.toy.vocab, positive, "an integer >= 1");
  s.toy.seed = r.get<std::uint64_t>("seed", s.toy.seed, "a non-negative integer");
  s.toy.sink_bias = r.get<double>("sink_bias", s.toy.sink_bias, "a number");
  s.signal.weight_c = r.get<double>("weight_c", s.signal.weight_c,
                                    [](double v) { return std::isfinite(v); }, "a finite number");
  const auto mode = r.get<std::string>(
      "weight_mode", std::string(to_string(s.toy.weight_mode)),
      [](const std::string& v) {
        return v == "random_gaussian" || v == "scaled_orthogonal" || v == "sink_biased";
      },
      "one of random_gaussian, scaled_orthogonal, sink_biased");
  s.toy.weight_mode = parse_weight_mode(mode);
  const auto diag = r.get<std::string>(
      "diagonal", "include",
      [](const std::string& v) { return v == "include" || v == "exclude"; },
      "\"include\" or \"exclude\"");
  s.signal.diagonal = diag == "exclude" ? DiagonalPolicy::exclude : DiagonalPolicy::include;
  auto errs = r.finish();
  if (errs.empty()) {
    try {
      validate(s.toy);
    } catch (const std::invalid_argument& e) {
      errs.push_back(scope + ": " + e.what());
    }
  }
  errors.insert(errors.end(), errs.begin(), errs.end());
  return s;
}

inline ToySpec load_toy_spec(const std::optional<std::string>& path) {
  if (!path) return {};
  const json j = parse_config_text(read_file(*path), *path);
  std::vector<std::string> errors;
  auto spec = read_toy_spec(j, errors, "config");
  throw_if_errors(errors);
  return spec;
}

// ---------------------------------------------------------------------------
// Simulation configuration.

struct PopulationSpec {
  std::size_t n_samples = 2000;
  std::uint64_t seed = 2024;
  ToySpec toy;
};

struct SimSpec {
  RunConfig run;
  std::optional<RunMode> baseline = RunMode::uniform;
  std::optional<std::string> dataset;  ///< signal JSONL; absent = synthetic population
  PopulationSpec population;
  double weight_c = 1.0;
  bool n_batch_given = false;
  bool snapshots_given = false;
};

inline json to_json(const SimSpec& s) {
  const auto& c = s.run;
  json j;
  j["mode"] = std::string(to_string(c.mode));
  j["baseline"] = s.baseline ? json(std::string(to_string(*s.baseline))) : json(nullptr);
  j["steps"] = c.steps;
  j["seed"] = c.seed;
  j["n_batch"] = c.hyper.n_batch;
  j["alpha"] = c.hyper.alpha;
  j["beta"] = c.hyper.beta;
  j["gamma"] = c.hyper.gamma;
  j["sigma"] = {{"policy", c.sigma.kind == SigmaPolicy::Kind::fixed ? "fixed" : "fraction_of_n"},
                {"value", c.sigma.value}};
  j["learner"] = {{"learn_rate_scale", c.learner.learn_rate_scale},
                  {"coupling", c.learner.coupling},
                  {"signal_drift_rate", c.learner.signal_drift_rate},
                  {"signal_floor", c.learner.signal_floor},
                  {"initial_mastery", c.learner.initial_mastery},
                  {"forgetting_rate", c.learner.forgetting_rate}};
  j["mastery_threshold"] = c.mastery_threshold;
  j["stop_at_threshold"] = c.stop_at_threshold;
  j["subset"] = std::string(to_string(c.subset));
  j["snapshot_steps"] = c.snapshot_steps;
  j["histogram_bins"] = c.histogram_bins;
  j["weight_c"] = s.weight_c;
  j["dataset"] = s.dataset ? json(*s.dataset) : json(nullptr);
  j["population"] = {{"n_samples", s.population.n_samples},
                     {"seed", s.population.seed},
                     {"toy", to_json(s.population.toy)}};
  return j;
}

inline std::string mode_choices() {
  return "one of gain, uniform, sequential_sorted, acc_only_update, angle_only_update, "
         "accuracy_filter_baseline";
}

/// Parses a simulation config, reporting every violation at once.
inline SimSpec read_sim_spec(const json& j) {
  SimSpec s;
  SchemaReader r(j, "config");
  auto& c = s.run;
  auto valid_mode = [](const std::string& v) { return parse_run_mode(v).has_value(); };

  c.mode = *parse_run_mode(r.get<std::string>("mode", "gain", valid_mode, mode_choices()));
  if (r.has("baseline") && r.raw("baseline").is_null()) {
    s.baseline.reset();
  } else {
    s.baseline = parse_run_mode(r.get<std::string>("baseline", "uniform", valid_mode,
                                                   mode_choices() + ", or null"));
  }
  c.steps = r.get<std::size_t>("steps", c.steps, [](std::size_t v) { return v >= 1; },
                               "an integer >= 1");
  c.seed = r.get<std::uint64_t>("seed", c.seed, "a non-negative integer");
  s.n_batch_given = r.has("n_batch");
  c.hyper.n_batch = r.get<std::size_t>("n_batch", 0, [](std::size_t v) { return v >= 1; },
                                       "an integer >= 1");
  auto finite = [](double v) { return std::isfinite(v); };
  c.hyper.alpha = r.get<double>("alpha", c.hyper.alpha, finite, "a finite number");
  c.hyper.beta = r.get<double>("beta", c.hyper.beta, finite, "a finite number");
  c.hyper.gamma = r.get<double>("gamma", c.hyper.gamma, finite, "a finite number");
  c.mastery_threshold = r.get<double>("mastery_threshold", c.mastery_threshold,
                                      [](double v) { return v > 0.0 && v <= 1.0; },
                                      "a number in (0, 1]");
  c.stop_at_threshold = r.get<bool>("stop_at_threshold", c.stop_at_threshold, "a boolean");
  c.subset = *parse_subset(r.get<std::string>(
      "subset", "full", [](const std::string& v) { return parse_subset(v).has_value(); },
      "one of full, top_half, uniform_half, bottom_half"));
  c.histogram_bins = r.get<std::size_t>("histogram_bins", c.histogram_bins,
                                        [](std::size_t v) { return v >= 1; }, "an integer >= 1");
  s.weight_c = r.get<double>("weight_c", s.weight_c, finite, "a finite number");

  s.snapshots_given = r.has("snapshot_steps");
  if (s.snapshots_given) {
    const json& v = r.raw("snapshot_steps");
    bool ok = v.is_array();
    if (ok) {
      for (const auto& e : v) ok = ok && e.is_number_unsigned();
    }
    if (ok) {
      c.snapshot_steps = v.get<std::vector<std::size_t>>();
    } else {
      r.add_error("'snapshot_steps' must be an array of non-negative integers");
    }
  }
  if (r.has("dataset")) {
    const json& v = r.raw("dataset");
    if (v.is_string()) {
      s.dataset = v.get<std::string>();
    } else if (!v.is_null()) {
      r.add_error("'dataset' must be a path string or null");
    }
  }

  if (r.has("sigma")) {
    SchemaReader sr(r.raw("sigma"), "config.sigma");
    const auto policy = sr.get<std::string>(
        "policy", "fraction_of_n",
        [](const std::string& v) { return v == "fraction_of_n" || v == "fixed"; },
        "\"fraction_of_n\" or \"fixed\"");
    c.sigma.kind = policy == "fixed" ? SigmaPolicy::Kind::fixed : SigmaPolicy::Kind::fraction_of_n;
    c.sigma.value = sr.get<double>("value", c.sigma.value,
                                   [](double v) { return std::isfinite(v) && v > 0.0; },
                                   "a number > 0");
    r.merge(sr.finish());
  }

  if (r.has("learner")) {
    SchemaReader lr(r.raw("learner"), "config.learner");
    auto& l = c.learner;
    auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    auto nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
    l.learn_rate_scale = lr.get<double>("learn_rate_scale", l.learn_rate_scale, unit,
                                        "a number in [0, 1]");
    l.coupling = lr.get<double>("coupling", l.coupling, nonneg, "a number >= 0");
    l.signal_drift_rate =
        lr.get<double>("signal_drift_rate", l.signal_drift_rate, nonneg, "a number >= 0");
    l.signal_floor = lr.get<double>("signal_floor", l.signal_floor,
                                    [](double v) { return v > 0.0 && v <= 1.0; },
                                    "a number in (0, 1]");
    l.initial_mastery =
        lr.get<double>("initial_mastery", l.initial_mastery, unit, "a number in [0, 1]");
    l.forgetting_rate =
        lr.get<double>("forgetting_rate", l.forgetting_rate, unit, "a number in [0, 1]");
    r.merge(lr.finish());
  }

  if (r.has("population")) {
    SchemaReader pr(r.raw("population"), "config.population");
    s.population.n_samples = pr.get<std::size_t>(
        "n_samples", s.population.n_samples, [](std::size_t v) { return v >= 1; },
        "an integer >= 1");
    s.population.seed = pr.get<std::uint64_t>("seed", s.population.seed, "a non-negative integer");
    if (pr.has("toy")) {
      std::vector<std::string> toy_errors;
      s.population.toy = read_toy_spec(pr.raw("toy"), toy_errors, "config.population.toy");
      pr.merge(toy_errors);
    }
    r.merge(pr.finish());
  }

  throw_if_errors(r.finish());
  return s;
}

// ---------------------------------------------------------------------------
// Shared helpers.

/// Worker count for prefill: GAIN_SCHED_THREADS if set, else the hardware count.
inline std::size_t prefill_threads(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("GAIN_SCHED_THREADS")) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(env, &used);
      if (used != std::string(env).size() || v < 1) throw std::invalid_argument("range");
      n = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw SchemaError(std::string("GAIN_SCHED_THREADS must be a positive integer, got '") +
                        env + "'");
    }
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers; rethrows the first
/// failure in index order.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline SegmentedSequence to_sequence(const DatasetRecord& r) {
  return SegmentedSequence{r.token_ids, r.prompt_len, r.sample_id};
}

inline std::vector<DatasetRecord> to_records(const std::vector<SegmentedSequence>& seqs) {
  std::vector<DatasetRecord> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back({s.sample_id, s.token_ids, s.prompt_len, {}});
  return out;
}

/// Final-layer signal rows for every record, in input order.
inline std::vector<SignalRow> compute_signals(const std::vector<DatasetRecord>& records,
                                              const ToySpec& spec, std::size_t threads) {
  const ToyWeights w = init_weights(spec.toy);
  std::vector<SignalRow> rows(records.size());
  parallel_for(records.size(), threads, [&](std::size_t i) {
    const auto& rec = records[i];
    SignalRow row;
    row.sample_id = rec.sample_id;
    if (rec.precomputed_signal) {
      row.combined = *rec.precomputed_signal;
    } else {
      try {
        const auto sig = prefill_signal(w, to_sequence(rec), spec.signal);
        row.c_intra = sig.c_intra;
        row.c_inter = sig.c_inter;
        row.combined = sig.combined;
      } catch (const std::exception& e) {
        throw DataError("record " + std::to_string(i + 1) + " ('" + rec.sample_id +
                        "'): " + e.what());
      }
    }
    rows[i] = std::move(row);
  });
  return rows;
}

inline std::string manifest_path_for(const std::string& out) { return out + ".manifest.json"; }

inline void write_manifest(const std::string& path, const RunManifest& m) {
  write_file(path, to_json(m).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Commands.

struct PrefillArgs {
  std::string dataset;
  std::string out;
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<double> weight_c;
};

inline ToySpec resolve_toy(const std::optional<std::string>& config,
                           std::optional<std::uint64_t> seed, std::optional<double> weight_c) {
  ToySpec spec = load_toy_spec(config);
  if (seed) spec.toy.seed = *seed;
  if (weight_c) spec.signal.weight_c = *weight_c;
  return spec;
}

/// Returns the number of signal rows written.
inline std::size_t cmd_prefill(const PrefillArgs& a, std::ostream& log = std::cerr) {
  const ToySpec spec = resolve_toy(a.config, a.seed, a.weight_c);
  const std::string text = read_file(a.dataset);
  const auto records = parse_dataset(text);
  write_manifest(manifest_path_for(a.out),
                 {"prefill", content_hash(to_json(spec).dump()), content_hash(text),
                  spec.toy.seed, std::string(to_string(spec.toy.weight_mode)), {a.out}});
  if (records.empty()) log << "warning: dataset '" << a.dataset << "' is empty\n";
  const auto rows = compute_signals(records, spec, prefill_threads(records.size()));
  write_file(a.out, format_signals(rows));
  return rows.size();
}

struct RankArgs {
  std::string signals;
  std::string out;
  double weight_c = 1.0;
};

inline RankedDataset cmd_rank(const RankArgs& a) {
  const std::string text = read_file(a.signals);
  const auto rows = parse_signals(text);
  write_manifest(manifest_path_for(a.out),
                 {"rank", content_hash(json{{"weight_c", a.weight_c}}.dump()),
                  content_hash(text), 0, "rank", {a.out}});
  if (rows.empty()) throw DataError("rank: signal file '" + a.signals + "' has no rows");
  RankedDataset ranked;
  try {
    ranked = rank(to_entries(rows, a.weight_c));
  } catch (const SchedulerError& e) {
    throw DataError(e.what());
  }
  write_file(a.out, format_ranked(ranked));
  return ranked;
}

struct TraceLayersArgs {
  std::string dataset;
  std::string out;
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<double> weight_c;
};

inline std::size_t cmd_trace_layers(const TraceLayersArgs& a) {
  const ToySpec spec = resolve_toy(a.config, a.seed, a.weight_c);
  const std::string text = read_file(a.dataset);
  const auto records = parse_dataset(text);
  write_manifest(manifest_path_for(a.out),
                 {"trace-layers", content_hash(to_json(spec).dump()), content_hash(text),
                  spec.toy.seed, std::string(to_string(spec.toy.weight_mode)), {a.out}});
  const ToyWeights w = init_weights(spec.toy);
  std::vector<std::string> blocks(records.size());
  parallel_for(records.size(), prefill_threads(records.size()), [&](std::size_t i) {
    const auto& rec = records[i];
    if (rec.token_ids.empty()) {
      throw DataError("record " + std::to_string(i + 1) + " ('" + rec.sample_id +
                      "') has no tokens to trace");
    }
    const auto layers = forward(w, to_sequence(rec));
    const auto sigs = layer_trace(layers, spec.signal);
    std::string block;
    for (std::size_t l = 0; l < sigs.size(); ++l) {
      block += rec.sample_id + "," + std::to_string(l) + "," + csv_real(sigs[l].c_intra) + "," +
               csv_real(sigs[l].c_inter) + "," + csv_real(sigs[l].combined) + "\n";
    }
    blocks[i] = std::move(block);
  });
  std::string out = "sample_id,layer,c_intra,c_inter,combined\n";
  for (const auto& b : blocks) out += b;
  write_file(a.out, out);
  return records.size();
}

struct SynthArgs {
  std::string out;
  std::size_t n_samples = 2000;
  std::uint64_t seed = 2024;
  std::optional<std::string> config;
};

inline void cmd_synth(const SynthArgs& a) {
  const ToySpec spec = load_toy_spec(a.config);
  write_manifest(manifest_path_for(a.out),
                 {"synth", content_hash(to_json(spec).dump()), "", a.seed,
                  std::string(to_string(spec.toy.weight_mode)), {a.out}});
  write_file(a.out, format_dataset(to_records(synth_dataset(spec.toy, a.n_samples, a.seed))));
}

struct VerifyArgs {
  std::string out;
  std::uint64_t seed = 1;
  std::optional<std::string> inject_fault;
};

inline json to_json(const VerifyReport& rep) {
  json checks = json::array();
  for (const auto& c : rep.checks) {
    json jc{{"name", c.name},         {"passed", c.passed},     {"metric", c.metric},
            {"value", c.value},       {"threshold", c.threshold}, {"trials", c.trials},
            {"failures", c.failures}, {"seconds", c.seconds}};
    if (c.metric == "max_rel_error") jc["max_rel_error"] = c.value;
    checks.push_back(std::move(jc));
  }
  json failing = json::array();
  for (const auto& c : rep.checks)
    if (!c.passed) failing.push_back(c.name);
  return json{{"passed", rep.all_passed()}, {"failing", failing}, {"checks", checks}};
}

/// Writes the report, then throws VerificationFailure if any check failed.
inline VerifyReport cmd_verify(const VerifyArgs& a) {
  if (a.inject_fault) {
    const auto& names = verify_check_names();
    if (std::find(names.begin(), names.end(), *a.inject_fault) == names.end()) {
      std::string msg = "unknown check '" + *a.inject_fault + "' for fault injection; known:";
      for (const auto& n : names) msg += " " + n;
      throw SchemaError(msg);
    }
  }
  const json cfg{{"seed", a.seed},
                 {"inject_fault", a.inject_fault ? json(*a.inject_fault) : json(nullptr)}};
  write_manifest(manifest_path_for(a.out),
                 {"verify", content_hash(cfg.dump()), "", a.seed,
                  a.inject_fault ? "fault:" + *a.inject_fault : "default", {a.out}});
  const auto rep = run_verification({a.seed, a.inject_fault});
  json j = to_json(rep);
  j["seed"] = a.seed;
  j["inject_fault"] = cfg["inject_fault"];
  write_file(a.out, j.dump(2) + "\n");
  if (!rep.all_passed()) {
    std::string msg = "verification failed:";
    for (const auto& c : rep.checks)
      if (!c.passed) msg += " " + c.name;
    throw VerificationFailure(msg);
  }
  return rep;
}

struct SimulateArgs {
  std::optional<std::string> config;
  std::optional<std::string> dataset;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<double> weight_c;
  std::optional<std::string> mode;
  std::optional<std::string> resume;
  std::optional<std::size_t> halt_after;
};

struct Population {
  std::vector<SignalEntry> signals;
  std::string hash;
};

inline Population load_population(const SimSpec& spec) {
  std::vector<SignalRow> rows;
  if (spec.dataset) {
    rows = parse_signals(read_file(*spec.dataset));
    if (rows.empty()) throw DataError("simulate: signal file '" + *spec.dataset + "' is empty");
  } else {
    const auto& p = spec.population;
    const auto seqs = synth_dataset(p.toy.toy, p.n_samples, p.seed);
    rows = compute_signals(to_records(seqs), p.toy, prefill_threads(seqs.size()));
  }
  Population pop;
  pop.signals = to_entries(rows, spec.weight_c);
  std::string canonical;
  for (const auto& e : pop.signals) canonical += dump_line({{e.sample_id, e.combined}});
  pop.hash = content_hash(canonical);
  return pop;
}

inline SimSpec resolve_sim_spec(const SimulateArgs& a) {
  json j = json::object();
  if (a.config) j = parse_config_text(read_file(*a.config), *a.config);
  if (a.mode) j["mode"] = *a.mode;
  if (a.seed) j["seed"] = *a.seed;
  if (a.weight_c) j["weight_c"] = *a.weight_c;
  if (a.dataset) j["dataset"] = *a.dataset;
  return read_sim_spec(j);
}

/// Fills population-dependent defaults (batch n/8, quarter-run snapshot).
inline void finalize(SimSpec& spec, std::size_t population) {
  const auto ref = reference_config(population);
  if (!spec.n_batch_given) spec.run.hyper.n_batch = ref.hyper.n_batch;
  if (!spec.snapshots_given) spec.run.snapshot_steps = {spec.run.steps / 4};
}

struct SimulateResult {
  json summary;
  RunTrace trace;
};

inline json datawise_json(const RunTrace& trace, const SurrogateLearner& learner,
                          std::size_t bins) {
  json out = json::array();
  for (const auto& snap : trace.snapshots) {
    const auto hist = datawise_snapshot(trace, learner, bins, snap.step);
    json jb = json::array();
    for (const auto& b : hist) {
      jb.push_back({{"lo", b.lo},
                    {"hi", b.hi},
                    {"count", b.count},
                    {"mean_mastery", b.mean_mastery ? json(*b.mean_mastery) : json(nullptr)}});
    }
    double rho = 0.0;
    try {
      rho = bin_spearman(hist);
    } catch (const SimulationError&) {
      rho = 0.0;
    }
    out.push_back({{"step", snap.step}, {"bins", jb}, {"spearman", rho}});
  }
  return out;
}

inline json opt_count(const std::optional<std::size_t>& v) { return v ? json(*v) : json(nullptr); }

inline SimulateResult cmd_simulate(const SimulateArgs& a) {
  SimSpec spec = resolve_sim_spec(a);
  const Population pop = load_population(spec);
  finalize(spec, pop.signals.size());
  try {
    validate(spec.run, pop.signals.size());
  } catch (const SimulationError& e) {
    throw SchemaError(std::string("config: ") + e.what());
  }
  const std::string config_hash = content_hash(to_json(spec).dump());

  namespace fs = std::filesystem;
  fs::create_directories(a.out);
  const auto path = [&](const char* name) { return (fs::path(a.out) / name).string(); };
  RunManifest manifest{"simulate", config_hash, pop.hash, spec.run.seed,
                       std::string(to_string(spec.run.mode)),
                       {path("trace.jsonl"), path("trace.csv"), path("summary.json"),
                        path("checkpoint.json")}};
  if (spec.baseline && !a.resume) manifest.outputs.push_back(path("baseline_trace.jsonl"));
  write_manifest(path("manifest.json"), manifest);

  std::optional<Simulation> sim;
  if (a.resume) {
    const json cp = parse_config_text(read_file(*a.resume), *a.resume);
    if (cp.value("config_hash", std::string()) != config_hash) {
      throw DataError("resume: checkpoint was written under a different config");
    }
    sim.emplace(spec.run, pop.signals, parse_checkpoint(cp, pop.hash));
  } else {
    sim.emplace(spec.run, pop.signals);
  }

  std::string trace_text;
  std::size_t executed = 0;
  while (!sim->done() && (!a.halt_after || executed < *a.halt_after)) {
    trace_text += dump_line(to_json(sim->advance()));
    ++executed;
    write_file(path("checkpoint.json"),
               checkpoint_json(sim->state(), pop.hash, config_hash).dump() + "\n");
  }
  write_file(path("trace.jsonl"), trace_text);
  RunTrace trace = sim->trace();
  trace.steps_to_threshold = sim->state().steps_to_threshold;
  trace.final_mean_mastery = sim->learner().mean_mastery();
  write_file(path("trace.csv"), format_trace_csv(trace));

  json summary;
  summary["mode"] = std::string(to_string(spec.run.mode));
  summary["seed"] = spec.run.seed;
  summary["steps"] = spec.run.steps;
  summary["steps_completed"] = sim->step();
  summary["complete"] = sim->done();
  summary["population"] = pop.signals.size();
  summary["n_batch"] = spec.run.hyper.n_batch;
  summary["sigma"] = sim->state().scheduler.sigma;
  summary["mastery_threshold"] = spec.run.mastery_threshold;
  summary["config_hash"] = config_hash;
  summary["dataset_hash"] = pop.hash;
  summary["steps_to_threshold"] = {{std::string(to_string(spec.run.mode)),
                                    opt_count(trace.steps_to_threshold)}};
  summary["final_mean_mastery"] = {{std::string(to_string(spec.run.mode)),
                                    trace.final_mean_mastery}};
  summary["epochs"] = epochs_json(trace);
  summary["datawise"] = datawise_json(trace, sim->learner(), 10);

  if (spec.baseline && !a.resume && !a.halt_after) {
    RunConfig base = spec.run;
    base.mode = *spec.baseline;
    const RunTrace bt = run(base, pop.signals);
    write_file(path("baseline_trace.jsonl"), format_trace_jsonl(bt));
    const std::string bname(to_string(*spec.baseline));
    summary["baseline"] = bname;
    summary["steps_to_threshold"][bname] = opt_count(bt.steps_to_threshold);
    summary["final_mean_mastery"][bname] = bt.final_mean_mastery;
    if (trace.steps_to_threshold && bt.steps_to_threshold) {
      summary["speedup_vs_baseline"] = static_cast<double>(*bt.steps_to_threshold) /
                                       static_cast<double>(*trace.steps_to_threshold);
    } else {
      summary["speedup_vs_baseline"] = nullptr;
    }
  }
  write_file(path("summary.json"), summary.dump(2) + "\n");
  return {summary, std::move(trace)};
}

}  // namespace gainsched
