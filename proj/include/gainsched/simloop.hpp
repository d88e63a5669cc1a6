#pragma once

// End-to-end scheduling loop over a surrogate learner.
//
// The surrogate keeps a per-sample mastery m_i in [0, 1] (the probability of
// answering correctly). A trained sample moves by
//     m_i += eta * s_i^kappa * (1 - m_i)
// where s_i in [eps, 1] is the sample's current signal mapped affinely from
// the population's base signal range. Higher concentration means stronger
// updates; (1 - m_i) plays the role of the remaining loss.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iterator>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gainsched/rng.hpp"
#include "gainsched/scheduler.hpp"

namespace gainsched {

class SimulationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct LearnerParams {
  double learn_rate_scale = 0.6;   ///< eta
  double coupling = 1.0;           ///< kappa >= 0
  double signal_drift_rate = 0.0;  ///< rho >= 0
  double signal_floor = 0.05;      ///< eps, lower end of the normalized signal
  double initial_mastery = 0.0;
  /// Per-step multiplicative decay applied to discarded samples (filter baseline only).
  double forgetting_rate = 0.0;

  friend bool operator==(const LearnerParams&, const LearnerParams&) = default;
};

inline void validate(const LearnerParams& p) {
  if (p.learn_rate_scale < 0.0 || p.learn_rate_scale > 1.0)
    throw SimulationError("learner: learn_rate_scale must lie in [0, 1]");
  if (p.coupling < 0.0) throw SimulationError("learner: coupling must be >= 0");
  if (p.signal_drift_rate < 0.0) throw SimulationError("learner: signal_drift_rate must be >= 0");
  if (!(p.signal_floor > 0.0 && p.signal_floor <= 1.0))
    throw SimulationError("learner: signal_floor must lie in (0, 1]");
  if (p.initial_mastery < 0.0 || p.initial_mastery > 1.0)
    throw SimulationError("learner: initial_mastery must lie in [0, 1]");
  if (p.forgetting_rate < 0.0 || p.forgetting_rate > 1.0)
    throw SimulationError("learner: forgetting_rate must lie in [0, 1]");
}

class SurrogateLearner {
 public:
  SurrogateLearner(std::span<const SignalEntry> base, LearnerParams params) : params_(params) {
    validate(params_);
    if (base.empty()) throw SimulationError("SurrogateLearner: empty population");
    ids_.reserve(base.size());
    base_.reserve(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      if (!std::isfinite(base[i].combined)) {
        throw SimulationError("SurrogateLearner: non-finite signal for '" + base[i].sample_id + "'");
      }
      if (!index_.emplace(base[i].sample_id, i).second) {
        throw SimulationError("SurrogateLearner: duplicate sample_id '" + base[i].sample_id + "'");
      }
      ids_.push_back(base[i].sample_id);
      base_.push_back(base[i].combined);
    }
    const auto [lo, hi] = std::minmax_element(base_.begin(), base_.end());
    lo_ = *lo;
    hi_ = *hi;
    mastery_.assign(base_.size(), params_.initial_mastery);
  }

  std::size_t size() const noexcept { return base_.size(); }
  const LearnerParams& params() const noexcept { return params_; }
  const std::string& id(std::size_t i) const { return ids_.at(i); }
  double base_signal(std::size_t i) const { return base_.at(i); }
  double mastery(std::size_t i) const { return mastery_.at(i); }
  std::span<const double> mastery() const noexcept { return mastery_; }
  std::span<const double> base_signals() const noexcept { return base_; }

  std::size_t index_of(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) throw SimulationError("unknown sample '" + std::string(id) + "'");
    return it->second;
  }

  void set_mastery(std::vector<double> m) {
    if (m.size() != mastery_.size()) throw SimulationError("set_mastery: size mismatch");
    for (double x : m) {
      if (!(x >= 0.0 && x <= 1.0)) throw SimulationError("set_mastery: value outside [0, 1]");
    }
    mastery_ = std::move(m);
  }

  /// Affine map of a combined signal from [min, max] of the base population
  /// onto [eps, 1], clipped.
  double signal_norm(double signal) const {
    const double eps = params_.signal_floor;
    if (hi_ - lo_ <= 0.0) return 1.0;
    const double t = (signal - lo_) / (hi_ - lo_);
    return std::clamp(eps + (1.0 - eps) * t, eps, 1.0);
  }

  /// base + rho * mastery * (2 - base): concentration rises as a sample is learned.
  double current_signal(std::size_t i) const {
    const double b = base_.at(i);
    return std::min(2.0, b + params_.signal_drift_rate * mastery_[i] * (2.0 - b));
  }

  bool answer(std::size_t i, Rng& rng) const { return answer_with(i, uniform01(rng)); }
  /// Correct iff u < mastery, for a uniform draw u.
  bool answer_with(std::size_t i, double u) const { return u < mastery_.at(i); }

  void learn(std::span<const std::size_t> batch) {
    // Rates come from the pre-update state so batch order never matters.
    std::vector<double> rate(batch.size());
    for (std::size_t k = 0; k < batch.size(); ++k) {
      const double s = signal_norm(current_signal(batch[k]));
      rate[k] = params_.learn_rate_scale * std::pow(s, params_.coupling);
    }
    for (std::size_t k = 0; k < batch.size(); ++k) {
      double& m = mastery_.at(batch[k]);
      m = std::clamp(m + rate[k] * (1.0 - m), 0.0, 1.0);
    }
  }

  void forget(std::span<const std::size_t> idxs) {
    for (auto i : idxs) mastery_.at(i) *= (1.0 - params_.forgetting_rate);
  }

  double mean_mastery() const {
    double s = 0.0;
    for (double m : mastery_) s += m;
    return s / static_cast<double>(mastery_.size());
  }

 private:
  LearnerParams params_;
  std::vector<std::string> ids_;
  std::vector<double> base_;
  std::vector<double> mastery_;
  std::unordered_map<std::string, std::size_t> index_;
  double lo_ = 0.0;
  double hi_ = 0.0;
};

/// Bernoulli(mastery) draw for one sample.
inline bool surrogate_answer(const SurrogateLearner& learner, std::string_view sample_id, Rng& rng) {
  return learner.answer(learner.index_of(sample_id), rng);
}

inline SurrogateLearner surrogate_learn(SurrogateLearner learner,
                                        std::span<const std::string> batch_ids) {
  if (batch_ids.empty()) throw SimulationError("surrogate_learn: empty batch");
  std::vector<std::size_t> idx;
  idx.reserve(batch_ids.size());
  for (const auto& id : batch_ids) idx.push_back(learner.index_of(id));
  learner.learn(idx);
  return learner;
}

inline double signal_drift(const SurrogateLearner& learner, std::string_view sample_id) {
  return learner.current_signal(learner.index_of(sample_id));
}

// ---------------------------------------------------------------------------
// Run configuration.

enum class RunMode {
  gain,
  uniform,
  sequential_sorted,
  acc_only_update,
  angle_only_update,
  accuracy_filter_baseline,
};

inline std::string_view to_string(RunMode m) {
  switch (m) {
    case RunMode::gain: return "gain";
    case RunMode::uniform: return "uniform";
    case RunMode::sequential_sorted: return "sequential_sorted";
    case RunMode::acc_only_update: return "acc_only_update";
    case RunMode::angle_only_update: return "angle_only_update";
    case RunMode::accuracy_filter_baseline: return "accuracy_filter_baseline";
  }
  return "?";
}

inline std::optional<RunMode> parse_run_mode(std::string_view s) {
  for (auto m : {RunMode::gain, RunMode::uniform, RunMode::sequential_sorted,
                 RunMode::acc_only_update, RunMode::angle_only_update,
                 RunMode::accuracy_filter_baseline}) {
    if (s == to_string(m)) return m;
  }
  return std::nullopt;
}

/// Training pool restriction for the data-efficiency presets.
enum class Subset { full, top_half, uniform_half, bottom_half };

inline std::string_view to_string(Subset s) {
  switch (s) {
    case Subset::full: return "full";
    case Subset::top_half: return "top_half";
    case Subset::uniform_half: return "uniform_half";
    case Subset::bottom_half: return "bottom_half";
  }
  return "?";
}

inline std::optional<Subset> parse_subset(std::string_view s) {
  for (auto v : {Subset::full, Subset::top_half, Subset::uniform_half, Subset::bottom_half}) {
    if (s == to_string(v)) return v;
  }
  return std::nullopt;
}

struct RunConfig {
  RunMode mode = RunMode::gain;
  std::size_t steps = 100;
  std::uint64_t seed = 42;
  Hyper hyper;
  SigmaPolicy sigma;
  LearnerParams learner;
  double mastery_threshold = 0.8;
  /// End the run as soon as the threshold is reached.
  bool stop_at_threshold = false;
  Subset subset = Subset::full;
  /// Steps (0 = initial state) at which the full mastery vector is kept.
  std::vector<std::size_t> snapshot_steps;
  std::size_t histogram_bins = 10;
};

/// Reference run on a population of n samples: batch n/8, snapshot at a quarter run.
inline RunConfig reference_config(std::size_t n, RunMode mode = RunMode::gain,
                                  std::uint64_t seed = 42) {
  RunConfig cfg;
  cfg.mode = mode;
  cfg.seed = seed;
  cfg.hyper.n_batch = std::max<std::size_t>(1, n / 8);
  cfg.snapshot_steps = {cfg.steps / 4};
  return cfg;
}

inline void validate(const RunConfig& cfg, std::size_t population) {
  if (cfg.steps == 0) throw SimulationError("run: steps must be >= 1");
  if (cfg.hyper.n_batch == 0) throw SimulationError("run: n_batch must be >= 1");
  std::size_t pool = cfg.subset == Subset::full ? population : population / 2;
  if (cfg.hyper.n_batch > pool) {
    throw SimulationError("run: n_batch " + std::to_string(cfg.hyper.n_batch) +
                          " exceeds training pool of " + std::to_string(pool));
  }
  validate(cfg.learner);
}

struct StepRecord {
  std::size_t step = 0;  ///< 1-based
  std::vector<std::string> sampled_ids;
  double mean_acc = 0.0;
  double mean_signal = 0.0;
  double mu = 0.0;       ///< Gaussian mean used to draw this batch
  double mu_next = 0.0;  ///< after the update
  double mean_mastery = 0.0;  ///< population mean after learning
};

struct MasterySnapshot {
  std::size_t step = 0;
  std::vector<double> mastery;
};

struct EpochHistogram {
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::vector<std::size_t> counts;  ///< equal-width mastery bins over [0, 1]
};

struct RunTrace {
  RunMode mode = RunMode::gain;
  std::vector<StepRecord> records;
  std::vector<MasterySnapshot> snapshots;
  std::vector<EpochHistogram> epochs;
  std::optional<std::size_t> steps_to_threshold;
  double final_mean_mastery = 0.0;

  const MasterySnapshot* snapshot_at(std::size_t step) const {
    for (const auto& s : snapshots)
      if (s.step == step) return &s;
    return nullptr;
  }
};

/// Everything needed to continue a run bit-exactly.
struct SimulationState {
  SchedulerState scheduler;
  std::vector<double> mastery;
  std::vector<std::size_t> active_pool;  ///< accuracy_filter_baseline only
  std::optional<std::size_t> steps_to_threshold;
};

inline std::vector<std::size_t> mastery_histogram(std::span<const double> mastery, std::size_t bins) {
  std::vector<std::size_t> counts(bins, 0);
  for (double m : mastery) {
    auto b = static_cast<std::size_t>(m * static_cast<double>(bins));
    counts[std::min(b, bins - 1)]++;
  }
  return counts;
}

/// Algorithm driver. One step draws a batch, lets the learner answer, trains
/// it, aggregates feedback with the current (drifted) signals and moves mu.
class Simulation {
 public:
  Simulation(RunConfig cfg, std::span<const SignalEntry> signals)
      : cfg_(std::move(cfg)),
        signals_(signals.begin(), signals.end()),
        learner_(signals, cfg_.learner) {
    validate(cfg_, signals_.size());
    ranked_ = rank(signals_);
    build_pool();
    state_.scheduler = init_state(pool_.size(), cfg_.hyper, cfg_.sigma, cfg_.seed);
    state_.mastery.assign(learner_.mastery().begin(), learner_.mastery().end());
    if (cfg_.mode == RunMode::accuracy_filter_baseline) refill_active();
    record_observers(0);
  }

  /// Continue from a saved state.
  Simulation(RunConfig cfg, std::span<const SignalEntry> signals, SimulationState resume)
      : Simulation(std::move(cfg), signals) {
    if (resume.mastery.size() != learner_.size()) {
      throw SimulationError("resume: mastery vector does not match the dataset");
    }
    trace_.snapshots.clear();
    trace_.epochs.clear();
    learner_.set_mastery(resume.mastery);
    state_ = std::move(resume);
  }

  const RunConfig& config() const noexcept { return cfg_; }
  const RankedDataset& ranked() const noexcept { return ranked_; }
  const SurrogateLearner& learner() const noexcept { return learner_; }
  const RunTrace& trace() const noexcept { return trace_; }
  std::size_t step() const noexcept { return state_.scheduler.step; }
  bool done() const noexcept {
    return step() >= cfg_.steps || (cfg_.stop_at_threshold && state_.steps_to_threshold);
  }

  SimulationState state() const {
    SimulationState s = state_;
    s.mastery.assign(learner_.mastery().begin(), learner_.mastery().end());
    return s;
  }

  const StepRecord& advance() {
    if (done()) throw SimulationError("advance: run already complete");
    const std::size_t t = step() + 1;
    StepRecord rec;
    rec.step = t;
    rec.mu = state_.scheduler.mu;

    const auto batch = draw_batch();
    std::vector<double> accs;
    std::vector<double> sigs;
    accs.reserve(batch.size());
    sigs.reserve(batch.size());
    std::vector<std::size_t> solved;
    for (auto i : batch) {
      const bool correct = learner_.answer_with(i, keyed_uniform(cfg_.seed, t, i));
      accs.push_back(correct ? 1.0 : 0.0);
      sigs.push_back(learner_.current_signal(i));
      rec.sampled_ids.push_back(learner_.id(i));
      if (correct) solved.push_back(i);
    }
    learner_.learn(batch);

    if (cfg_.mode == RunMode::accuracy_filter_baseline) {
      discard(solved);
      if (learner_.params().forgetting_rate > 0.0) learner_.forget(discarded());
    }

    const BatchFeedback fb = aggregate_feedback(accs, sigs);
    rec.mean_acc = fb.mean_acc;
    rec.mean_signal = fb.mean_signal;

    const std::size_t n_pool = pool_.size();
    switch (cfg_.mode) {
      case RunMode::gain:
        state_.scheduler = update_mu(state_.scheduler, fb, n_pool);
        break;
      case RunMode::acc_only_update:
        state_.scheduler = update_mu(state_.scheduler, fb, n_pool, {true, false});
        break;
      case RunMode::angle_only_update:
        state_.scheduler = update_mu(state_.scheduler, fb, n_pool, {false, true});
        break;
      default:
        state_.scheduler.step += 1;
        break;
    }
    rec.mu_next = state_.scheduler.mu;
    rec.mean_mastery = learner_.mean_mastery();
    if (!state_.steps_to_threshold && rec.mean_mastery >= cfg_.mastery_threshold) {
      state_.steps_to_threshold = t;
    }
    trace_.records.push_back(std::move(rec));
    record_observers(t);
    return trace_.records.back();
  }

  const RunTrace& run_to_end() {
    while (!done()) advance();
    trace_.mode = cfg_.mode;
    trace_.steps_to_threshold = state_.steps_to_threshold;
    trace_.final_mean_mastery = learner_.mean_mastery();
    return trace_;
  }

  std::size_t epoch_length() const {
    return (pool_.size() + cfg_.hyper.n_batch - 1) / cfg_.hyper.n_batch;
  }

 private:
  void build_pool() {
    const std::size_t n = ranked_.size();
    // pool_ holds original indices in rank order.
    std::vector<std::size_t> by_rank(n);
    for (std::size_t r = 0; r < n; ++r) by_rank[r] = ranked_[r].original_index;
    switch (cfg_.subset) {
      case Subset::full:
        pool_ = by_rank;
        break;
      case Subset::top_half:
        pool_.assign(by_rank.begin(), by_rank.begin() + static_cast<std::ptrdiff_t>(n / 2));
        break;
      case Subset::bottom_half:
        pool_.assign(by_rank.end() - static_cast<std::ptrdiff_t>(n / 2), by_rank.end());
        break;
      case Subset::uniform_half: {
        Rng rng = make_rng(cfg_.seed, {0x5B});
        std::vector<double> flat(n, 0.0);
        auto picked = weighted_sample_without_replacement(flat, n / 2, rng);
        std::sort(picked.begin(), picked.end());  // keep rank order
        for (auto r : picked) pool_.push_back(by_rank[r]);
        break;
      }
    }
  }

  std::vector<std::size_t> draw_batch() {
    auto& sch = state_.scheduler;
    const std::size_t n_pool = pool_.size();
    const std::size_t k = cfg_.hyper.n_batch;
    std::vector<std::size_t> positions;
    switch (cfg_.mode) {
      case RunMode::gain:
      case RunMode::acc_only_update:
      case RunMode::angle_only_update:
        positions = sample_ranks(sch, n_pool);
        break;
      case RunMode::uniform: {
        std::vector<double> flat(n_pool, 0.0);
        positions = weighted_sample_without_replacement(flat, k, sch.rng);
        break;
      }
      case RunMode::sequential_sorted:
        for (std::size_t j = 0; j < k; ++j) positions.push_back((sch.step * k + j) % n_pool);
        break;
      case RunMode::accuracy_filter_baseline: {
        if (state_.active_pool.empty()) refill_active();
        const std::size_t take = std::min(k, state_.active_pool.size());
        std::vector<double> flat(state_.active_pool.size(), 0.0);
        auto picks = weighted_sample_without_replacement(flat, take, sch.rng);
        std::vector<std::size_t> batch;
        for (auto p : picks) batch.push_back(state_.active_pool[p]);
        return batch;
      }
    }
    std::vector<std::size_t> batch;
    batch.reserve(positions.size());
    for (auto p : positions) batch.push_back(pool_[p]);
    return batch;
  }

  // The filter baseline draws from the pool in original (unranked) order.
  void refill_active() {
    state_.active_pool = pool_;
    std::sort(state_.active_pool.begin(), state_.active_pool.end());
  }

  void discard(const std::vector<std::size_t>& solved) {
    auto& act = state_.active_pool;
    for (auto i : solved) {
      auto it = std::lower_bound(act.begin(), act.end(), i);
      if (it != act.end() && *it == i) act.erase(it);
    }
  }

  std::vector<std::size_t> discarded() const {
    std::vector<std::size_t> sorted_pool = pool_;
    std::sort(sorted_pool.begin(), sorted_pool.end());
    std::vector<std::size_t> out;
    std::set_difference(sorted_pool.begin(), sorted_pool.end(), state_.active_pool.begin(),
                        state_.active_pool.end(), std::back_inserter(out));
    return out;
  }

  void record_observers(std::size_t t) {
    const auto& snaps = cfg_.snapshot_steps;
    if (t == 0 || t == cfg_.steps || std::find(snaps.begin(), snaps.end(), t) != snaps.end()) {
      trace_.snapshots.push_back({t, {learner_.mastery().begin(), learner_.mastery().end()}});
    }
    if (t % epoch_length() == 0) {
      trace_.epochs.push_back(
          {t / epoch_length(), t, mastery_histogram(learner_.mastery(), cfg_.histogram_bins)});
    }
  }

  RunConfig cfg_;
  std::vector<SignalEntry> signals_;
  SurrogateLearner learner_;
  RankedDataset ranked_;
  std::vector<std::size_t> pool_;
  SimulationState state_;
  RunTrace trace_;
};

inline RunTrace run(const RunConfig& cfg, std::span<const SignalEntry> signals) {
  Simulation sim(cfg, signals);
  return sim.run_to_end();
}

// ---------------------------------------------------------------------------
// Analysis helpers.

struct SignalBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  std::optional<double> mean_mastery;  ///< absent for empty bins
};

/// Per-signal-bin mean mastery at a snapshot step. Bins are equal-width over
/// the base signal range.
inline std::vector<SignalBin> datawise_snapshot(const RunTrace& trace, const SurrogateLearner& learner,
                                                std::size_t signal_bins, std::size_t step) {
  if (signal_bins == 0) throw SimulationError("datawise_snapshot: need at least one bin");
  const MasterySnapshot* snap = trace.snapshot_at(step);
  if (!snap) throw SimulationError("datawise_snapshot: no snapshot at step " + std::to_string(step));
  const auto base = learner.base_signals();
  const auto [lo_it, hi_it] = std::minmax_element(base.begin(), base.end());
  const double lo = *lo_it;
  const double width = (*hi_it - lo) / static_cast<double>(signal_bins);

  std::vector<SignalBin> bins(signal_bins);
  std::vector<double> sums(signal_bins, 0.0);
  for (std::size_t b = 0; b < signal_bins; ++b) {
    bins[b].lo = lo + width * static_cast<double>(b);
    bins[b].hi = lo + width * static_cast<double>(b + 1);
  }
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::size_t b = width > 0.0 ? static_cast<std::size_t>((base[i] - lo) / width) : 0;
    b = std::min(b, signal_bins - 1);
    bins[b].count++;
    sums[b] += snap->mastery[i];
  }
  for (std::size_t b = 0; b < signal_bins; ++b) {
    if (bins[b].count > 0) bins[b].mean_mastery = sums[b] / static_cast<double>(bins[b].count);
  }
  return bins;
}

/// Average ranks (1-based) with ties sharing their mean rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw SimulationError("pearson: need >= 2 paired values");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

/// Spearman correlation between bin centre and bin mean mastery over non-empty bins.
inline double bin_spearman(std::span<const SignalBin> bins) {
  std::vector<double> centre;
  std::vector<double> mastery;
  for (const auto& b : bins) {
    if (!b.mean_mastery) continue;
    centre.push_back(0.5 * (b.lo + b.hi));
    mastery.push_back(*b.mean_mastery);
  }
  return spearman(centre, mastery);
}

}  // namespace gainsched
