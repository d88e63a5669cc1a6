#pragma once

// Angle-informed data scheduling: rank samples by combined signal, sample
// batches from a Gaussian over rank positions, and move the Gaussian mean with
// batch accuracy and batch signal feedback.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "gainsched/rng.hpp"

namespace gainsched {

class SchedulerError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SignalEntry {
  std::string sample_id;
  double combined = 0.0;
};

struct RankedEntry {
  std::string sample_id;
  double combined = 0.0;
  std::size_t original_index = 0;

  friend bool operator==(const RankedEntry&, const RankedEntry&) = default;
};

/// Samples sorted by combined signal, descending; ties by original index.
class RankedDataset {
 public:
  RankedDataset() = default;
  explicit RankedDataset(std::vector<RankedEntry> entries) : entries_(std::move(entries)) {
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (!seen.insert(entries_[i].sample_id).second) {
        throw SchedulerError("RankedDataset: duplicate sample_id '" + entries_[i].sample_id + "'");
      }
      if (i > 0 && !before(entries_[i - 1], entries_[i])) {
        throw SchedulerError("RankedDataset: entries out of order at position " +
                             std::to_string(i));
      }
    }
  }

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const RankedEntry& operator[](std::size_t rank) const { return entries_[rank]; }
  const std::vector<RankedEntry>& entries() const noexcept { return entries_; }

  /// Strict ranking order.
  static bool before(const RankedEntry& a, const RankedEntry& b) {
    if (a.combined != b.combined) return a.combined > b.combined;
    return a.original_index < b.original_index;
  }

 private:
  std::vector<RankedEntry> entries_;
};

inline RankedDataset rank(std::span<const SignalEntry> signals) {
  if (signals.empty()) throw SchedulerError("rank: empty input");
  std::vector<RankedEntry> entries;
  entries.reserve(signals.size());
  for (std::size_t i = 0; i < signals.size(); ++i) {
    if (std::isnan(signals[i].combined)) {
      throw SchedulerError("rank: NaN signal at row " + std::to_string(i));
    }
    entries.push_back({signals[i].sample_id, signals[i].combined, i});
  }
  std::sort(entries.begin(), entries.end(), RankedDataset::before);
  return RankedDataset(std::move(entries));
}

// ---------------------------------------------------------------------------
// Gaussian rank policy.

/// Unnormalized log-weights -(i - mu)^2 / (2 sigma^2) over 0-based ranks.
inline std::vector<double> gaussian_log_weights(std::size_t n, double mu, double sigma) {
  if (n == 0) throw SchedulerError("gaussian_probs: N must be >= 1");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw SchedulerError("gaussian_probs: sigma must be > 0");
  std::vector<double> lw(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(i) - mu;
    lw[i] = -dx * dx / (2.0 * sigma * sigma);
  }
  return lw;
}

/// P(i) = exp(-(i - mu)^2 / (2 sigma^2)) / Z. Entries far beyond a few sigma
/// can underflow to zero when sigma is tiny.
inline std::vector<double> gaussian_probs(std::size_t n, double mu, double sigma) {
  auto p = gaussian_log_weights(n, mu, sigma);
  const double mx = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (auto& x : p) {
    x = std::exp(x - mx);
    z += x;
  }
  for (auto& x : p) x /= z;
  return p;
}

/// Weighted sampling of k distinct positions without replacement by
/// exponential-clock order sampling: item i gets key E_i / w_i with
/// E_i ~ Exp(1), and the k smallest keys win (the same ordering as
/// u_i^(1/w_i), largest first). Works in log space so tiny weights are safe.
/// One uniform is drawn per item in index order.
inline std::vector<std::size_t> weighted_sample_without_replacement(
    std::span<const double> log_weights, std::size_t k, Rng& rng) {
  const std::size_t n = log_weights.size();
  if (k > n) {
    throw SchedulerError("sample: batch of " + std::to_string(k) + " exceeds " +
                         std::to_string(n) + " items");
  }
  std::vector<double> keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double e = -std::log(uniform_open01(rng));
    keys[i] = std::log(e) - log_weights[i];
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto cmp = [&](std::size_t a, std::size_t b) {
    if (keys[a] != keys[b]) return keys[a] < keys[b];
    return a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), cmp);
  idx.resize(k);
  return idx;
}

// ---------------------------------------------------------------------------
// State and updates.

struct Hyper {
  double alpha = 2.0;  ///< accuracy sensitivity
  double beta = 0.5;   ///< target accuracy
  double gamma = 0.5;  ///< angle sensitivity
  std::size_t n_batch = 1;

  friend bool operator==(const Hyper&, const Hyper&) = default;
};

struct SigmaPolicy {
  enum class Kind { fraction_of_n, fixed };
  Kind kind = Kind::fraction_of_n;
  /// Divisor of N for fraction_of_n (sigma = max(N / value, 1)); sigma itself for fixed.
  double value = 6.0;

  double resolve(std::size_t n) const {
    if (kind == Kind::fixed) return value;
    return std::max(static_cast<double>(n) / value, 1.0);
  }
};

struct SchedulerState {
  double mu = 0.0;
  double sigma = 1.0;
  std::size_t step = 0;
  Hyper hyper;
  Rng rng;
};

inline SchedulerState init_state(std::size_t n, const Hyper& hyper, SigmaPolicy sigma_policy,
                                 std::uint64_t seed) {
  if (n == 0) throw SchedulerError("init_state: N must be >= 1");
  if (hyper.n_batch == 0 || hyper.n_batch > n) {
    throw SchedulerError("init_state: n_batch " + std::to_string(hyper.n_batch) +
                         " must lie in [1, " + std::to_string(n) + "]");
  }
  if (sigma_policy.value <= 0.0) throw SchedulerError("init_state: sigma policy value must be > 0");
  SchedulerState s;
  s.mu = 0.0;
  s.sigma = sigma_policy.resolve(n);
  if (!(s.sigma > 0.0)) throw SchedulerError("init_state: sigma must be > 0");
  s.step = 0;
  s.hyper = hyper;
  s.rng = make_rng(seed, {0x5C4E});
  return s;
}

/// Rank positions of the next batch under the current Gaussian. Advances state.rng.
inline std::vector<std::size_t> sample_ranks(SchedulerState& state, std::size_t n) {
  const auto lw = gaussian_log_weights(n, state.mu, state.sigma);
  return weighted_sample_without_replacement(lw, state.hyper.n_batch, state.rng);
}

inline std::vector<std::string> sample_batch(SchedulerState& state, const RankedDataset& ranked) {
  const auto ranks = sample_ranks(state, ranked.size());
  std::vector<std::string> ids;
  ids.reserve(ranks.size());
  for (auto r : ranks) ids.push_back(ranked[r].sample_id);
  return ids;
}

struct BatchFeedback {
  double mean_acc = 0.0;
  double mean_signal = 0.0;
};

inline BatchFeedback aggregate_feedback(std::span<const double> accs, std::span<const double> sigs) {
  if (accs.empty() || accs.size() != sigs.size()) {
    throw SchedulerError("aggregate_feedback: need equal, non-zero lengths");
  }
  double acc = 0.0;
  double sig = 0.0;
  for (std::size_t i = 0; i < accs.size(); ++i) {
    if (!(accs[i] >= 0.0 && accs[i] <= 1.0)) {
      throw SchedulerError("aggregate_feedback: accuracy " + std::to_string(accs[i]) +
                           " outside [0, 1]");
    }
    acc += accs[i];
    sig += sigs[i];
  }
  const double n = static_cast<double>(accs.size());
  return {acc / n, sig / n};
}

/// Which feedback terms drive the mean update.
struct MuTerms {
  bool accuracy = true;
  bool angle = true;
};

/// mu' = clamp(mu + n/2 tanh(alpha (acc - beta)) + n/2 tanh(gamma C), 0, N - 1).
inline SchedulerState update_mu(const SchedulerState& state, const BatchFeedback& fb,
                                std::size_t n_total, MuTerms terms = {}) {
  const auto& hp = state.hyper;
  const double half = static_cast<double>(hp.n_batch) / 2.0;
  double delta = 0.0;
  if (terms.accuracy) delta += half * std::tanh(hp.alpha * (fb.mean_acc - hp.beta));
  if (terms.angle) delta += half * std::tanh(hp.gamma * fb.mean_signal);
  SchedulerState next = state;
  const double hi = n_total == 0 ? 0.0 : static_cast<double>(n_total - 1);
  next.mu = std::clamp(state.mu + delta, 0.0, hi);
  next.step = state.step + 1;
  return next;
}

}  // namespace gainsched
