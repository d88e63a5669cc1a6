#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

#include "gainsched/scheduler.hpp"

using namespace gainsched;

namespace {

std::vector<SignalEntry> entries(std::vector<double> v) {
  std::vector<SignalEntry> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back({"id" + std::to_string(i), v[i]});
  return out;
}

/// Inclusion probability of each item in a k-subset drawn by successive
/// proportional selection, enumerating every ordered draw sequence.
std::vector<double> enumerate_inclusion(const std::vector<double>& w, std::size_t k) {
  std::vector<double> incl(w.size(), 0.0);
  std::vector<bool> used(w.size(), false);
  std::vector<std::size_t> chosen;
  std::function<void(double)> rec = [&](double p) {
    if (chosen.size() == k) {
      for (auto c : chosen) incl[c] += p;
      return;
    }
    double rest = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i)
      if (!used[i]) rest += w[i];
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (used[i]) continue;
      used[i] = true;
      chosen.push_back(i);
      rec(p * w[i] / rest);
      chosen.pop_back();
      used[i] = false;
    }
  };
  rec(1.0);
  return incl;
}

}  // namespace

TEST(Rank, Examples) {
  const auto single = rank(entries({0.4}));
  ASSERT_EQ(single.size(), 1u);
  EXPECT_EQ(single[0].sample_id, "id0");

  const auto ties = rank(entries({1.0, 1.0, 1.0}));
  for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(ties[r].original_index, r);

  const auto hand = rank(entries({0.3, 1.7, 1.1}));
  EXPECT_EQ(hand[0].original_index, 1u);
  EXPECT_EQ(hand[1].original_index, 2u);
  EXPECT_EQ(hand[2].original_index, 0u);
}

TEST(Rank, Errors) {
  EXPECT_THROW(rank(std::vector<SignalEntry>{}), SchedulerError);
  EXPECT_THROW(rank(entries({0.1, NAN})), SchedulerError);
  std::vector<SignalEntry> dup{{"a", 1.0}, {"a", 2.0}};
  EXPECT_THROW(rank(dup), SchedulerError);
}

TEST(GaussianProbs, Examples) {
  EXPECT_EQ(gaussian_probs(1, 0.0, 1.0), std::vector<double>{1.0});
  const auto sym = gaussian_probs(3, 1.0, 0.37);
  EXPECT_DOUBLE_EQ(sym[0], sym[2]);
  const auto p = gaussian_probs(3, 1.0, 1.0);
  const double e = std::exp(-0.5), z = 1.0 + 2.0 * e;
  EXPECT_NEAR(p[0], e / z, 1e-15);
  EXPECT_NEAR(p[1], 1.0 / z, 1e-15);
  EXPECT_NEAR(p[0], 0.2741, 5e-5);
  EXPECT_NEAR(p[1], 0.4519, 5e-5);
  EXPECT_THROW(gaussian_probs(0, 0.0, 1.0), SchedulerError);
  EXPECT_THROW(gaussian_probs(3, 0.0, 0.0), SchedulerError);
}

TEST(GaussianProbs, NormalizedPositiveUnimodal) {
  std::mt19937_64 gen(7);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + gen() % 300;
    const double mu = std::uniform_real_distribution<double>(0, n - 1)(gen);
    const double sigma = std::max(static_cast<double>(n) / 6.0, 1.0);
    const auto p = gaussian_probs(n, mu, sigma);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    const auto mode = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    EXPECT_LE(std::abs(static_cast<double>(mode) - mu), 0.5 + 1e-12);
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_GT(p[i], 0.0);
      if (i < mode) EXPECT_LE(p[i], p[i + 1]);
      if (i > mode) EXPECT_LE(p[i], p[i - 1]);
    }
  }
}

TEST(InitState, Examples) {
  Hyper h;
  const auto s = init_state(6000, h, {}, 1);
  EXPECT_EQ(s.mu, 0.0);
  EXPECT_EQ(s.sigma, 1000.0);
  EXPECT_EQ(s.step, 0u);
  EXPECT_EQ(init_state(1, h, {}, 1).sigma, 1.0);
  h.n_batch = 7;
  EXPECT_THROW(init_state(6, h, {}, 1), SchedulerError);
  EXPECT_THROW(init_state(6, Hyper{}, {SigmaPolicy::Kind::fixed, 0.0}, 1), SchedulerError);
}

TEST(SampleBatch, FullBatchIsPermutation) {
  const auto ranked = rank(entries({0.5, 0.1, 0.9, 0.3, 0.7}));
  Hyper h;
  h.n_batch = 5;
  auto s = init_state(5, h, {}, 3);
  const auto ids = sample_batch(s, ranked);
  EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), 5u);
}

TEST(SampleBatch, DeterministicForSeedAndDistinct) {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 0.0);
  const auto ranked = rank(entries(v));
  Hyper h;
  h.n_batch = 20;
  auto a = init_state(100, h, {}, 11);
  auto b = init_state(100, h, {}, 11);
  for (int t = 0; t < 5; ++t) {
    const auto ia = sample_batch(a, ranked);
    EXPECT_EQ(ia, sample_batch(b, ranked));
    EXPECT_EQ(std::set<std::string>(ia.begin(), ia.end()).size(), 20u);
  }
}

TEST(SampleBatch, ConcentratedMassAlwaysIncluded) {
  const auto ranked = rank(entries({5, 4, 3, 2, 1, 0}));
  Hyper h;
  h.n_batch = 2;
  auto s = init_state(6, h, {SigmaPolicy::Kind::fixed, 0.05}, 5);
  s.mu = 3.0;
  for (int t = 0; t < 200; ++t) {
    const auto ids = sample_batch(s, ranked);
    EXPECT_TRUE(ids[0] == ranked[3].sample_id || ids[1] == ranked[3].sample_id);
  }
}

TEST(SampleBatch, MeanRankMatchesTruncatedGaussian) {
  const std::size_t n = 1000;
  Hyper h;
  h.n_batch = 1;
  auto s = init_state(n, h, {}, 2024);
  const double sigma = s.sigma;
  double sum = 0.0;
  const int draws = 100000;
  for (int t = 0; t < draws; ++t) sum += static_cast<double>(sample_ranks(s, n)[0]);
  // Normal(0, sigma) truncated to [-0.5, N - 0.5], the continuous version of
  // the rank lattice.
  auto phi = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); };
  auto cdf = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
  const double a = -0.5 / sigma, b = (static_cast<double>(n) - 0.5) / sigma;
  const double analytic = sigma * (phi(a) - phi(b)) / (cdf(b) - cdf(a));
  EXPECT_NEAR(sum / draws, analytic, 5.0);
}

TEST(SampleBatch, InclusionMatchesEnumeration) {
  std::mt19937_64 gen(17);
  for (std::size_t n = 2; n <= 6; ++n) {
    for (std::size_t k = 1; k < n; ++k) {
      const double mu = std::uniform_real_distribution<double>(0, n - 1)(gen);
      const double sigma = 0.5 + (gen() % 100) / 50.0;
      const auto lw = gaussian_log_weights(n, mu, sigma);
      std::vector<double> w;
      for (double x : lw) w.push_back(std::exp(x));
      const auto want = enumerate_inclusion(w, k);

      Rng rng = make_rng(n * 10 + k);
      const int trials = 20000;
      std::vector<int> hits(n, 0);
      for (int t = 0; t < trials; ++t)
        for (auto i : weighted_sample_without_replacement(lw, k, rng)) hits[i]++;
      const auto top = static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
      for (std::size_t i = 0; i < n; ++i) {
        const double p = want[i];
        const double sd = std::sqrt(p * (1 - p) / trials);
        const double bound = (i == top ? 3.0 : 4.5) * sd + 1e-9;
        EXPECT_NEAR(static_cast<double>(hits[i]) / trials, p, bound)
            << "n=" << n << " k=" << k << " item " << i;
      }
    }
  }
}

TEST(SampleBatch, OversizedBatchRejected) {
  Rng rng = make_rng(1);
  std::vector<double> lw(3, 0.0);
  EXPECT_THROW(weighted_sample_without_replacement(lw, 4, rng), SchedulerError);
}

TEST(AggregateFeedback, Examples) {
  const auto one = aggregate_feedback(std::vector<double>{1.0}, std::vector<double>{0.7});
  EXPECT_EQ(one.mean_acc, 1.0);
  EXPECT_EQ(one.mean_signal, 0.7);
  const auto mid = aggregate_feedback(std::vector<double>{0, 1}, std::vector<double>{1.0, 2.0});
  EXPECT_EQ(mid.mean_acc, 0.5);
  EXPECT_EQ(mid.mean_signal, 1.5);
  EXPECT_THROW(aggregate_feedback(std::vector<double>{}, std::vector<double>{}), SchedulerError);
  EXPECT_THROW(aggregate_feedback(std::vector<double>{1.5}, std::vector<double>{0}), SchedulerError);
}

TEST(AggregateFeedback, MatchesIndependentSummation) {
  std::mt19937_64 gen(19);
  std::uniform_real_distribution<double> u(0, 1), c(-2, 2);
  std::vector<double> accs(1024), sigs(1024);
  long double sa = 0, ss = 0;
  for (std::size_t i = 0; i < 1024; ++i) {
    accs[i] = u(gen);
    sigs[i] = c(gen);
    sa += accs[i];
    ss += sigs[i];
  }
  const auto fb = aggregate_feedback(accs, sigs);
  EXPECT_NEAR(fb.mean_acc, static_cast<double>(sa / 1024), 1e-12);
  EXPECT_NEAR(fb.mean_signal, static_cast<double>(ss / 1024), 1e-12);
}

TEST(UpdateMu, Examples) {
  Hyper h;
  h.n_batch = 1024;
  auto s = init_state(10000, h, {}, 1);
  const auto fixed = update_mu(s, {0.5, 0.0}, 10000);
  EXPECT_EQ(fixed.mu, 0.0);
  EXPECT_EQ(fixed.step, 1u);
  EXPECT_NEAR(update_mu(s, {1.0, 0.0}, 10000).mu, 389.94, 0.005);
  EXPECT_NEAR(update_mu(s, {1.0, 0.0}, 10000).mu, 512.0 * std::tanh(1.0), 1e-12);
  EXPECT_EQ(update_mu(s, {0.0, 0.0}, 10000).mu, 0.0);
  s.mu = 4000.0;
  EXPECT_EQ(update_mu(s, {0.5, 0.0}, 10000).mu, 4000.0);
}

TEST(UpdateMu, PreservesOtherFields) {
  Hyper h;
  h.n_batch = 8;
  auto s = init_state(100, h, {}, 4);
  s.mu = 50.0;
  const auto next = update_mu(s, {0.9, 0.4}, 100);
  EXPECT_EQ(next.sigma, s.sigma);
  EXPECT_EQ(next.hyper, s.hyper);
  EXPECT_EQ(serialize_rng(next.rng), serialize_rng(s.rng));
}

TEST(UpdateMu, MonotoneInAccuracyAndSignal) {
  std::mt19937_64 gen(23);
  std::uniform_real_distribution<double> u(0, 1), c(-2, 2);
  Hyper h;
  h.n_batch = 64;
  auto s = init_state(1000, h, {}, 1);
  for (int t = 0; t < 2000; ++t) {
    s.mu = std::uniform_real_distribution<double>(0, 999)(gen);
    double a1 = u(gen), a2 = u(gen), c1 = c(gen), c2 = c(gen);
    if (a1 > a2) std::swap(a1, a2);
    if (c1 > c2) std::swap(c1, c2);
    EXPECT_LE(update_mu(s, {a1, c1}, 1000).mu, update_mu(s, {a2, c1}, 1000).mu);
    EXPECT_LE(update_mu(s, {a1, c1}, 1000).mu, update_mu(s, {a1, c2}, 1000).mu);
  }
}

TEST(UpdateMu, ClampHoldsUnderFuzzedFeedback) {
  std::mt19937_64 gen(29);
  std::uniform_real_distribution<double> u(0, 1), c(-2, 2);
  for (int seq = 0; seq < 10000; ++seq) {
    const std::size_t n = 1 + gen() % 50;
    Hyper h;
    h.n_batch = 1 + gen() % n;
    h.alpha = 4 * u(gen);
    h.gamma = 4 * u(gen);
    auto s = init_state(n, h, {}, seq);
    for (int t = 0; t < 20; ++t) {
      s = update_mu(s, {u(gen), c(gen)}, n);
      ASSERT_GE(s.mu, 0.0);
      ASSERT_LE(s.mu, static_cast<double>(n - 1));
    }
  }
}

TEST(UpdateMu, TermsCanBeDisabled) {
  Hyper h;
  h.n_batch = 10;
  auto s = init_state(100, h, {}, 1);
  s.mu = 50.0;
  EXPECT_NEAR(update_mu(s, {1.0, 1.0}, 100, {true, false}).mu, 50.0 + 5.0 * std::tanh(1.0), 1e-12);
  EXPECT_NEAR(update_mu(s, {1.0, 1.0}, 100, {false, true}).mu, 50.0 + 5.0 * std::tanh(0.5), 1e-12);
}
