#pragma once

// Randomized verification battery for the gradient and angle identities.
// Each check reports a worst-case figure against its tolerance; a named fault
// can be injected to prove the battery actually detects a broken identity.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gainsched/gradcheck.hpp"
#include "gainsched/numkit.hpp"
#include "gainsched/rng.hpp"
#include "gainsched/simloop.hpp"
#include "gainsched/theory.hpp"
#include "gainsched/toymodel.hpp"

namespace gainsched {

struct CheckResult {
  std::string name;
  std::string metric;  ///< max_rel_error, max_abs_error, min_margin or correlation
  double value = 0.0;
  double threshold = 0.0;
  std::size_t trials = 0;
  std::size_t failures = 0;
  bool passed = false;
  double seconds = 0.0;
};

struct VerifyOptions {
  std::uint64_t seed = 1;
  /// Name of a check whose computed side is perturbed by a relative 1e-3.
  std::optional<std::string> inject_fault;
};

struct VerifyReport {
  std::vector<CheckResult> checks;

  bool all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
  }
  const CheckResult* find(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return &c;
    return nullptr;
  }
};

inline const std::vector<std::string>& verify_check_names() {
  static const std::vector<std::string> names = {
      "grad_decomposition",  "frobenius_outer",      "ffn_finite_difference",
      "qk_proportionality",  "interaction_projection", "angle_preservation",
      "toy_orthogonality",   "sink_concentration",   "activation_overlap"};
  return names;
}

namespace detail {

inline double rel_err(double got, double want, double floor = 1e-30) {
  return std::abs(got - want) / std::max(std::abs(want), floor);
}

class CheckRun {
 public:
  CheckRun(std::string name, std::string metric, double threshold, const VerifyOptions& opts)
      : start_(std::chrono::steady_clock::now()) {
    res_.name = std::move(name);
    res_.metric = std::move(metric);
    res_.threshold = threshold;
    faulty_ = opts.inject_fault && *opts.inject_fault == res_.name;
  }

  bool faulty() const { return faulty_; }

  /// Value as computed by the code under test, possibly corrupted.
  double tamper(double v) const { return faulty_ ? v * (1.0 + 1e-3) + 1e-3 : v; }

  void record_error(double err) {
    ++res_.trials;
    if (!(err < res_.threshold)) ++res_.failures;
    res_.value = std::max(res_.value, std::isnan(err) ? INFINITY : err);
  }

  void record_margin(double margin, double slack) {
    if (res_.trials == 0) res_.value = margin;
    ++res_.trials;
    if (!(margin > -slack)) ++res_.failures;
    res_.value = std::min(res_.value, margin);
  }

  CheckResult finish() {
    res_.passed = res_.failures == 0 && res_.trials > 0;
    res_.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    return res_;
  }

  CheckResult finish_statistic(double value, bool passed) {
    res_.value = value;
    res_.passed = passed;
    res_.failures = passed ? 0 : 1;
    res_.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    return res_;
  }

  CheckResult& result() { return res_; }

 private:
  CheckResult res_;
  bool faulty_ = false;
  std::chrono::steady_clock::time_point start_;
};

inline std::size_t draw_size(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + uniform_index(rng, hi - lo + 1);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Gradient identities.

inline CheckResult verify_grad_decomposition(const VerifyOptions& opts, std::size_t trials = 100) {
  detail::CheckRun run("grad_decomposition", "max_rel_error", 1e-9, opts);
  Rng rng = make_rng(opts.seed, {0x6D});
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t m = detail::draw_size(rng, 1, 8);
    const std::size_t d = detail::draw_size(rng, 1, 16);
    const std::size_t h = detail::draw_size(rng, 1, 8);
    LinearLayerGrad g{gaussian_matrix(m, d, 1.0, rng), gaussian_matrix(m, h, 1.0, rng)};
    const double direct = frobenius_norm_sq(grad_direct(g));
    const double decomposed = run.tamper(grad_norm_decomposed(g));
    run.record_error(detail::rel_err(decomposed, direct));
  }
  return run.finish();
}

inline CheckResult verify_frobenius_outer(const VerifyOptions& opts, std::size_t trials = 100) {
  detail::CheckRun run("frobenius_outer", "max_rel_error", 1e-12, opts);
  Rng rng = make_rng(opts.seed, {0x0F});
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t p = detail::draw_size(rng, 1, 12);
    const std::size_t q = detail::draw_size(rng, 1, 12);
    const Vector u = gaussian_vector(p, 1.0, rng);
    const Vector v = gaussian_vector(q, 1.0, rng);
    const Vector w = gaussian_vector(p, 1.0, rng);
    const Vector z = gaussian_vector(q, 1.0, rng);
    const double lhs = run.tamper(frobenius_inner(outer(u, v), outer(w, z)));
    const double rhs = dot(u, w) * dot(v, z);
    // Scale by the magnitudes so cancellation in small inner products is not
    // mistaken for an identity failure.
    const double scale = norm(u) * norm(v) * norm(w) * norm(z);
    run.record_error(std::abs(lhs - rhs) / std::max(scale, 1e-30));
  }
  return run.finish();
}

/// Relative error of analytic against numeric gradients, entry-wise with a
/// floor of 1e-3 on the denominator.
inline double fd_max_rel_error(const Matrix& analytic, const Matrix& numeric) {
  double worst = 0.0;
  for (std::size_t k = 0; k < analytic.values().size(); ++k) {
    const double a = analytic.values()[k];
    const double n = numeric.values()[k];
    worst = std::max(worst, std::abs(a - n) / std::max(std::abs(n), 1e-3));
  }
  return worst;
}

inline CheckResult verify_ffn_finite_difference(const VerifyOptions& opts,
                                                std::size_t probes = 50) {
  detail::CheckRun run("ffn_finite_difference", "max_rel_error", 1e-5, opts);
  Rng rng = make_rng(opts.seed, {0xFD});
  for (std::size_t t = 0; t < probes; ++t) {
    const std::size_t m = detail::draw_size(rng, 1, 4);
    const std::size_t d = detail::draw_size(rng, 1, 5);
    const std::size_t h = detail::draw_size(rng, 1, 6);
    FfnProbe p{gaussian_matrix(d, h, 0.7, rng), gaussian_matrix(h, d, 0.7, rng),
               gaussian_matrix(m, d, 1.0, rng), FfnLoss::sum};
    for (auto loss : {FfnLoss::sum, FfnLoss::sum_of_squares}) {
      p.loss = loss;
      auto analytic = ffn_neuron_grads(p);
      const auto numeric = ffn_numeric_grads(p, 1e-6);
      if (!analytic.w_u.values().empty()) {
        analytic.w_u.values()[0] = run.tamper(analytic.w_u.values()[0]);
      }
      run.record_error(std::max(fd_max_rel_error(analytic.w_u, numeric.w_u),
                                fd_max_rel_error(analytic.w_d, numeric.w_d)));
    }
  }
  return run.finish();
}

// ---------------------------------------------------------------------------
// Exact-orthogonality identities.

inline CheckResult verify_qk_proportionality(const VerifyOptions& opts, std::size_t trials = 200) {
  detail::CheckRun run("qk_proportionality", "max_abs_error", 1e-10, opts);
  Rng rng = make_rng(opts.seed, {0x9C});
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t d = detail::draw_size(rng, 2, 16);
    const Vector yi = gaussian_vector(d, 1.0, rng);
    const Vector yj = gaussian_vector(d, 1.0, rng);
    const double theta = uniform(rng, -2.0, 2.0);
    const auto c = check_qk_proportionality(yi, yj, theta, d, opts.seed + t);
    run.record_error(std::abs(run.tamper(c.logit) - c.predicted));
  }
  return run.finish();
}

inline CheckResult verify_interaction_projection(const VerifyOptions& opts,
                                                 std::size_t trials = 200) {
  detail::CheckRun run("interaction_projection", "max_rel_error", 1e-10, opts);
  Rng rng = make_rng(opts.seed, {0x1F});
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t d = detail::draw_size(rng, 2, 16);
    const Vector yi = gaussian_vector(d, 1.0, rng);
    const Vector ym = gaussian_vector(d, 1.0, rng);
    const double theta = uniform(rng, 0.1, 2.0);
    const double lam = uniform(rng, 0.1, 2.0);
    const auto c = check_interaction_projection(yi, ym, theta, lam, opts.seed + t);
    run.record_error(detail::rel_err(run.tamper(c.lhs), c.rhs, theta * lam * 1e-6));
  }
  return run.finish();
}

inline CheckResult verify_angle_preservation(const VerifyOptions& opts, std::size_t trials = 200) {
  detail::CheckRun run("angle_preservation", "max_abs_error", 1e-12, opts);
  Rng rng = make_rng(opts.seed, {0xA9});
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t h = detail::draw_size(rng, 2, 12);
    const std::size_t d = detail::draw_size(rng, h, 16);
    const Matrix w_d = random_scaled_orthogonal(h, d, uniform(rng, 0.2, 3.0), rng);
    const Vector ai = gaussian_vector(h, 1.0, rng);
    const Vector am = gaussian_vector(h, 1.0, rng);
    const auto c = check_orthogonal_angle_preservation(ai, am, w_d);
    run.record_error(std::abs(run.tamper(c.cos_post) - c.cos_pre));
  }
  return run.finish();
}

inline CheckResult verify_toy_orthogonality(const VerifyOptions& opts) {
  detail::CheckRun run("toy_orthogonality", "max_rel_deviation", 1e-10, opts);
  for (std::size_t d : {4u, 8u, 16u}) {
    ToyConfig cfg;
    cfg.d_model = d;
    cfg.d_ffn = d;
    cfg.n_layers = 2;
    cfg.seed = opts.seed;
    cfg.weight_mode = WeightMode::scaled_orthogonal;
    const auto w = init_weights(cfg);
    for (const auto& b : w.blocks) {
      for (const Matrix* m : {&b.w_q, &b.w_k, &b.w_v, &b.w_o, &b.w_u, &b.w_d}) {
        run.record_error(run.tamper(check_orthogonality(*m).rel_deviation));
      }
    }
  }
  return run.finish();
}

// ---------------------------------------------------------------------------
// Sink concentration (Monte-Carlo) and activation overlap (statistical).

/// Random precondition-satisfying sink configuration: non-negative input
/// cosine, beta in (0.05, 0.95), scores from softmaxes of random logits.
inline SinkConfig random_sink_config(Rng& rng, std::size_t d) {
  SinkConfig cfg;
  for (;;) {
    cfg.y_i = gaussian_vector(d, 1.0, rng);
    cfg.y_k = gaussian_vector(d, 1.0, rng);
    if (cosine(cfg.y_i, cfg.y_k) >= 0.0) break;
  }
  cfg.beta = uniform(rng, 0.05, 0.95);
  std::vector<double> lk(3);
  for (auto& x : lk) x = 2.0 * standard_normal(rng);
  const Vector pk = softmax(lk);
  cfg.alpha_ik = pk[0];
  cfg.alpha_kk = pk[1];
  std::vector<double> li(2);
  for (auto& x : li) x = 2.0 * standard_normal(rng);
  cfg.alpha_ii = softmax(li)[0];
  return cfg;
}

inline CheckResult verify_sink_concentration(const VerifyOptions& opts, std::size_t trials = 1000) {
  detail::CheckRun run("sink_concentration", "min_margin", 0.0, opts);
  Rng rng = make_rng(opts.seed, {0x51});
  std::size_t t = 0;
  while (run.result().trials < trials) {
    const std::size_t d = detail::draw_size(rng, 2, 16);
    const auto cfg = random_sink_config(rng, d);
    const auto c = check_sink_concentration(cfg, opts.seed * 7919 + t++);
    if (!c.precondition_met) continue;
    // The injected fault pushes the output cosine 1e-3 below the input one.
    const double out = run.faulty() ? c.cos_in - 1e-3 : c.cos_out;
    run.record_margin(out - c.cos_in, 1e-12);
  }
  return run.finish();
}

/// Pearson correlation between co-activation count and activation cosine
/// over pairs x_m = cos(phi) x_i + sin(phi) noise.
inline double observation2_correlation(std::uint64_t seed, std::size_t pairs = 500,
                                       std::size_t d = 16, std::size_t h = 64) {
  Rng rng = make_rng(seed, {0x02});
  const Matrix w_u = gaussian_matrix(d, h, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  std::vector<double> overlap;
  std::vector<double> cosines;
  for (std::size_t p = 0; p < pairs; ++p) {
    const Vector xi = gaussian_vector(d, 1.0, rng);
    const Vector noise = gaussian_vector(d, 1.0, rng);
    const double phi = uniform(rng, 0.0, std::acos(-1.0));
    const Vector xm = scaled(xi, std::cos(phi)) + scaled(noise, std::sin(phi));
    const auto a = activation_overlap(xi, xm, w_u);
    overlap.push_back(static_cast<double>(a.overlap_count));
    cosines.push_back(a.cos_activations);
  }
  return pearson(overlap, cosines);
}

inline CheckResult verify_activation_overlap(const VerifyOptions& opts) {
  detail::CheckRun run("activation_overlap", "correlation", 0.5, opts);
  run.result().trials = 500;
  const double r = observation2_correlation(opts.seed);
  const double reported = run.faulty() ? r - 1.0 : r;
  return run.finish_statistic(reported, reported > 0.5);
}

inline VerifyReport run_verification(const VerifyOptions& opts = {}) {
  VerifyReport rep;
  rep.checks.push_back(verify_grad_decomposition(opts));
  rep.checks.push_back(verify_frobenius_outer(opts));
  rep.checks.push_back(verify_ffn_finite_difference(opts));
  rep.checks.push_back(verify_qk_proportionality(opts));
  rep.checks.push_back(verify_interaction_projection(opts));
  rep.checks.push_back(verify_angle_preservation(opts));
  rep.checks.push_back(verify_toy_orthogonality(opts));
  rep.checks.push_back(verify_sink_concentration(opts));
  rep.checks.push_back(verify_activation_overlap(opts));
  return rep;
}

}  // namespace gainsched
