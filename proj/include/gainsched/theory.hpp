#pragma once

// Checks of the attention and FFN angle identities on toy weights.
//
// The identities are exact when weights are exactly scaled-orthogonal
// (W W^T = c I); the checks below construct such weights so the comparisons
// are algebraic. check_orthogonality measures how far a given matrix is from
// that regime and never asserts.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>

#include "gainsched/numkit.hpp"
#include "gainsched/rng.hpp"

namespace gainsched {

class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct OrthogonalityReport {
  double lambda_hat = 0.0;     ///< trace(W W^T) / rows
  double rel_deviation = 0.0;  ///< ||W W^T - lambda_hat I||_F / ||lambda_hat I||_F
};

inline OrthogonalityReport check_orthogonality(const Matrix& w) {
  if (w.rows() > w.cols()) {
    throw ShapeError("check_orthogonality: expected rows <= cols, got " + w.shape());
  }
  const Matrix gram = matmul(w, transpose(w));
  const std::size_t r = w.rows();
  double trace = 0.0;
  for (std::size_t i = 0; i < r; ++i) trace += gram(i, i);
  OrthogonalityReport rep;
  rep.lambda_hat = trace / static_cast<double>(r);
  double dev = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      const double target = i == j ? rep.lambda_hat : 0.0;
      dev += (gram(i, j) - target) * (gram(i, j) - target);
    }
  }
  const double ref = std::abs(rep.lambda_hat) * std::sqrt(static_cast<double>(r));
  rep.rel_deviation = ref > 0.0 ? std::sqrt(dev) / ref : std::sqrt(dev);
  return rep;
}

namespace detail {

inline void require_nondegenerate(const Vector& a, const Vector& b, const char* what) {
  if (a.dim() != b.dim()) throw ShapeError(std::string(what) + ": dimension mismatch");
  if (norm(a) < kDegenerateNorm || norm(b) < kDegenerateNorm) {
    throw DegenerateInputError(std::string(what) + ": zero-norm input");
  }
}

// Query/key pair with W_q W_k^T = theta I: both are sqrt(|theta|) Q for one
// orthogonal Q, with the sign of theta carried by W_k.
struct QkPair {
  Matrix w_q;
  Matrix w_k;
};

inline QkPair make_qk_pair(std::size_t dim, double theta, Rng& rng) {
  const Matrix q = random_scaled_orthogonal(dim, dim, 1.0, rng);
  const double s = std::sqrt(std::abs(theta));
  return {scaled(q, s), scaled(q, theta < 0 ? -s : s)};
}

}  // namespace detail

struct QkCheck {
  double logit = 0.0;      ///< y_i_hat W_q (y_j_hat W_k)^T / sqrt(d), via the matrices
  double predicted = 0.0;  ///< theta cos(y_i, y_j) / sqrt(d)
};

/// Attention logit versus its angle-only prediction under W_q W_k^T = theta I.
inline QkCheck check_qk_proportionality(const Vector& y_i, const Vector& y_j, double theta,
                                        std::size_t d, std::uint64_t seed = 1) {
  detail::require_nondegenerate(y_i, y_j, "check_qk_proportionality");
  Rng rng = make_rng(seed, {0x71u});
  const auto qk = detail::make_qk_pair(y_i.dim(), theta, rng);
  const Vector yi = layernorm_direction(y_i);
  const Vector yj = layernorm_direction(y_j);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  QkCheck out;
  out.logit = dot(vecmat(yi, qk.w_q), vecmat(yj, qk.w_k)) * scale;
  out.predicted = theta * cosine(y_i, y_j) * scale;
  return out;
}

struct ProjectionCheck {
  double lhs = 0.0;  ///< <y_i_hat W_q, y_m_hat W_k> * ||V_i|| * cos(V_i, V_m)
  double rhs = 0.0;  ///< theta * lambda * cos^2(y_i, y_m) / ||V_m||
};

/// Pre-softmax interaction of token i on token m under W_q W_k^T = theta I and
/// W_v W_v^T = lam I.
inline ProjectionCheck check_interaction_projection(const Vector& y_i, const Vector& y_m,
                                                    double theta, double lam,
                                                    std::uint64_t seed = 1) {
  detail::require_nondegenerate(y_i, y_m, "check_interaction_projection");
  if (lam <= 0.0) throw PreconditionError("check_interaction_projection: lambda must be > 0");
  Rng rng = make_rng(seed, {0x1b});
  const std::size_t dim = y_i.dim();
  const auto qk = detail::make_qk_pair(dim, theta, rng);
  const Matrix w_v = random_scaled_orthogonal(dim, dim, lam, rng);

  const Vector yi = layernorm_direction(y_i);
  const Vector ym = layernorm_direction(y_m);
  const Vector v_i = vecmat(yi, w_v);
  const Vector v_m = vecmat(ym, w_v);

  ProjectionCheck out;
  out.lhs = dot(vecmat(yi, qk.w_q), vecmat(ym, qk.w_k)) * norm(v_i) * cosine(v_i, v_m);
  // ||V_m|| = sqrt(lam) because y_m_hat is a unit vector.
  const double c = cosine(y_i, y_m);
  out.rhs = theta * lam * c * c / std::sqrt(lam);
  return out;
}

struct SinkConfig {
  Vector y_i;  ///< sink token (first token of the segment)
  Vector y_k;  ///< another token of the same segment
  double alpha_ii = 0.5;
  double alpha_ik = 0.25;
  double alpha_kk = 0.5;
  double beta = 0.5;  ///< W_v W_v^T = beta I
};

struct SinkCheck {
  double cos_in = 0.0;   ///< cos(y_i, y_k)
  double cos_out = 0.0;  ///< cos(O_i, O_k)
  /// beta < 1, beta cos_in^2 < 1, cos_in >= 0 and the pair is not collinear.
  bool precondition_met = false;
};

inline void validate(const SinkConfig& cfg) {
  auto in_unit = [](double a) { return a > 0.0 && a < 1.0; };
  if (!in_unit(cfg.alpha_ii) || !in_unit(cfg.alpha_ik) || !in_unit(cfg.alpha_kk)) {
    throw PreconditionError("SinkConfig: attention scores must lie in (0, 1)");
  }
  if (cfg.beta <= 0.0) throw PreconditionError("SinkConfig: beta must be > 0");
  detail::require_nondegenerate(cfg.y_i, cfg.y_k, "SinkConfig");
}

/// Two-term sink approximation: O_i = a_ii V_i, O_k = a_ik V_i + a_kk V_k with
/// V = LN(y) W_v.
inline SinkCheck check_sink_concentration(const SinkConfig& cfg, std::uint64_t seed = 1) {
  validate(cfg);
  Rng rng = make_rng(seed, {0x5c});
  const std::size_t dim = cfg.y_i.dim();
  const Matrix w_v = random_scaled_orthogonal(dim, dim, cfg.beta, rng);
  const Vector v_i = vecmat(layernorm_direction(cfg.y_i), w_v);
  const Vector v_k = vecmat(layernorm_direction(cfg.y_k), w_v);
  const Vector o_i = scaled(v_i, cfg.alpha_ii);
  const Vector o_k = scaled(v_i, cfg.alpha_ik) + scaled(v_k, cfg.alpha_kk);

  SinkCheck out;
  out.cos_in = cosine(cfg.y_i, cfg.y_k);
  out.cos_out = cosine(o_i, o_k);
  out.precondition_met = cfg.beta < 1.0 && cfg.beta * out.cos_in * out.cos_in < 1.0 &&
                         out.cos_in >= 0.0 && out.cos_in < 1.0 - 1e-9;
  return out;
}

struct AnglePreservation {
  double cos_pre = 0.0;
  double cos_post = 0.0;
};

/// cos(a_i W_d, a_m W_d) versus cos(a_i, a_m). Requires W_d W_d^T = eta I
/// to 1e-12 relative.
inline AnglePreservation check_orthogonal_angle_preservation(const Vector& a_i, const Vector& a_m,
                                                             const Matrix& w_d) {
  if (a_i.dim() != w_d.rows() || a_m.dim() != w_d.rows()) {
    throw ShapeError("check_orthogonal_angle_preservation: vectors do not match w_d " +
                     w_d.shape());
  }
  const auto rep = check_orthogonality(w_d);
  if (rep.lambda_hat <= 0.0 || rep.rel_deviation > 1e-12) {
    throw PreconditionError("check_orthogonal_angle_preservation: w_d is not scaled-orthogonal "
                            "(rel deviation " + std::to_string(rep.rel_deviation) + ")");
  }
  return {cosine(a_i, a_m), cosine(vecmat(a_i, w_d), vecmat(a_m, w_d))};
}

struct ActivationOverlap {
  std::size_t overlap_count = 0;  ///< neurons with positive pre-activation for both tokens
  double cos_activations = 0.0;   ///< cos(SiLU(x_i W_u), SiLU(x_m W_u))
};

inline ActivationOverlap activation_overlap(const Vector& x_i, const Vector& x_m,
                                            const Matrix& w_u) {
  if (x_i.dim() != w_u.rows() || x_m.dim() != w_u.rows()) {
    throw ShapeError("activation_overlap: tokens of dim " + std::to_string(x_i.dim()) +
                     " do not compose with w_u " + w_u.shape());
  }
  const Vector z_i = vecmat(x_i, w_u);
  const Vector z_m = vecmat(x_m, w_u);
  ActivationOverlap out;
  Vector a_i(z_i.dim());
  Vector a_m(z_m.dim());
  for (std::size_t j = 0; j < z_i.dim(); ++j) {
    if (z_i[j] > 0.0 && z_m[j] > 0.0) ++out.overlap_count;
    a_i[j] = silu(z_i[j]);
    a_m[j] = silu(z_m[j]);
  }
  out.cos_activations = cosine(a_i, a_m);
  return out;
}

}  // namespace gainsched
