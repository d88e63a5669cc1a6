#pragma once

// Weight-gradient identities for a linear layer a = x W and for a SiLU FFN
// block z = x W_u, A = SiLU(z), y = A W_d.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include "gainsched/numkit.hpp"

namespace gainsched {

struct LinearLayerGrad {
  Matrix x;       ///< m x d token inputs
  Matrix grad_a;  ///< m x h upstream gradient dL/da
};

inline void validate(const LinearLayerGrad& g) {
  if (g.x.rows() != g.grad_a.rows()) {
    throw ShapeError("LinearLayerGrad: x is " + g.x.shape() + " but grad_a is " +
                     g.grad_a.shape());
  }
}

/// dL/dW = x^T dL/da (d x h).
inline Matrix grad_direct(const LinearLayerGrad& g) {
  validate(g);
  return matmul(transpose(g.x), g.grad_a);
}

/// ||dL/dW||_F^2 as the token-pair sum
///   sum_ij ||x_i|| ||x_j|| cos(x_i, x_j) <g_i, g_j>.
inline double grad_norm_decomposed(const LinearLayerGrad& g) {
  validate(g);
  const std::size_t m = g.x.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double ni = norm(g.x.row(i));
    for (std::size_t j = 0; j < m; ++j) {
      const double nj = norm(g.x.row(j));
      const double cos_ij = cosine(g.x.row(i), g.x.row(j));
      total += ni * nj * cos_ij * dot(g.grad_a.row(i), g.grad_a.row(j));
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// FFN neuron gradients.

enum class FfnLoss { sum, sum_of_squares };

inline FfnLoss parse_ffn_loss(std::string_view name) {
  if (name == "sum") return FfnLoss::sum;
  if (name == "sum_of_squares" || name == "sum-of-squares") return FfnLoss::sum_of_squares;
  throw std::invalid_argument("unknown loss '" + std::string(name) +
                              "' (expected sum or sum_of_squares)");
}

inline std::string_view to_string(FfnLoss loss) {
  return loss == FfnLoss::sum ? "sum" : "sum_of_squares";
}

struct FfnProbe {
  Matrix w_u;  ///< d x h
  Matrix w_d;  ///< h x d
  Matrix x;    ///< m x d
  FfnLoss loss = FfnLoss::sum;
};

inline void validate(const FfnProbe& p) {
  if (p.x.cols() != p.w_u.rows() || p.w_u.cols() != p.w_d.rows() ||
      p.w_d.cols() != p.x.cols()) {
    throw ShapeError("FfnProbe: x " + p.x.shape() + ", w_u " + p.w_u.shape() + ", w_d " +
                     p.w_d.shape() + " do not compose");
  }
}

struct FfnForward {
  Matrix z;  ///< pre-activation, m x h
  Matrix a;  ///< SiLU(z)
  Matrix y;  ///< output, m x d
};

inline FfnForward ffn_forward(const FfnProbe& p) {
  validate(p);
  FfnForward f;
  f.z = matmul(p.x, p.w_u);
  f.a = silu(f.z);
  f.y = matmul(f.a, p.w_d);
  return f;
}

inline double ffn_loss_value(const FfnProbe& p) {
  const auto f = ffn_forward(p);
  double l = 0.0;
  for (double v : f.y.values()) l += p.loss == FfnLoss::sum ? v : v * v;
  return l;
}

/// dL/dy for the loss library.
inline Matrix ffn_output_grad(const FfnProbe& p, const Matrix& y) {
  if (p.loss == FfnLoss::sum) return Matrix(y.rows(), y.cols(), 1.0);
  return scaled(y, 2.0);
}

struct FfnGrads {
  Matrix w_u;  ///< dL/dW_u, d x h
  Matrix w_d;  ///< dL/dW_d, h x d
};

/// Assembles both weight gradients neuron by neuron:
///   (dL/dW_u)[:, j] = sum_i x_i * (dL/dA)[i, j] * SiLU'(z[i, j])
///   (dL/dW_d)[j, :] = sum_i A[i, j] * (dL/dy)_i
/// Column j of W_u and row j of W_d both belong to neuron j.
inline FfnGrads ffn_neuron_grads(const FfnProbe& p) {
  const auto f = ffn_forward(p);
  const Matrix grad_y = ffn_output_grad(p, f.y);
  const Matrix grad_act = matmul(grad_y, transpose(p.w_d));  // m x h

  const std::size_t m = p.x.rows();
  const std::size_t d = p.x.cols();
  const std::size_t h = p.w_u.cols();
  FfnGrads g{Matrix(d, h), Matrix(h, d)};
  for (std::size_t j = 0; j < h; ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      const double up = grad_act(i, j) * silu_prime(f.z(i, j));
      const double act = f.a(i, j);
      for (std::size_t k = 0; k < d; ++k) {
        g.w_u(k, j) += p.x(i, k) * up;
        g.w_d(j, k) += act * grad_y(i, k);
      }
    }
  }
  return g;
}

/// Per-neuron L2 norm of its W_u gradient column.
inline Vector neuron_grad_mass(const FfnProbe& p) {
  const auto g = ffn_neuron_grads(p);
  Vector mass(g.w_u.cols());
  for (std::size_t j = 0; j < g.w_u.cols(); ++j) mass[j] = norm(g.w_u.col_vector(j));
  return mass;
}

/// Central finite differences of the end-to-end loss with respect to every
/// weight entry. Used by the verification battery as the independent route.
inline FfnGrads ffn_numeric_grads(const FfnProbe& p, double step = 1e-6) {
  validate(p);
  FfnGrads g{Matrix(p.w_u.rows(), p.w_u.cols()), Matrix(p.w_d.rows(), p.w_d.cols())};
  FfnProbe work = p;
  auto sweep = [&](Matrix& weights, Matrix& out) {
    auto w = weights.values();
    auto o = out.values();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double saved = w[k];
      w[k] = saved + step;
      const double up = ffn_loss_value(work);
      w[k] = saved - step;
      const double down = ffn_loss_value(work);
      w[k] = saved;
      o[k] = (up - down) / (2.0 * step);
    }
  };
  sweep(work.w_u, g.w_u);
  sweep(work.w_d, g.w_d);
  return g;
}

}  // namespace gainsched
