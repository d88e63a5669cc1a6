#pragma once

// Angle-concentration signals over a sample's token hidden states.
//
// Tokens [0, prompt_len) form the shared prefix (system prompt and few-shot
// examples); tokens [prompt_len, m) form the question.
//
//   c_intra = mean cosine over all (question, question) pairs, diagonal included
//   c_inter = mean cosine over all (question, prefix) pairs
//   combined = c_intra + weight_c * c_inter

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gainsched/numkit.hpp"

namespace gainsched {

struct HiddenStates {
  Matrix tokens;  ///< m x d, one row per token.
  std::size_t prompt_len = 0;

  std::size_t num_tokens() const noexcept { return tokens.rows(); }
  std::size_t question_len() const noexcept { return tokens.rows() - prompt_len; }
};

/// Validates 0 <= prompt_len < m, m >= 1.
inline HiddenStates make_hidden_states(Matrix tokens, std::size_t prompt_len) {
  if (tokens.rows() == 0) throw DegenerateInputError("HiddenStates: no tokens");
  if (prompt_len >= tokens.rows()) {
    throw DegenerateInputError("HiddenStates: no question tokens (prompt_len " +
                               std::to_string(prompt_len) + " >= m " +
                               std::to_string(tokens.rows()) + ")");
  }
  return HiddenStates{std::move(tokens), prompt_len};
}

enum class DiagonalPolicy { include, exclude };

struct SignalOptions {
  double weight_c = 1.0;
  DiagonalPolicy diagonal = DiagonalPolicy::include;
};

struct AngleSignal {
  double c_intra = 0.0;
  double c_inter = 0.0;
  double combined = 0.0;
  double weight_c = 1.0;
  /// False when the sample has no prefix (prompt_len == 0); c_inter is then 0.
  bool inter_defined = true;
};

/// m x m token cosine matrix. Zero-norm tokens get 0 everywhere, diagonal included.
inline Matrix cosine_matrix(const HiddenStates& h) {
  const std::size_t m = h.num_tokens();
  Matrix out(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i; j < m; ++j) {
      const double c = cosine(h.tokens.row(i), h.tokens.row(j));
      out(i, j) = c;
      out(j, i) = c;
    }
  }
  return out;
}

namespace detail {

// Sum of unit directions over rows [begin, end); zero-norm rows contribute nothing,
// matching the degenerate-cosine convention.
inline std::vector<double> direction_sum(const Matrix& x, std::size_t begin, std::size_t end,
                                         double* self_sq = nullptr) {
  std::vector<double> acc(x.cols(), 0.0);
  double diag = 0.0;
  for (std::size_t r = begin; r < end; ++r) {
    const auto row = x.row(r);
    const double n = norm(row);
    if (n < kDegenerateNorm) continue;
    for (std::size_t c = 0; c < x.cols(); ++c) acc[c] += row[c] / n;
    diag += 1.0;
  }
  if (self_sq) *self_sq = diag;
  return acc;
}

}  // namespace detail

/// Sum_{i,j in S} cos = ||sum_{i in S} x_i/||x_i|| ||^2, so both signals reduce
/// to inner products of per-segment direction sums: O(m d) instead of O(m^2 d).
inline AngleSignal angle_concentration(const HiddenStates& h, SignalOptions opts = {}) {
  const std::size_t m = h.num_tokens();
  const std::size_t n = h.prompt_len;
  if (m == 0 || n >= m) throw DegenerateInputError("angle_concentration: no question tokens");
  const std::size_t q = m - n;

  double diag = 0.0;
  const auto question = detail::direction_sum(h.tokens, n, m, &diag);
  const double intra_sum = dot(question, question);

  AngleSignal s;
  s.weight_c = opts.weight_c;
  if (opts.diagonal == DiagonalPolicy::include) {
    s.c_intra = intra_sum / static_cast<double>(q * q);
  } else if (q == 1) {
    s.c_intra = 1.0;
  } else {
    s.c_intra = (intra_sum - diag) / static_cast<double>(q * (q - 1));
  }

  if (n == 0) {
    s.c_inter = 0.0;
    s.inter_defined = false;
  } else {
    const auto prefix = detail::direction_sum(h.tokens, 0, n);
    s.c_inter = dot(question, prefix) / static_cast<double>(q * n);
  }
  s.combined = s.c_intra + opts.weight_c * s.c_inter;
  return s;
}

inline double combined_signal(const HiddenStates& h, double weight_c) {
  return angle_concentration(h, SignalOptions{weight_c, DiagonalPolicy::include}).combined;
}

/// One AngleSignal per layer, in order. All layers must share m and n.
inline std::vector<AngleSignal> layer_trace(std::span<const HiddenStates> per_layer,
                                            SignalOptions opts = {}) {
  std::vector<AngleSignal> out;
  out.reserve(per_layer.size());
  for (const auto& layer : per_layer) {
    if (layer.num_tokens() != per_layer.front().num_tokens() ||
        layer.prompt_len != per_layer.front().prompt_len) {
      throw ShapeError("layer_trace: layers disagree on token count or prompt length");
    }
    out.push_back(angle_concentration(layer, opts));
  }
  return out;
}

}  // namespace gainsched
