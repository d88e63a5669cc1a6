#pragma once

// Deterministic mini-transformer used to produce hidden states.
//
//   x0 = embedding[token]
//   per block (pre-norm, single head, causal):
//     u = LN(x); alpha = softmax(u W_q (u W_k)^T / sqrt(d) + sink_bias, causal)
//     h = x + (alpha u W_v) W_o
//     x' = h + SiLU(LN(h) W_u) W_d
//
// LN is direction normalization (unit norm). forward() returns the embedding
// output followed by every block output.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gainsched/numkit.hpp"
#include "gainsched/rng.hpp"
#include "gainsched/signals.hpp"

namespace gainsched {

enum class WeightMode { random_gaussian, scaled_orthogonal, sink_biased };

inline std::string_view to_string(WeightMode m) {
  switch (m) {
    case WeightMode::random_gaussian: return "random_gaussian";
    case WeightMode::scaled_orthogonal: return "scaled_orthogonal";
    case WeightMode::sink_biased: return "sink_biased";
  }
  return "?";
}

inline WeightMode parse_weight_mode(std::string_view s) {
  if (s == "random_gaussian") return WeightMode::random_gaussian;
  if (s == "scaled_orthogonal") return WeightMode::scaled_orthogonal;
  if (s == "sink_biased") return WeightMode::sink_biased;
  throw std::invalid_argument("unknown weight_mode '" + std::string(s) + "'");
}

struct ToyConfig {
  std::size_t d_model = 16;
  std::size_t d_ffn = 32;
  std::size_t n_layers = 4;
  std::size_t vocab = 64;
  std::uint64_t seed = 7;
  WeightMode weight_mode = WeightMode::sink_biased;
  /// Additive attention-logit bias on segment-leading keys (sink_biased only).
  double sink_bias = 4.0;
};

inline void validate(const ToyConfig& cfg) {
  if (cfg.d_model == 0 || cfg.d_ffn == 0 || cfg.n_layers == 0 || cfg.vocab == 0) {
    throw std::invalid_argument("ToyConfig: all counts must be >= 1");
  }
  if (cfg.weight_mode == WeightMode::sink_biased && cfg.n_layers < 2) {
    throw std::invalid_argument("ToyConfig: sink_biased requires n_layers >= 2");
  }
  if (cfg.weight_mode == WeightMode::scaled_orthogonal && cfg.d_ffn != cfg.d_model) {
    // W_u (d x h) and W_d (h x d) can both be row-orthogonal only when h == d.
    throw std::invalid_argument("ToyConfig: scaled_orthogonal requires d_ffn == d_model");
  }
}

struct BlockWeights {
  Matrix w_q, w_k, w_v, w_o;  ///< d x d
  Matrix w_u;                 ///< d x d_ffn
  Matrix w_d;                 ///< d_ffn x d
};

struct ToyWeights {
  ToyConfig config;
  Matrix embedding;  ///< vocab x d
  std::vector<BlockWeights> blocks;
  double sink_bias = 0.0;
};

struct SegmentedSequence {
  std::vector<std::size_t> token_ids;
  std::size_t prompt_len = 0;
  std::string sample_id;
};

inline ToyWeights init_weights(const ToyConfig& cfg) {
  validate(cfg);
  Rng rng = make_rng(cfg.seed, {0xE1});
  const std::size_t d = cfg.d_model;
  const std::size_t h = cfg.d_ffn;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));

  ToyWeights w;
  w.config = cfg;
  // Embedding rows have expected norm ~1, the same scale LN gives block inputs.
  w.embedding = gaussian_matrix(cfg.vocab, d, sd, rng);
  w.sink_bias = cfg.weight_mode == WeightMode::sink_biased ? cfg.sink_bias : 0.0;

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    BlockWeights b;
    switch (cfg.weight_mode) {
      case WeightMode::random_gaussian:
        b.w_q = gaussian_matrix(d, d, sd, rng);
        b.w_k = gaussian_matrix(d, d, sd, rng);
        b.w_v = gaussian_matrix(d, d, sd, rng);
        b.w_o = gaussian_matrix(d, d, sd, rng);
        b.w_u = gaussian_matrix(d, h, sd, rng);
        b.w_d = gaussian_matrix(h, d, 1.0 / std::sqrt(static_cast<double>(h)), rng);
        break;
      case WeightMode::scaled_orthogonal: {
        const Matrix q = random_scaled_orthogonal(d, d, 1.0, rng);
        b.w_q = q;
        b.w_k = q;  // W_q W_k^T = I
        b.w_v = random_scaled_orthogonal(d, d, 1.0, rng);
        b.w_o = random_scaled_orthogonal(d, d, 1.0, rng);
        b.w_u = random_scaled_orthogonal(d, h, 1.0, rng);
        b.w_d = random_scaled_orthogonal(h, d, 1.0, rng);
        break;
      }
      case WeightMode::sink_biased:
        // Angle-preserving value path so the sink pull is not scrambled; a
        // weak FFN keeps the attention mixing dominant.
        b.w_q = gaussian_matrix(d, d, sd, rng);
        b.w_k = gaussian_matrix(d, d, sd, rng);
        b.w_v = random_scaled_orthogonal(d, d, 1.0, rng);
        b.w_o = transpose(b.w_v);
        b.w_u = gaussian_matrix(d, h, sd, rng);
        b.w_d = gaussian_matrix(h, d, 0.25 / std::sqrt(static_cast<double>(h)), rng);
        break;
    }
    w.blocks.push_back(std::move(b));
  }
  return w;
}

/// Per-block intermediates, for diagnostics and identity checks.
struct BlockTrace {
  Matrix attention;  ///< m x m causal attention scores (rows sum to 1)
  Matrix ffn_act;    ///< m x d_ffn, SiLU(z)
  Matrix ffn_out;    ///< m x d, ffn_act W_d
};

struct ForwardResult {
  std::vector<HiddenStates> layers;  ///< n_layers + 1 entries
  std::vector<BlockTrace> blocks;
};

inline bool is_segment_start(std::size_t pos, std::size_t prompt_len) {
  return pos == 0 || (prompt_len > 0 && pos == prompt_len);
}

inline ForwardResult forward_traced(const ToyWeights& w, const SegmentedSequence& seq) {
  const std::size_t m = seq.token_ids.size();
  if (m == 0) throw std::invalid_argument("forward: empty sequence");
  if (seq.prompt_len >= m) throw std::invalid_argument("forward: prompt_len must be < length");
  const std::size_t d = w.embedding.cols();
  for (auto id : seq.token_ids) {
    if (id >= w.embedding.rows()) {
      throw std::out_of_range("forward: token id " + std::to_string(id) + " outside vocab of " +
                              std::to_string(w.embedding.rows()));
    }
  }

  Matrix x(m, d);
  for (std::size_t i = 0; i < m; ++i) {
    const auto e = w.embedding.row(seq.token_ids[i]);
    std::copy(e.begin(), e.end(), x.row_span(i).begin());
  }

  ForwardResult out;
  out.layers.push_back(HiddenStates{x, seq.prompt_len});
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  for (const auto& b : w.blocks) {
    BlockTrace trace;
    const Matrix u = layernorm_rows(x);
    const Matrix q = matmul(u, b.w_q);
    const Matrix k = matmul(u, b.w_k);
    const Matrix v = matmul(u, b.w_v);

    trace.attention = Matrix(m, m);
    Matrix mixed(m, d);
    std::vector<double> logits;
    for (std::size_t i = 0; i < m; ++i) {
      logits.assign(i + 1, 0.0);
      for (std::size_t j = 0; j <= i; ++j) {
        logits[j] = dot(q.row(i), k.row(j)) * inv_sqrt_d;
        if (is_segment_start(j, seq.prompt_len)) logits[j] += w.sink_bias;
      }
      const Vector alpha = softmax(logits);
      auto mixed_row = mixed.row_span(i);
      for (std::size_t j = 0; j <= i; ++j) {
        trace.attention(i, j) = alpha[j];
        const auto vj = v.row(j);
        for (std::size_t c = 0; c < d; ++c) mixed_row[c] += alpha[j] * vj[c];
      }
    }
    const Matrix h = add(x, matmul(mixed, b.w_o));

    const Matrix z = matmul(layernorm_rows(h), b.w_u);
    trace.ffn_act = silu(z);
    trace.ffn_out = matmul(trace.ffn_act, b.w_d);
    x = add(h, trace.ffn_out);

    out.layers.push_back(HiddenStates{x, seq.prompt_len});
    out.blocks.push_back(std::move(trace));
  }
  return out;
}

inline std::vector<HiddenStates> forward(const ToyWeights& w, const SegmentedSequence& seq) {
  return forward_traced(w, seq).layers;
}

// ---------------------------------------------------------------------------
// Synthetic segmented data.

struct SynthOptions {
  std::size_t prompt_len = 8;
  std::size_t min_question = 4;
  std::size_t max_question = 12;
  /// Upper bound of the per-sample probability that a question token repeats
  /// the sample's focus token. 0 gives fully random questions.
  double dispersion = 1.0;
  /// Probability that the focus token is drawn from the shared prefix.
  double prefix_focus = 0.5;
};

/// Shared prefix plus per-sample questions whose token repetition varies from
/// sample to sample, so the resulting signals spread over a wide range.
inline std::vector<SegmentedSequence> synth_dataset(const ToyConfig& cfg, std::size_t n_samples,
                                                    std::uint64_t seed, SynthOptions opts = {}) {
  if (n_samples == 0) throw std::invalid_argument("synth_dataset: n_samples must be >= 1");
  if (opts.min_question == 0 || opts.min_question > opts.max_question) {
    throw std::invalid_argument("synth_dataset: invalid question length range");
  }
  Rng prefix_rng = make_rng(seed, {0xA0});
  std::vector<std::size_t> prefix(opts.prompt_len);
  for (auto& t : prefix) t = uniform_index(prefix_rng, cfg.vocab);

  std::vector<SegmentedSequence> out;
  out.reserve(n_samples);
  for (std::size_t s = 0; s < n_samples; ++s) {
    Rng rng = make_rng(seed, {0xA1, s});
    const std::size_t qlen =
        opts.min_question + uniform_index(rng, opts.max_question - opts.min_question + 1);
    const double repeat_p = opts.dispersion * uniform01(rng);
    const bool from_prefix = opts.prompt_len > 0 && uniform01(rng) < opts.prefix_focus;
    const std::size_t focus =
        from_prefix ? prefix[uniform_index(rng, prefix.size())] : uniform_index(rng, cfg.vocab);

    SegmentedSequence seq;
    seq.sample_id = "s" + std::to_string(s);
    seq.prompt_len = opts.prompt_len;
    seq.token_ids = prefix;
    for (std::size_t i = 0; i < qlen; ++i) {
      seq.token_ids.push_back(uniform01(rng) < repeat_p ? focus : uniform_index(rng, cfg.vocab));
    }
    out.push_back(std::move(seq));
  }
  return out;
}

/// Final-layer signal of one sequence.
inline AngleSignal prefill_signal(const ToyWeights& w, const SegmentedSequence& seq,
                                  SignalOptions opts = {}) {
  const auto layers = forward(w, seq);
  return angle_concentration(layers.back(), opts);
}

}  // namespace gainsched
