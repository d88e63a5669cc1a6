#pragma once

// Seeded randomness. Every random quantity in the library flows from a
// std::mt19937_64 built here; derived streams are keyed by integer tuples so
// results never depend on evaluation order.

#include <cstdint>
#include <initializer_list>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gainsched/numkit.hpp"

namespace gainsched {

using Rng = std::mt19937_64;

/// Engine for stream `keys` under `seed`, e.g. make_rng(seed, {step, item}).
inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys = {}) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * keys.size());
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto k : keys) push(k);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

/// SplitMix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Counter-based uniform in [0, 1) keyed by (seed, a, b). Cheap enough to
/// call once per item per step, and independent of call order.
inline double keyed_uniform(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  const std::uint64_t h = mix64(mix64(mix64(seed) ^ a) ^ b);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

/// Uniform in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform in (0, 1); never returns an endpoint.
inline double uniform_open01(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline double standard_normal(Rng& rng) { return std::normal_distribution<double>{}(rng); }

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>{0, n - 1}(rng);
}

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (auto& x : m.values()) x = stddev * standard_normal(rng);
  return m;
}

inline Vector gaussian_vector(std::size_t dim, double stddev, Rng& rng) {
  Vector v(dim);
  for (auto& x : v.values()) x = stddev * standard_normal(rng);
  return v;
}

/// Engine state as text (the standard stream format).
inline std::string serialize_rng(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline Rng deserialize_rng(const std::string& text) {
  std::istringstream is(text);
  Rng rng;
  is >> rng;
  if (!is) throw std::invalid_argument("deserialize_rng: malformed engine state");
  return rng;
}

/// Rows orthonormalized by modified Gram-Schmidt, run twice for accuracy.
/// Requires rows <= cols and full row rank.
inline Matrix orthonormalize_rows(Matrix a) {
  if (a.rows() > a.cols()) {
    throw ShapeError("orthonormalize_rows: " + a.shape() + " has more rows than columns");
  }
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t i = 0; i < a.rows(); ++i) {
      auto ri = a.row_span(i);
      for (std::size_t j = 0; j < i; ++j) {
        const auto rj = a.row(j);
        const double p = dot(ri, rj);
        for (std::size_t k = 0; k < a.cols(); ++k) ri[k] -= p * rj[k];
      }
      const double n = norm(ri);
      if (n < 1e-10) throw DegenerateInputError("orthonormalize_rows: rank deficient");
      for (auto& x : ri) x /= n;
    }
  }
  return a;
}

/// Random matrix with W W^T = scale * I exactly up to rounding (rows <= cols).
inline Matrix random_scaled_orthogonal(std::size_t rows, std::size_t cols, double scale, Rng& rng) {
  return scaled(orthonormalize_rows(gaussian_matrix(rows, cols, 1.0, rng)), std::sqrt(scale));
}

}  // namespace gainsched
