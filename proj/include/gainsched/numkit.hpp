#pragma once

// Small dense real-matrix kernel. Row-major, 64-bit, no broadcasting.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gainsched {

/// Thrown when operand shapes do not compose.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an input is numerically degenerate (zero norm, NaN, empty).
class DegenerateInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline constexpr double kDegenerateNorm = 1e-12;

namespace detail {

inline void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw DegenerateInputError(std::string(what) + ": non-finite entry");
    }
  }
}

inline std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace detail

class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t dim, double fill = 0.0) : data_(dim, fill) {
    detail::require_finite(data_, "Vector");
  }
  Vector(std::initializer_list<double> values) : data_(values) {
    detail::require_finite(data_, "Vector");
  }
  explicit Vector(std::vector<double> values) : data_(std::move(values)) {
    detail::require_finite(data_, "Vector");
  }
  explicit Vector(std::span<const double> values)
      : data_(values.begin(), values.end()) {
    detail::require_finite(data_, "Vector");
  }

  std::size_t dim() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  std::span<const double> values() const noexcept { return data_; }
  std::span<double> values() noexcept { return data_; }
  const std::vector<double>& raw() const noexcept { return data_; }

  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  friend bool operator==(const Vector&, const Vector&) = default;

 private:
  std::vector<double> data_;
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    detail::require_finite(data_, "Matrix");
  }
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("Matrix: " + std::to_string(data_.size()) +
                       " values for shape " + detail::shape_str(rows_, cols_));
    }
    detail::require_finite(data_, "Matrix");
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
    detail::require_finite(data_, "Matrix");
  }

  static Matrix identity(std::size_t n, double scale = 1.0) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = scale;
    return m;
  }

  /// Stacks equal-length rows.
  static Matrix from_rows(std::span<const Vector> rows) {
    if (rows.empty()) return {};
    Matrix m(rows.size(), rows.front().dim());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].dim() != m.cols_) throw ShapeError("Matrix::from_rows: ragged rows");
      std::copy(rows[r].begin(), rows[r].end(), m.row_span(r).begin());
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }
  std::span<double> row_span(std::size_t r) {
    return std::span<double>(data_).subspan(r * cols_, cols_);
  }
  Vector row_vector(std::size_t r) const { return Vector(row(r)); }
  Vector col_vector(std::size_t c) const {
    Vector v(rows_);
    for (std::size_t r = 0; r < rows_; ++r) v[r] = (*this)(r, c);
    return v;
  }

  std::span<const double> values() const noexcept { return data_; }
  std::span<double> values() noexcept { return data_; }

  std::string shape() const { return detail::shape_str(rows_, cols_); }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Vector primitives on spans (rows of a Matrix are spans).

inline double dot(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw ShapeError("dot: dimension mismatch " + std::to_string(u.size()) + " vs " +
                     std::to_string(v.size()));
  }
  return std::inner_product(u.begin(), u.end(), v.begin(), 0.0);
}

inline double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

/// Cosine of the angle between u and v. Zero when either norm is below
/// kDegenerateNorm.
inline double cosine(std::span<const double> u, std::span<const double> v) {
  const double uv = dot(u, v);
  const double nu = norm(u);
  const double nv = norm(v);
  if (nu < kDegenerateNorm || nv < kDegenerateNorm) return 0.0;
  return std::clamp(uv / (nu * nv), -1.0, 1.0);
}

inline double cosine(const Vector& u, const Vector& v) { return cosine(u.values(), v.values()); }
inline double dot(const Vector& u, const Vector& v) { return dot(u.values(), v.values()); }
inline double norm(const Vector& v) { return norm(v.values()); }

inline Vector scaled(const Vector& v, double s) {
  Vector out = v;
  for (auto& x : out.values()) x *= s;
  return out;
}

inline Vector operator+(const Vector& a, const Vector& b) {
  if (a.dim() != b.dim()) throw ShapeError("Vector add: dimension mismatch");
  Vector out = a;
  for (std::size_t i = 0; i < a.dim(); ++i) out[i] += b[i];
  return out;
}

// ---------------------------------------------------------------------------
// Matrix primitives.

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + a.shape() + " by " + b.shape());
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row_span(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

/// Row vector times matrix: v (1 x a.rows) * a.
inline Vector vecmat(std::span<const double> v, const Matrix& a) {
  if (v.size() != a.rows()) {
    throw ShapeError("vecmat: vector of dim " + std::to_string(v.size()) +
                     " cannot multiply " + a.shape());
  }
  Vector out(a.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double vk = v[k];
    const auto a_row = a.row(k);
    for (std::size_t j = 0; j < a.cols(); ++j) out[j] += vk * a_row[j];
  }
  return out;
}
inline Vector vecmat(const Vector& v, const Matrix& a) { return vecmat(v.values(), a); }

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("add: shapes " + a.shape() + " and " + b.shape() + " differ");
  }
  Matrix out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return out;
}

inline Matrix scaled(const Matrix& a, double s) {
  Matrix out = a;
  for (auto& x : out.values()) x *= s;
  return out;
}

inline double frobenius_norm_sq(const Matrix& a) {
  double s = 0.0;
  for (double x : a.values()) s += x * x;
  return s;
}

/// <A, B>_F = tr(A^T B).
inline double frobenius_inner(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("frobenius_inner: shapes " + a.shape() + " and " + b.shape() + " differ");
  }
  return std::inner_product(a.values().begin(), a.values().end(), b.values().begin(), 0.0);
}

/// u v^T.
inline Matrix outer(const Vector& u, const Vector& v) {
  Matrix out(u.dim(), v.dim());
  for (std::size_t i = 0; i < u.dim(); ++i)
    for (std::size_t j = 0; j < v.dim(); ++j) out(i, j) = u[i] * v[j];
  return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities.

/// Numerically stable softmax (max-subtracted).
inline Vector softmax(std::span<const double> v) {
  if (v.empty()) throw DegenerateInputError("softmax: empty input");
  const double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    z += out[i];
  }
  for (auto& x : out) x /= z;
  return Vector(std::move(out));
}
inline Vector softmax(const Vector& v) { return softmax(v.values()); }

/// LayerNorm reduced to its direction: v / ||v||. Angles are preserved and
/// the result has unit norm.
inline Vector layernorm_direction(std::span<const double> v) {
  const double n = norm(v);
  if (n < kDegenerateNorm) {
    throw DegenerateInputError("layernorm_direction: norm below 1e-12");
  }
  std::vector<double> out(v.begin(), v.end());
  for (auto& x : out) x /= n;
  return Vector(std::move(out));
}
inline Vector layernorm_direction(const Vector& v) { return layernorm_direction(v.values()); }

/// Applies layernorm_direction to each row.
inline Matrix layernorm_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const Vector d = layernorm_direction(x.row(r));
    std::copy(d.begin(), d.end(), out.row_span(r).begin());
  }
  return out;
}

inline double logistic(double x) {
  // Split by sign so exp never overflows.
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double silu(double x) { return x * logistic(x); }

inline double silu_prime(double x) {
  const double s = logistic(x);
  return s + x * s * (1.0 - s);
}

inline Matrix silu(const Matrix& z) {
  Matrix out = z;
  for (auto& x : out.values()) x = silu(x);
  return out;
}

}  // namespace gainsched
