// Copyright (c) 2026, The PromptMix Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "promptmix/error.hpp"

namespace promptmix {

/// Dense row-major matrix of doubles. Dimensions are fixed at construction.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix payload of " + std::to_string(data_.size()) +
                       " entries does not fit " + shape_string(rows, cols));
    }
  }

  static Matrix row(std::span<const double> values) {
    return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
  }
  static Matrix row(std::initializer_list<double> values) {
    return Matrix(1, values.size(), std::vector<double>(values));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row_span(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const noexcept {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Matrix& operator+=(const Matrix& other) {
    require_same_shape(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  void require_same_shape(const Matrix& other, const char* op) const {
    if (!same_shape(other)) {
      throw ShapeError(std::string(op) + ": " + shape_string(rows_, cols_) + " vs " +
                       shape_string(other.rows_, other.cols_));
    }
  }

  static std::string shape_string(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
  }
  std::string shape_string() const { return shape_string(rows_, cols_); }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// FNV-1a over the raw bytes of the payload and shape. Used for frozen-state audits.
inline std::uint64_t checksum(const Matrix& m) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  const std::uint64_t r = m.rows(), c = m.cols();
  mix(&r, sizeof r);
  mix(&c, sizeof c);
  mix(m.data().data(), m.size() * sizeof(double));
  return h;
}

// Forward kernels shared by the tape and by tape-free callers, so both paths
// produce bit-identical values.
namespace kernels {

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + a.shape_string() + " * " + b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

inline Matrix mean_rows(const Matrix& a) {
  if (a.rows() == 0) throw InvalidInputError("mean_rows: empty sequence");
  Matrix out(1, a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(0, j) += a(i, j);
  const double inv = 1.0 / static_cast<double>(a.rows());
  for (std::size_t j = 0; j < a.cols(); ++j) out(0, j) *= inv;
  return out;
}

inline double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline constexpr double kMinNorm = 1e-12;

inline Matrix normalize_rows(const Matrix& a) {
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double n = norm(a.row_span(i));
    if (!(n > kMinNorm)) throw DegenerateVectorError("normalize_rows: row " + std::to_string(i) + " has zero norm");
    for (double& x : out.row_span(i)) x /= n;
  }
  return out;
}

inline Matrix softmax_rows(const Matrix& a, double temperature) {
  if (!(temperature > 0.0)) throw InvalidHyperparameterError("softmax temperature must be positive");
  if (a.cols() == 0) throw InvalidInputError("softmax of an empty vector");
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto in = a.row_span(i);
    double mx = in[0];
    for (double x : in) mx = std::max(mx, x);
    double sum = 0.0;
    auto o = out.row_span(i);
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp((in[j] - mx) / temperature);
      sum += o[j];
    }
    for (double& x : o) x /= sum;
  }
  return out;
}

}  // namespace kernels

// Scalar-level helpers on plain vectors.

inline std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0) {
  if (!(temperature > 0.0)) throw InvalidHyperparameterError("softmax temperature must be positive");
  if (logits.empty()) throw InvalidInputError("softmax of an empty vector");
  for (double x : logits) {
    if (!std::isfinite(x)) throw InvalidInputError("softmax logits must be finite");
  }
  const Matrix out = kernels::softmax_rows(Matrix::row(logits), temperature);
  return out.data();
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: length mismatch");
  const double na = kernels::norm(a), nb = kernels::norm(b);
  if (!(na > kernels::kMinNorm) || !(nb > kernels::kMinNorm)) {
    throw DegenerateVectorError("cosine_similarity: zero-norm input");
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  const double c = dot / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

inline void require_distribution(std::span<const double> p, const char* what, double tol = 1e-9) {
  double s = 0.0;
  for (double x : p) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw InvalidDistributionError(std::string(what) + ": negative or non-finite entry");
    s += x;
  }
  if (std::abs(s - 1.0) > tol) {
    throw InvalidDistributionError(std::string(what) + ": sums to " + std::to_string(s));
  }
}

/// KL(p || q) = sum p (ln p - ln q), with 0 ln 0 := 0.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("kl_divergence: length mismatch");
  require_distribution(p, "kl_divergence(p)");
  require_distribution(q, "kl_divergence(q)");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (!(q[i] > 0.0)) throw InvalidDistributionError("kl_divergence: q has zero mass where p does not");
    kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return std::max(kl, 0.0);
}

inline double cross_entropy(std::span<const double> probabilities, std::size_t target) {
  if (target >= probabilities.size()) {
    throw IndexError("cross_entropy: target " + std::to_string(target) + " out of range");
  }
  require_distribution(probabilities, "cross_entropy");
  if (!(probabilities[target] > 0.0)) throw NumericError("cross_entropy: zero probability at target");
  return -std::log(probabilities[target]);
}

}  // namespace promptmix
