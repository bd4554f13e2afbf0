// Copyright (c) 2026, The PromptMix Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over the closed set of operations used by the
// prompt-mixture objective. Values are recorded on a Tape as the forward pass
// runs; Tape::backward replays the records in reverse order and accumulates
// sensitivities into every trainable Parameter that was reached.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "promptmix/error.hpp"
#include "promptmix/numerics/matrix.hpp"

namespace promptmix {

#ifdef PROMPTMIX_FAULT_INJECTION
namespace fault {
// Flips the sign of the softmax input gradient. Only compiled into test builds.
inline bool flip_softmax_backward = false;
}  // namespace fault
#endif

/// A named matrix that may be optimized. Gradients accumulate into `grad`
/// until zero_grad() is called.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name_, Matrix value_, bool trainable_ = true)
      : name(std::move(name_)), value(std::move(value_)), grad(value.rows(), value.cols()), trainable(trainable_) {}

  void zero_grad() { grad = Matrix(value.rows(), value.cols()); }

  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
  /// Scalar value of a 1x1 var.
  double scalar() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& output_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records a value that never receives gradients.
  Var constant(Matrix value) { return push(std::move(value), false, nullptr, nullptr); }

  /// Registers a parameter leaf. Registering the same parameter twice returns
  /// the same handle so that its gradient is accumulated in one place.
  Var parameter(Parameter& p) {
    if (auto it = leaves_.find(&p); it != leaves_.end()) return Var(this, it->second);
    Var v = push(p.value, p.trainable, nullptr, &p);
    leaves_.emplace(&p, v.id());
    return v;
  }

  /// Records the result of an operation. `backward` is only kept when some
  /// input requires a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
  }
  Var record(Matrix value, std::span<const Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (const Var& in : inputs) {
      if (in.tape() != this) throw InvalidInputError("operation mixes vars from different tapes");
      needs = needs || nodes_[in.id()].requires_grad;
    }
    if (!value.all_finite()) throw NumericError("non-finite value produced on tape");
    return push(std::move(value), needs, needs ? std::move(backward) : BackwardFn{}, nullptr);
  }

  const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient slot for `v`, allocated on first use. Returns nullptr when `v`
  /// does not participate in differentiation.
  Matrix* grad_slot(const Var& v) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return nullptr;
    if (n.grad.size() != n.value.size() || !n.grad.same_shape(n.value)) n.grad = Matrix(n.value.rows(), n.value.cols());
    return &n.grad;
  }

  /// Reverse sweep from a 1x1 loss. Returns the number of trainable
  /// parameters that received a gradient.
  std::size_t backward(const Var& loss) {
    if (loss.tape() != this) throw InvalidInputError("backward: loss belongs to another tape");
    Node& root = nodes_[loss.id()];
    if (root.value.rows() != 1 || root.value.cols() != 1) {
      throw ShapeError("backward requires a scalar loss, got " + root.value.shape_string());
    }
    if (backward_done_) throw InvalidInputError("backward called twice without reset");
    backward_done_ = true;
    if (!root.requires_grad) return 0;
    root.grad = Matrix(1, 1, 1.0);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      // Callbacks only write into lower-numbered nodes, so n.grad is stable.
      if (n.backward) n.backward(*this, n.grad);
    }
    std::size_t touched = 0;
    for (auto& [param, id] : leaves_) {
      Node& n = nodes_[id];
      if (!param->trainable || n.grad.size() == 0) continue;
      param->grad += n.grad;
      ++touched;
    }
    return touched;
  }

  void reset() {
    nodes_.clear();
    leaves_.clear();
    backward_done_ = false;
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Var push(Matrix value, bool requires_grad, BackwardFn backward, Parameter* param) {
    nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, std::move(backward), param});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, std::size_t> leaves_;
  bool backward_done_ = false;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }
inline double Var::scalar() const {
  const Matrix& m = value();
  if (m.rows() != 1 || m.cols() != 1) throw ShapeError("scalar() on " + m.shape_string());
  return m(0, 0);
}

// Differentiable operations.
namespace ad {

namespace detail {
inline void add_into(Tape& t, const Var& v, const Matrix& g) {
  if (Matrix* slot = t.grad_slot(v)) *slot += g;
}
}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  Tape& t = *a.tape();
  return t.record(kernels::matmul(a.value(), b.value()), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (Matrix* ga = tp.grad_slot(a)) *ga += kernels::matmul(g, kernels::transpose(b.value()));
    if (Matrix* gb = tp.grad_slot(b)) *gb += kernels::matmul(kernels::transpose(a.value()), g);
  });
}

inline Var transpose(const Var& a) {
  return a.tape()->record(kernels::transpose(a.value()), {a}, [a](Tape& tp, const Matrix& g) {
    detail::add_into(tp, a, kernels::transpose(g));
  });
}

inline Var add(const Var& a, const Var& b) {
  a.value().require_same_shape(b.value(), "add");
  Matrix out = a.value();
  out += b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    detail::add_into(tp, a, g);
    detail::add_into(tp, b, g);
  });
}

inline Var scale(const Var& a, double s) {
  Matrix out = a.value();
  for (double& x : out.values()) x *= s;
  return a.tape()->record(std::move(out), {a}, [a, s](Tape& tp, const Matrix& g) {
    if (Matrix* ga = tp.grad_slot(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
    }
  });
}

/// Scales each row to unit L2 norm.
inline Var normalize_rows(const Var& a) {
  Matrix y = kernels::normalize_rows(a.value());
  return a.tape()->record(y, {a}, [a, y](Tape& tp, const Matrix& g) {
    Matrix* ga = tp.grad_slot(a);
    if (!ga) return;
    const Matrix& x = a.value();
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const double n = kernels::norm(x.row_span(r));
      double dot = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) dot += y(r, c) * g(r, c);
      for (std::size_t c = 0; c < x.cols(); ++c) (*ga)(r, c) += (g(r, c) - y(r, c) * dot) / n;
    }
  });
}

inline Var mean_rows(const Var& a) {
  const std::size_t n = a.rows();
  return a.tape()->record(kernels::mean_rows(a.value()), {a}, [a, n](Tape& tp, const Matrix& g) {
    Matrix* ga = tp.grad_slot(a);
    if (!ga) return;
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) (*ga)(r, c) += g(0, c) * inv;
  });
}

/// Stacks the rows of each input. Inputs with zero rows are allowed.
inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidInputError("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::size_t r0 = 0;
  for (const Var& p : parts) {
    const Matrix& v = p.value();
    std::copy(v.data().begin(), v.data().end(), out.values().begin() + static_cast<std::ptrdiff_t>(r0 * cols));
    r0 += v.rows();
  }
  std::vector<Var> kept(parts.begin(), parts.end());
  return parts[0].tape()->record(std::move(out), parts, [kept, cols](Tape& tp, const Matrix& g) {
    std::size_t r0 = 0;
    for (const Var& p : kept) {
      const std::size_t n = p.rows();
      if (Matrix* gp = tp.grad_slot(p)) {
        for (std::size_t i = 0; i < n * cols; ++i) (*gp)[i] += g[r0 * cols + i];
      }
      r0 += n;
    }
  });
}

/// Row-wise softmax of a / temperature.
inline Var softmax_rows(const Var& a, double temperature) {
  Matrix y = kernels::softmax_rows(a.value(), temperature);
  return a.tape()->record(y, {a}, [a, y, temperature](Tape& tp, const Matrix& g) {
    Matrix* ga = tp.grad_slot(a);
    if (!ga) return;
    double sign = 1.0;
#ifdef PROMPTMIX_FAULT_INJECTION
    if (fault::flip_softmax_backward) sign = -1.0;
#endif
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) (*ga)(r, c) += sign * y(r, c) * (g(r, c) - dot) / temperature;
    }
  });
}

inline Var log(const Var& a) {
  Matrix out = a.value();
  for (double& x : out.values()) {
    if (!(x > 0.0)) throw NumericError("log of a non-positive value");
    x = std::log(x);
  }
  return a.tape()->record(std::move(out), {a}, [a](Tape& tp, const Matrix& g) {
    if (Matrix* ga = tp.grad_slot(a)) {
      const Matrix& x = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / x[i];
    }
  });
}

/// Mean of all entries, as a 1x1 var.
inline Var mean_all(const Var& a) {
  const Matrix& v = a.value();
  if (v.size() == 0) throw InvalidInputError("mean_all of an empty matrix");
  double s = 0.0;
  for (double x : v.values()) s += x;
  const double inv = 1.0 / static_cast<double>(v.size());
  return a.tape()->record(Matrix(1, 1, s * inv), {a}, [a, inv](Tape& tp, const Matrix& g) {
    if (Matrix* ga = tp.grad_slot(a)) {
      for (double& x : ga->values()) x += g[0] * inv;
    }
  });
}

/// Elementwise mean of same-shape inputs.
inline Var average(std::span<const Var> xs) {
  if (xs.empty()) throw InvalidInputError("average of no inputs");
  Matrix out = xs[0].value();
  for (std::size_t i = 1; i < xs.size(); ++i) out += xs[i].value();
  const double inv = 1.0 / static_cast<double>(xs.size());
  for (double& x : out.values()) x *= inv;
  std::vector<Var> kept(xs.begin(), xs.end());
  return xs[0].tape()->record(std::move(out), xs, [kept, inv](Tape& tp, const Matrix& g) {
    for (const Var& x : kept) {
      if (Matrix* gx = tp.grad_slot(x)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * inv;
      }
    }
  });
}

/// sum_k weights[k] * mats[k]; weights is 1xK.
inline Var weighted_sum(std::span<const Var> mats, const Var& weights) {
  if (mats.empty() || weights.rows() != 1 || weights.cols() != mats.size()) {
    throw ShapeError("weighted_sum: need 1xK weights for K matrices");
  }
  Matrix out(mats[0].rows(), mats[0].cols());
  for (std::size_t k = 0; k < mats.size(); ++k) {
    mats[k].value().require_same_shape(out, "weighted_sum");
    const double w = weights.value()(0, k);
    const Matrix& m = mats[k].value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * m[i];
  }
  std::vector<Var> inputs(mats.begin(), mats.end());
  inputs.push_back(weights);
  std::vector<Var> kept(mats.begin(), mats.end());
  return weights.tape()->record(std::move(out), inputs, [kept, weights](Tape& tp, const Matrix& g) {
    Matrix* gw = tp.grad_slot(weights);
    for (std::size_t k = 0; k < kept.size(); ++k) {
      const double w = weights.value()(0, k);
      if (Matrix* gm = tp.grad_slot(kept[k])) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gm)[i] += w * g[i];
      }
      if (gw) {
        const Matrix& m = kept[k].value();
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * m[i];
        (*gw)(0, k) += dot;
      }
    }
  });
}

/// Selects columns of a 1xN row vector.
inline Var gather(const Var& a, std::span<const std::size_t> indices) {
  if (a.rows() != 1) throw ShapeError("gather expects a row vector");
  Matrix out(1, indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= a.cols()) throw IndexError("gather index out of range");
    out(0, k) = a.value()(0, indices[k]);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return a.tape()->record(std::move(out), {a}, [a, idx](Tape& tp, const Matrix& g) {
    if (Matrix* ga = tp.grad_slot(a)) {
      for (std::size_t k = 0; k < idx.size(); ++k) (*ga)(0, idx[k]) += g(0, k);
    }
  });
}

/// x / sum(x) for a positive row vector.
inline Var normalize_sum(const Var& a) {
  if (a.rows() != 1) throw ShapeError("normalize_sum expects a row vector");
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  if (!(s > 0.0)) throw InvalidDistributionError("normalize_sum: non-positive mass");
  Matrix y = a.value();
  for (double& x : y.values()) x /= s;
  return a.tape()->record(y, {a}, [a, y, s](Tape& tp, const Matrix& g) {
    if (Matrix* ga = tp.grad_slot(a)) {
      double dot = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += (g[i] - dot) / s;
    }
  });
}

/// KL(p || q) with q held constant. p must be strictly positive (softmax output).
inline Var kl_divergence(const Var& p, const Matrix& q) {
  p.value().require_same_shape(q, "kl_divergence");
  const Matrix& pv = p.value();
  double kl = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (pv[i] == 0.0) continue;
    kl += pv[i] * (std::log(pv[i]) - std::log(q[i]));
  }
  return p.tape()->record(Matrix(1, 1, kl), {p}, [p, q](Tape& tp, const Matrix& g) {
    if (Matrix* gp = tp.grad_slot(p)) {
      const Matrix& pv = p.value();
      for (std::size_t i = 0; i < pv.size(); ++i) {
        (*gp)[i] += g[0] * (std::log(pv[i]) - std::log(q[i]) + 1.0);
      }
    }
  });
}

inline Var pick(const Var& a, std::size_t r, std::size_t c) {
  if (r >= a.rows() || c >= a.cols()) throw IndexError("pick out of range");
  return a.tape()->record(Matrix(1, 1, a.value()(r, c)), {a}, [a, r, c](Tape& tp, const Matrix& g) {
    if (Matrix* ga = tp.grad_slot(a)) (*ga)(r, c) += g[0];
  });
}

/// Diagonal of a square matrix as a 1xN row.
inline Var diagonal(const Var& a) {
  if (a.rows() != a.cols()) throw ShapeError("diagonal of a non-square matrix");
  Matrix out(1, a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) out(0, i) = a.value()(i, i);
  return a.tape()->record(std::move(out), {a}, [a](Tape& tp, const Matrix& g) {
    if (Matrix* ga = tp.grad_slot(a)) {
      for (std::size_t i = 0; i < g.cols(); ++i) (*ga)(i, i) += g(0, i);
    }
  });
}

/// Cosine similarity between every row of `a` and every row of `b`: rows(a) x rows(b).
inline Var cosine_matrix(const Var& a, const Var& b) {
  return matmul(normalize_rows(a), transpose(normalize_rows(b)));
}

/// Cosine similarity of two row vectors, 1x1.
inline Var cosine_similarity(const Var& a, const Var& b) {
  if (a.rows() != 1 || b.rows() != 1) throw ShapeError("cosine_similarity expects row vectors");
  return cosine_matrix(a, b);
}

/// -ln p[target] for a probability row vector.
inline Var cross_entropy(const Var& probabilities, std::size_t target) {
  if (target >= probabilities.cols()) throw IndexError("cross_entropy target out of range");
  return scale(log(pick(probabilities, 0, target)), -1.0);
}

}  // namespace ad
}  // namespace promptmix
