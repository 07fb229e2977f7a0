#pragma once

#include <vector>

#include "strlab/autodiff.hpp"

// Differentiable free functions over Variable. Binary elementwise ops require
// equal shapes, except that a single-element operand broadcasts.
namespace strlab {

template <typename S> Variable<S> add(const Variable<S>& a, const Variable<S>& b);
template <typename S> Variable<S> sub(const Variable<S>& a, const Variable<S>& b);
template <typename S> Variable<S> mul(const Variable<S>& a, const Variable<S>& b);
template <typename S> Variable<S> scale(const Variable<S>& a, S factor);

template <typename S> Variable<S> operator+(const Variable<S>& a, const Variable<S>& b) { return add(a, b); }
template <typename S> Variable<S> operator-(const Variable<S>& a, const Variable<S>& b) { return sub(a, b); }
template <typename S> Variable<S> operator*(const Variable<S>& a, const Variable<S>& b) { return mul(a, b); }

template <typename S> Variable<S> tanh(const Variable<S>& x);
template <typename S> Variable<S> sigmoid(const Variable<S>& x);
template <typename S> Variable<S> relu(const Variable<S>& x);
template <typename S> Variable<S> exp(const Variable<S>& x);
/// Normalizes over the last axis: out = x - logsumexp(x).
template <typename S> Variable<S> log_softmax(const Variable<S>& x);

template <typename S> Variable<S> sum(const Variable<S>& x);
template <typename S> Variable<S> mean(const Variable<S>& x);

/// [m x k] . [k x n]
template <typename S> Variable<S> matmul(const Variable<S>& a, const Variable<S>& b);
/// [m x k] . [n x k]^T, the layout of stored weight matrices.
template <typename S> Variable<S> matmul_nt(const Variable<S>& a, const Variable<S>& b);
/// Adds bias[n] to every row of x[..., n].
template <typename S> Variable<S> add_bias(const Variable<S>& x, const Variable<S>& bias);

template <typename S> Variable<S> reshape(const Variable<S>& x, Shape shape);
template <typename S> Variable<S> permute(const Variable<S>& x, const std::vector<Index>& axes);
/// Half-open range [begin, end) along `axis`.
template <typename S> Variable<S> slice(const Variable<S>& x, Index axis, Index begin, Index end);
template <typename S> Variable<S> concat(const std::vector<Variable<S>>& parts, Index axis);

/// Constant (no-gradient) variable.
template <typename S>
Variable<S> constant(Tensor<S> value) {
  return Variable<S>(std::move(value), false);
}

}  // namespace strlab
