// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations. Binary element-wise operations follow
// numpy broadcasting rules. Every reduction runs in a fixed order, so results
// are bit-reproducible for a given input.

#pragma once

#include <cstddef>
#include <vector>

#include "lem/ad/tensor.hpp"

namespace lem::ad {

// ---- element-wise binary (broadcasting) ----
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
// Hard kinks. Ties send the whole gradient to the first argument.
template <typename T> Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

// ---- scalar ----
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T c);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& x, T c);
template <typename T> Tensor<T> neg(const Tensor<T>& x);
// c - x
template <typename T> Tensor<T> rsub_scalar(T c, const Tensor<T>& x);

// ---- element-wise unary ----
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);
template <typename T> Tensor<T> elu(const Tensor<T>& x);
template <typename T> Tensor<T> silu(const Tensor<T>& x);
template <typename T> Tensor<T> softplus(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> log(const Tensor<T>& x);
// Subgradient 0 at x == 0.
template <typename T> Tensor<T> abs(const Tensor<T>& x);

// ---- shape ----
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);
template <typename T> Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis);
// Inserts a new axis at `axis` and concatenates along it.
template <typename T> Tensor<T> stack(const std::vector<Tensor<T>>& xs, std::size_t axis);
template <typename T> Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape);

// ---- reductions ----
template <typename T> Tensor<T> sum(const Tensor<T>& x, std::size_t axis, bool keepdim = false);
template <typename T> Tensor<T> sum_all(const Tensor<T>& x);
// out[..., t, ...] = sum_{s >= t} x[..., s, ...] along `axis`.
template <typename T> Tensor<T> reverse_cumsum(const Tensor<T>& x, std::size_t axis);

// ---- linear algebra ----
// [..., K] x [K, N] -> [..., N]
template <typename T> Tensor<T> matmul(const Tensor<T>& x, const Tensor<T>& w);
// [R, G, K] x [G, K, N] -> [R, G, N]; group g uses its own weight matrix.
template <typename T> Tensor<T> grouped_matmul(const Tensor<T>& x, const Tensor<T>& w);
// [G, M, K] x [G, K, N] -> [G, M, N]; with transpose_b the second operand is [G, N, K].
template <typename T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

// ---- normalisation ----
template <typename T> Tensor<T> softmax_last(const Tensor<T>& x);
// Row-wise softmax over the last axis of [..., S, S] restricted to j <= i;
// entries above the diagonal are exactly zero.
template <typename T> Tensor<T> causal_softmax(const Tensor<T>& x);
// Zero-mean unit-variance over the last axis (no affine part).
template <typename T> Tensor<T> layer_norm(const Tensor<T>& x, T eps);

// ---- splines ----
struct SplineGrid {
  std::size_t grid_size{5};
  std::size_t order{3};
  double lo{-3.0};
  double hi{3.0};

  std::size_t basis_count() const { return grid_size + order; }
};

// Uniform B-spline basis of the given order on `grid_size` intervals over
// [lo, hi]. Outside the range each basis function continues along its
// boundary tangent. [..., in] -> [..., in, basis_count].
template <typename T> Tensor<T> bspline_basis(const Tensor<T>& x, const SplineGrid& grid);

// Scalar evaluation helpers shared by bspline_basis; exposed for tests.
// Fills `values` (and optionally `derivs`) with basis_count entries.
void bspline_eval(double x, const SplineGrid& grid, double* values, double* derivs);

}  // namespace lem::ad
