#pragma once

// Differentiable operations. Elementwise binary ops require identical shapes;
// the only implicit broadcast is tensor-with-scalar. Use broadcast_rows to
// expand a bias vector explicitly.

#include <cstddef>
#include <vector>

#include "cvc/tensor.hpp"

namespace cvc {

template <class T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> scale(const BasicTensor<T>& a, T s);
template <class T> BasicTensor<T> add_scalar(const BasicTensor<T>& a, T s);

template <class T> BasicTensor<T> exp(const BasicTensor<T>& a);
template <class T> BasicTensor<T> log(const BasicTensor<T>& a);
template <class T> BasicTensor<T> square(const BasicTensor<T>& a);
template <class T> BasicTensor<T> softplus(const BasicTensor<T>& a);
// tanh approximation of GELU.
template <class T> BasicTensor<T> gelu(const BasicTensor<T>& a);
// Gradient is zero where the input lies outside [lo, hi].
template <class T> BasicTensor<T> clamp(const BasicTensor<T>& a, T lo, T hi);

template <class T> BasicTensor<T> sum(const BasicTensor<T>& a);
template <class T> BasicTensor<T> mean(const BasicTensor<T>& a);

// 2-D: [m,k]x[k,n] -> [m,n]. 3-D: batched [b,m,k]x[b,k,n] -> [b,m,n].
// With transpose_b the second operand is read as [.., n, k].
template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b, bool transpose_b = false);

template <class T> BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis);

// Normalizes over the last axis, then applies gain and bias (both [last]).
template <class T>
BasicTensor<T> layernorm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                         const BasicTensor<T>& bias, T eps = T(1e-5));

// [n] -> [rows, n]
template <class T> BasicTensor<T> broadcast_rows(const BasicTensor<T>& v, std::size_t rows);

// x[n,in] * w[in,out] + broadcast(b[out])
template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b);

// Shares the value buffer; element count must match.
template <class T> BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);

template <class T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<std::size_t>& axes);

// out[i] = x[index[i]]. The backward pass scatter-adds, so repeated indices
// are allowed. Every structural rearrangement (patches, windows, heads) goes
// through here.
template <class T>
BasicTensor<T> gather(const BasicTensor<T>& x, std::vector<std::size_t> index, Shape out_shape);

// [C,H,W] -> [(H/kh)*(W/kw), C*kh*kw]; patch rows in row-major patch order,
// features ordered (c, dy, dx).
template <class T> BasicTensor<T> patchify(const BasicTensor<T>& x, std::size_t kh, std::size_t kw);

// Inverse of patchify.
template <class T>
BasicTensor<T> unpatchify(const BasicTensor<T>& patches, std::size_t channels, std::size_t height,
                          std::size_t width, std::size_t kh, std::size_t kw);

// [rows, cols] -> [cols, rows]
template <class T> BasicTensor<T> transpose(const BasicTensor<T>& x);

}  // namespace cvc
