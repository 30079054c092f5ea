#pragma once

#include <cstddef>
#include <vector>

#include "depthmae/tensor.hpp"

namespace depthmae {

// Elementwise arithmetic with numpy-style broadcasting over trailing axes.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> neg(const Tensor<T>& a);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T value);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, T value);
template <typename T> Tensor<T> square(const Tensor<T>& a);

/// Elementwise square root. The gradient at an exact zero output is taken as 0.
template <typename T> Tensor<T> sqrt(const Tensor<T>& a);

/// Matrix product over the last two axes; leading batch axes broadcast.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& order);
template <typename T> Tensor<T> transpose(const Tensor<T>& a, std::size_t axis0, std::size_t axis1);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

/// Slices along `axis` picked by `indices`, in that order. Repeats are allowed;
/// their gradients add up.
template <typename T>
Tensor<T> index_select(const Tensor<T>& a, std::size_t axis, const std::vector<std::size_t>& indices);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> sum(const Tensor<T>& a, std::size_t axis, bool keepdim = false);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a, std::size_t axis, bool keepdim = false);

/// Max-subtracted softmax along `axis`.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

/// Normalizes over the last axis, then applies per-feature gain and bias.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5));

/// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T> Tensor<T> gelu(const Tensor<T>& x);

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }

/// Output shape of broadcasting `a` against `b`; throws ShapeError naming both.
Shape broadcast_shape(const Shape& a, const Shape& b);

}  // namespace depthmae
