#pragma once

#include <vector>

#include "flowgen/tensor.hpp"

namespace flowgen {

enum class BinaryOp { Add, Sub, Mul };
enum class UnaryOp { Neg, Exp, Square, LeakyRelu };

/// Binary elementwise op. Shapes must be equal, or one operand may omit or
/// set to 1 a run of leading extents (its values repeat over that prefix).
template <typename T>
BasicTensor<T> elementwise(BinaryOp op, const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Unary elementwise op. `param` is the negative slope for LeakyRelu.
template <typename T>
BasicTensor<T> elementwise(UnaryOp op, const BasicTensor<T>& a, T param = T(0));

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(BinaryOp::Add, a, b);
}
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(BinaryOp::Sub, a, b);
}
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(BinaryOp::Mul, a, b);
}
template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& a) {
  return elementwise(UnaryOp::Exp, a);
}
template <typename T>
BasicTensor<T> square(const BasicTensor<T>& a) {
  return elementwise(UnaryOp::Square, a);
}
template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& a, T slope) {
  return elementwise(UnaryOp::LeakyRelu, a, slope);
}

/// a * factor + offset
template <typename T>
BasicTensor<T> affine(const BasicTensor<T>& a, T factor, T offset = T(0));

/// Clips values to [lo, hi]; the gradient is zero where clipping is active.
template <typename T>
BasicTensor<T> clamp(const BasicTensor<T>& a, T lo, T hi);

/// Sum of all elements, shape [1]. Accumulates in double.
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a);

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a);

/// mean((a - b)^2) over all elements.
template <typename T>
BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Concatenates along axis 1. All other extents must agree.
template <typename T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& parts);

/// Per-voxel channel mixing (a 1x1x1 convolution). `a` is [B, C_in, ...],
/// `w` is [C_out, C_in], optional `bias` is [C_out].
template <typename T>
BasicTensor<T> matmul_channels(const BasicTensor<T>& a, const BasicTensor<T>& w,
                               const BasicTensor<T>& bias = {});

}  // namespace flowgen
