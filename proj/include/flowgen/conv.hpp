#pragma once

#include <array>

#include "flowgen/tensor.hpp"

namespace flowgen {

/// Cubic kernel geometry shared by all three spatial axes.
struct ConvGeometry {
  int kernel = 3;
  int stride = 1;
  int padding = 0;
};

/// floor((in + 2p - k) / s) + 1; throws DimensionError when not positive.
int conv_output_extent(int in, const ConvGeometry& g);

/// (in - 1) * s - 2p + k; throws DimensionError when not positive.
int deconv_output_extent(int in, const ConvGeometry& g);

/// 3D cross-correlation with zero padding.
///   input  [B, C_in, D, H, W]
///   weight [C_out, C_in, k, k, k]
///   bias   [C_out] or undefined
template <typename T>
BasicTensor<T> conv3d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      const ConvGeometry& geometry);

/// Transposed convolution: the adjoint of conv3d with respect to its input.
///   input  [B, C_in, D, H, W]
///   weight [C_in, C_out, k, k, k]
///   bias   [C_out] or undefined
template <typename T>
BasicTensor<T> deconv3d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                        const ConvGeometry& geometry);

}  // namespace flowgen
