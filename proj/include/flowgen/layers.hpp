#pragma once

#include <random>
#include <string>

#include "flowgen/conv.hpp"
#include "flowgen/tensor.hpp"

namespace flowgen {

/// Slope of every hidden activation in the extractor and the CVAE.
inline constexpr double kLeakySlope = 0.1;

/// Uniform fan-in initialisation in +-sqrt(1 / (fan_in * k^3)).
template <typename T>
BasicTensor<T> init_uniform(Shape shape, int fan_in, int kernel, std::mt19937_64& rng);

template <typename T>
class Conv3dLayer {
 public:
  Conv3dLayer() = default;
  Conv3dLayer(int in_channels, int out_channels, ConvGeometry geometry, std::mt19937_64& rng);

  BasicTensor<T> forward(const BasicTensor<T>& input) const;

  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }
  const ConvGeometry& geometry() const { return geometry_; }
  const BasicTensor<T>& weight() const { return weight_; }
  const BasicTensor<T>& bias() const { return bias_; }

  void append_parameters(const std::string& prefix, ParameterList<T>& out) const;

 private:
  int in_channels_ = 0;
  int out_channels_ = 0;
  ConvGeometry geometry_;
  BasicTensor<T> weight_;  // [out, in, k, k, k]
  BasicTensor<T> bias_;    // [out]
};

template <typename T>
class Deconv3dLayer {
 public:
  Deconv3dLayer() = default;
  Deconv3dLayer(int in_channels, int out_channels, ConvGeometry geometry, std::mt19937_64& rng);

  BasicTensor<T> forward(const BasicTensor<T>& input) const;

  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }
  const ConvGeometry& geometry() const { return geometry_; }
  const BasicTensor<T>& weight() const { return weight_; }
  const BasicTensor<T>& bias() const { return bias_; }

  void append_parameters(const std::string& prefix, ParameterList<T>& out) const;

 private:
  int in_channels_ = 0;
  int out_channels_ = 0;
  ConvGeometry geometry_;
  BasicTensor<T> weight_;  // [in, out, k, k, k]
  BasicTensor<T> bias_;    // [out]
};

/// Sets requires_grad on every parameter of the list.
template <typename T>
void set_trainable(ParameterList<T>& params, bool trainable);

}  // namespace flowgen
