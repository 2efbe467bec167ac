#include "flowgen/layers.hpp"

#include <cmath>

#include "flowgen/errors.hpp"

namespace flowgen {

template <typename T>
BasicTensor<T> init_uniform(Shape shape, int fan_in, int kernel, std::mt19937_64& rng) {
  const double bound = std::sqrt(1.0 / (static_cast<double>(fan_in) * kernel * kernel * kernel));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> values(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return BasicTensor<T>::from_data(std::move(shape), std::move(values), true);
}

template <typename T>
Conv3dLayer<T>::Conv3dLayer(int in_channels, int out_channels, ConvGeometry geometry, std::mt19937_64& rng)
    : in_channels_(in_channels), out_channels_(out_channels), geometry_(geometry) {
  if (in_channels <= 0 || out_channels <= 0) {
    throw DimensionError("Conv3dLayer channels must be positive, got " + std::to_string(in_channels) + " -> " +
                         std::to_string(out_channels));
  }
  const int k = geometry.kernel;
  weight_ = init_uniform<T>({out_channels, in_channels, k, k, k}, in_channels, k, rng);
  bias_ = init_uniform<T>({out_channels}, in_channels, k, rng);
}

template <typename T>
BasicTensor<T> Conv3dLayer<T>::forward(const BasicTensor<T>& input) const {
  return conv3d(input, weight_, bias_, geometry_);
}

template <typename T>
void Conv3dLayer<T>::append_parameters(const std::string& prefix, ParameterList<T>& out) const {
  out.push_back({prefix + ".weight", weight_});
  out.push_back({prefix + ".bias", bias_});
}

template <typename T>
Deconv3dLayer<T>::Deconv3dLayer(int in_channels, int out_channels, ConvGeometry geometry, std::mt19937_64& rng)
    : in_channels_(in_channels), out_channels_(out_channels), geometry_(geometry) {
  if (in_channels <= 0 || out_channels <= 0) {
    throw DimensionError("Deconv3dLayer channels must be positive, got " + std::to_string(in_channels) + " -> " +
                         std::to_string(out_channels));
  }
  const int k = geometry.kernel;
  weight_ = init_uniform<T>({in_channels, out_channels, k, k, k}, in_channels, k, rng);
  bias_ = init_uniform<T>({out_channels}, in_channels, k, rng);
}

template <typename T>
BasicTensor<T> Deconv3dLayer<T>::forward(const BasicTensor<T>& input) const {
  return deconv3d(input, weight_, bias_, geometry_);
}

template <typename T>
void Deconv3dLayer<T>::append_parameters(const std::string& prefix, ParameterList<T>& out) const {
  out.push_back({prefix + ".weight", weight_});
  out.push_back({prefix + ".bias", bias_});
}

template <typename T>
void set_trainable(ParameterList<T>& params, bool trainable) {
  for (auto& p : params) p.tensor.set_requires_grad(trainable);
}

template BasicTensor<float> init_uniform(Shape, int, int, std::mt19937_64&);
template BasicTensor<double> init_uniform(Shape, int, int, std::mt19937_64&);
template class Conv3dLayer<float>;
template class Conv3dLayer<double>;
template class Deconv3dLayer<float>;
template class Deconv3dLayer<double>;
template void set_trainable(ParameterList<float>&, bool);
template void set_trainable(ParameterList<double>&, bool);

}  // namespace flowgen
