#include "flowgen/fpn.hpp"

#include <random>

#include "flowgen/errors.hpp"
#include "flowgen/ops.hpp"

namespace flowgen {

void FpnConfig::validate() const {
  if (channels.empty()) throw ValidationError("FPN needs at least one level");
  for (int c : channels) {
    if (c <= 0) throw ValidationError("FPN channel counts must be positive");
  }
}

void require_pyramid_divisible(const Shape& shape, int levels) {
  if (shape.size() != 5) throw DimensionError("expected a 5-D frame tensor, got " + shape_to_string(shape));
  const int factor = 1 << levels;
  for (std::size_t axis = 2; axis < 5; ++axis) {
    if (shape[axis] % factor != 0) {
      throw DimensionError("frame extents " + shape_to_string(shape) + " must be divisible by 2^" +
                           std::to_string(levels) + " = " + std::to_string(factor) +
                           "; pad the frame to a multiple of " + std::to_string(factor));
    }
  }
}

template <typename T>
FpnExtractor<T>::FpnExtractor(FpnConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  int in = 1;
  for (int c : config_.channels) {
    Level level{Conv3dLayer<T>(in, c, {3, 2, 1}, rng), Conv3dLayer<T>(c, c, {3, 1, 1}, rng)};
    levels_.push_back(std::move(level));
    in = c;
  }
}

template <typename T>
FeaturePyramid<T> FpnExtractor<T>::extract(const BasicTensor<T>& frames) const {
  require_pyramid_divisible(frames.shape(), config_.levels());
  if (frames.dim(1) != 1) {
    throw DimensionError("FPN expects single-channel frames, got " + shape_to_string(frames.shape()));
  }
  const T slope = static_cast<T>(kLeakySlope);
  FeaturePyramid<T> pyramid;
  BasicTensor<T> x = frames;
  for (const auto& level : levels_) {
    x = leaky_relu(level.reduce.forward(x), slope);
    x = leaky_relu(level.refine.forward(x), slope);
    pyramid.levels.push_back(x);
  }
  return pyramid;
}

template <typename T>
Conditioning<T> FpnExtractor<T>::condition(const BasicTensor<T>& frames) const {
  return {frames, extract(frames)};
}

template <typename T>
void FpnExtractor<T>::freeze() {
  auto params = parameters();
  set_trainable(params, false);
  frozen_ = true;
}

template <typename T>
void FpnExtractor<T>::unfreeze() {
  auto params = parameters();
  set_trainable(params, true);
  frozen_ = false;
}

template <typename T>
ParameterList<T> FpnExtractor<T>::parameters() const {
  ParameterList<T> out;
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    const std::string prefix = "fpn.level" + std::to_string(l);
    levels_[l].reduce.append_parameters(prefix + ".reduce", out);
    levels_[l].refine.append_parameters(prefix + ".refine", out);
  }
  return out;
}

FeaturePyramid<float> fpn_extract(const FpnExtractor<float>& extractor, const Volume& frame) {
  return extractor.extract(to_tensor(frame));
}

template class FpnExtractor<float>;
template class FpnExtractor<double>;

}  // namespace flowgen
