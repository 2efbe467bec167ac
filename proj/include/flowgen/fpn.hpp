#pragma once

#include <cstdint>
#include <vector>

#include "flowgen/layers.hpp"
#include "flowgen/tensor.hpp"
#include "flowgen/volume.hpp"

namespace flowgen {

struct FpnConfig {
  /// Channel count of each pyramid level; the size sets the level count L.
  std::vector<int> channels{16, 32, 32, 64, 64};

  int levels() const { return static_cast<int>(channels.size()); }
  void validate() const;
};

/// Level l holds features at 1/2^(l+1) of the input resolution.
template <typename T>
struct FeaturePyramid {
  std::vector<BasicTensor<T>> levels;
};

/// Everything the CVAE is conditioned on: the raw frame and its pyramid.
template <typename T>
struct Conditioning {
  BasicTensor<T> frame;  // [B, 1, z, y, x]
  FeaturePyramid<T> pyramid;
};

/// Throws DimensionError unless every spatial extent of `shape` (a 5-D
/// tensor shape) is divisible by 2^levels.
void require_pyramid_divisible(const Shape& shape, int levels);

/// Multi-scale feature extractor. Each level is a stride-2 reducer followed
/// by a stride-1 refiner, both 3x3x3 with leaky activations.
template <typename T>
class FpnExtractor {
 public:
  FpnExtractor(FpnConfig config, std::uint64_t seed);

  FpnExtractor(FpnExtractor&&) noexcept = default;
  FpnExtractor& operator=(FpnExtractor&&) noexcept = default;
  FpnExtractor(const FpnExtractor&) = delete;
  FpnExtractor& operator=(const FpnExtractor&) = delete;

  /// `frames` is [B, 1, z, y, x] with extents divisible by 2^L.
  FeaturePyramid<T> extract(const BasicTensor<T>& frames) const;
  Conditioning<T> condition(const BasicTensor<T>& frames) const;

  /// Stops gradient flow into the extractor parameters.
  void freeze();
  void unfreeze();
  bool frozen() const { return frozen_; }

  const FpnConfig& config() const { return config_; }
  ParameterList<T> parameters() const;
  std::uint64_t hash() const { return parameter_hash(parameters()); }

 private:
  struct Level {
    Conv3dLayer<T> reduce;
    Conv3dLayer<T> refine;
  };

  FpnConfig config_;
  std::vector<Level> levels_;
  bool frozen_ = false;
};

FeaturePyramid<float> fpn_extract(const FpnExtractor<float>& extractor, const Volume& frame);

}  // namespace flowgen
