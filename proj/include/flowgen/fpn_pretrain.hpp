#pragma once

#include <cstdint>
#include <vector>

#include "flowgen/fpn.hpp"
#include "flowgen/layers.hpp"
#include "flowgen/phantom.hpp"

namespace flowgen {

/// Stand-in for pretraining the extractor inside a flow network: each level
/// gets a linear 3x3x3 head regressing the ground-truth flow averaged down to
/// that level's resolution (and expressed in that level's voxel units).
class ProxyHeads {
 public:
  ProxyHeads(const FpnConfig& config, std::uint64_t seed);

  Tensor predict(int level, const Tensor& features) const;
  int levels() const { return static_cast<int>(heads_.size()); }
  ParameterList<float> parameters() const;

 private:
  std::vector<Conv3dLayer<float>> heads_;
};

struct PretrainConfig {
  int epochs = 40;
  int batch_size = 8;
  double learning_rate = 1e-3;
  double clip_norm = 0.75;
  std::uint64_t seed = 1;
};

/// Box-averages a [B, 3, z, y, x] flow by `factor` per axis and divides the
/// vectors by `factor`.
Tensor downsample_flow(const Tensor& flows, int factor);

/// Mean over levels of the per-level mean squared error of the proxy heads.
double proxy_loss(const FpnExtractor<float>& fpn, const ProxyHeads& heads, const std::vector<AnnotatedSample>& samples);

/// Trains extractor and heads jointly with Adam, then freezes the extractor.
/// Returns the mean training loss of every epoch. Throws NumericError naming
/// the step when the loss stops being finite.
std::vector<double> pretrain_fpn(FpnExtractor<float>& fpn, ProxyHeads& heads,
                                 const std::vector<AnnotatedSample>& samples, const PretrainConfig& config);

}  // namespace flowgen
