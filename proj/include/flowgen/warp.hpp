#pragma once

#include "flowgen/tensor.hpp"
#include "flowgen/volume.hpp"

namespace flowgen {

/// Backward warp: out(x) = source(x + flow(x)), trilinear, with sample
/// coordinates clamped to the grid. `source` is [B, C, z, y, x] and `flow`
/// is [B, 3, z, y, x] with channels (dx, dy, dz). Differentiable in both.
template <typename T>
BasicTensor<T> warp(const BasicTensor<T>& source, const BasicTensor<T>& flow);

Volume warp(const Volume& source, const FlowField& flow);

struct EndpointError {
  double mean = 0.0;
  double std = 0.0;
};

/// Mean and population standard deviation of the per-voxel Euclidean
/// endpoint error, in voxels.
EndpointError mepe(const FlowField& pred, const FlowField& gt);

struct FlowStats {
  double mean_magnitude = 0.0;
  double max_magnitude = 0.0;
  // Central-difference divergence over interior voxels.
  double divergence_mean = 0.0;
  double divergence_min = 0.0;
  double divergence_max = 0.0;
};

FlowStats flow_stats(const FlowField& flow);

/// Mean absolute intensity difference between warp(es, flow) and ed.
double warp_consistency(const Volume& es, const Volume& ed, const FlowField& flow);

}  // namespace flowgen
