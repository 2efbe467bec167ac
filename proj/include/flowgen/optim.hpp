#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowgen/tensor.hpp"

namespace flowgen {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Per-parameter first and second moments, keyed by parameter name.
struct AdamMoments {
  std::string name;
  Shape shape;
  std::vector<float> m;
  std::vector<float> v;
};

/// Adam with bias correction. Parameters that do not require a gradient
/// (frozen ones) are never touched.
class Adam {
 public:
  Adam(ParameterList<float> params, AdamConfig config);

  void zero_grad();
  void step();

  std::uint64_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<AdamMoments>& moments() const { return moments_; }

  /// Restores moments and step count; names and shapes must match.
  void restore(std::vector<AdamMoments> moments, std::uint64_t steps);

 private:
  ParameterList<float> params_;
  AdamConfig config_;
  std::vector<AdamMoments> moments_;
  std::uint64_t step_ = 0;
};

/// Rescales all gradients so their global 2-norm is at most `max_norm`.
/// Returns the factor applied (1 when already within bounds). Throws
/// NumericError naming the first parameter holding a non-finite gradient.
double clip_gradients(ParameterList<float>& params, double max_norm);

/// Global 2-norm over the gradients of all parameters that have one.
double gradient_norm(const ParameterList<float>& params);

}  // namespace flowgen
