#include "flowgen/optim.hpp"

#include <cmath>

#include "flowgen/errors.hpp"

namespace flowgen {

Adam::Adam(ParameterList<float> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  if (!(config_.learning_rate > 0.0) || !(config_.beta1 >= 0.0 && config_.beta1 < 1.0) ||
      !(config_.beta2 >= 0.0 && config_.beta2 < 1.0) || !(config_.epsilon > 0.0)) {
    throw ValidationError("invalid Adam hyperparameters");
  }
  for (const auto& p : params_) {
    const auto n = static_cast<std::size_t>(p.tensor.numel());
    moments_.push_back({p.name, p.tensor.shape(), std::vector<float>(n, 0.0f), std::vector<float>(n, 0.0f)});
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void Adam::step() {
  ++step_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  const float b1 = static_cast<float>(config_.beta1);
  const float b2 = static_cast<float>(config_.beta2);
  const float step_size = static_cast<float>(config_.learning_rate / c1);
  const float inv_sqrt_c2 = static_cast<float>(1.0 / std::sqrt(c2));
  const float eps = static_cast<float>(config_.epsilon);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].tensor;
    if (!p.requires_grad()) continue;
    const auto g = p.grad();
    if (g.empty()) continue;
    auto w = p.mutable_data();
    auto& m = moments_[i].m;
    auto& v = moments_[i].v;
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1.0f - b1) * g[j];
      v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
      w[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_c2 + eps);
    }
  }
}

void Adam::restore(std::vector<AdamMoments> moments, std::uint64_t steps) {
  if (moments.size() != moments_.size()) {
    throw FormatError("optimizer state holds " + std::to_string(moments.size()) + " entries, expected " +
                      std::to_string(moments_.size()));
  }
  for (std::size_t i = 0; i < moments.size(); ++i) {
    const auto& mine = moments_[i];
    const auto& theirs = moments[i];
    if (theirs.name != mine.name || theirs.shape != mine.shape || theirs.m.size() != mine.m.size() ||
        theirs.v.size() != mine.v.size()) {
      throw FormatError("optimizer state entry '" + theirs.name + "' does not match parameter '" + mine.name + "'");
    }
  }
  moments_ = std::move(moments);
  step_ = steps;
}

double gradient_norm(const ParameterList<float>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (float g : p.tensor.grad()) sq += static_cast<double>(g) * g;
  }
  return std::sqrt(sq);
}

double clip_gradients(ParameterList<float>& params, double max_norm) {
  if (!(max_norm > 0.0)) throw ValidationError("clip norm must be positive");
  double sq = 0.0;
  for (const auto& p : params) {
    for (float g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
      sq += static_cast<double>(g) * g;
    }
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return 1.0;
  const double factor = max_norm / norm;
  const float f = static_cast<float>(factor);
  for (auto& p : params) {
    for (float& g : p.tensor.mutable_grad()) g *= f;
  }
  return factor;
}

}  // namespace flowgen
