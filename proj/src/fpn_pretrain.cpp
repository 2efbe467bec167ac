#include "flowgen/fpn_pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "flowgen/errors.hpp"
#include "flowgen/ops.hpp"
#include "flowgen/optim.hpp"
#include "flowgen/random.hpp"
#include "flowgen/train.hpp"

namespace flowgen {

ProxyHeads::ProxyHeads(const FpnConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  for (int c : config.channels) heads_.emplace_back(c, 3, ConvGeometry{3, 1, 1}, rng);
}

Tensor ProxyHeads::predict(int level, const Tensor& features) const {
  return heads_.at(static_cast<std::size_t>(level)).forward(features);
}

ParameterList<float> ProxyHeads::parameters() const {
  ParameterList<float> out;
  for (std::size_t l = 0; l < heads_.size(); ++l) heads_[l].append_parameters("proxy.level" + std::to_string(l), out);
  return out;
}

Tensor downsample_flow(const Tensor& flows, int factor) {
  if (flows.rank() != 5 || factor < 1 || flows.dim(2) % factor || flows.dim(3) % factor || flows.dim(4) % factor) {
    throw DimensionError("cannot downsample " + shape_to_string(flows.shape()) + " by " + std::to_string(factor));
  }
  const int b = flows.dim(0), c = flows.dim(1), d = flows.dim(2), h = flows.dim(3), w = flows.dim(4);
  const int od = d / factor, oh = h / factor, ow = w / factor;
  std::vector<float> out(static_cast<std::size_t>(b) * c * od * oh * ow, 0.0f);
  const auto in = flows.data();
  const double scale = 1.0 / (static_cast<double>(factor) * factor * factor * factor);
  for (int n = 0; n < b * c; ++n) {
    const float* src = in.data() + static_cast<std::int64_t>(n) * d * h * w;
    float* dst = out.data() + static_cast<std::int64_t>(n) * od * oh * ow;
    for (int z = 0; z < od; ++z) {
      for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
          double acc = 0.0;
          for (int dz = 0; dz < factor; ++dz) {
            for (int dy = 0; dy < factor; ++dy) {
              const float* row = src + (static_cast<std::int64_t>(z * factor + dz) * h + y * factor + dy) * w;
              for (int dx = 0; dx < factor; ++dx) acc += row[x * factor + dx];
            }
          }
          dst[(static_cast<std::int64_t>(z) * oh + y) * ow + x] = static_cast<float>(acc * scale);
        }
      }
    }
  }
  return Tensor::from_data({b, c, od, oh, ow}, std::move(out));
}

namespace {

Tensor batch_proxy_loss(const FpnExtractor<float>& fpn, const ProxyHeads& heads, const Batch& data) {
  const FeaturePyramid<float> pyramid = fpn.extract(data.frames);
  Tensor total;
  for (int l = 0; l < heads.levels(); ++l) {
    const Tensor target = downsample_flow(data.flows, 1 << (l + 1));
    const Tensor err = mse(heads.predict(l, pyramid.levels[static_cast<std::size_t>(l)]), target);
    total = total.defined() ? add(total, err) : err;
  }
  return affine(total, 1.0f / static_cast<float>(heads.levels()));
}

}  // namespace

double proxy_loss(const FpnExtractor<float>& fpn, const ProxyHeads& heads,
                  const std::vector<AnnotatedSample>& samples) {
  if (samples.empty()) throw ValidationError("proxy loss needs at least one sample");
  NoGradGuard no_grad;
  double sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    sum += batch_proxy_loss(fpn, heads, make_batch(samples, {i})).item();
  }
  return sum / static_cast<double>(samples.size());
}

std::vector<double> pretrain_fpn(FpnExtractor<float>& fpn, ProxyHeads& heads,
                                 const std::vector<AnnotatedSample>& samples, const PretrainConfig& config) {
  if (samples.empty()) throw ValidationError("FPN pretraining needs a non-empty dataset");
  if (config.epochs < 0 || config.batch_size < 1) throw ValidationError("invalid pretraining epochs or batch size");
  if (!(config.learning_rate > 0.0) || !(config.clip_norm > 0.0)) {
    throw ValidationError("pretraining learning rate and clip norm must be positive");
  }
  fpn.unfreeze();
  ParameterList<float> params = fpn.parameters();
  for (auto& p : heads.parameters()) params.push_back(p);
  Adam adam(params, AdamConfig{config.learning_rate});
  std::mt19937_64 rng(derive_seed(config.seed, 0x667072ull));

  const auto batch = std::min(static_cast<std::size_t>(config.batch_size), samples.size());
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> history;
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    const std::size_t batches = samples.size() / batch;
    for (std::size_t b = 0; b < batches; ++b) {
      ++step;
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b * batch),
                                         order.begin() + static_cast<std::ptrdiff_t>((b + 1) * batch));
      const Tensor loss = batch_proxy_loss(fpn, heads, make_batch(samples, idx));
      if (!std::isfinite(loss.item())) {
        fpn.freeze();
        throw NumericError("FPN pretraining loss became non-finite at step " + std::to_string(step));
      }
      adam.zero_grad();
      loss.backward();
      clip_gradients(params, config.clip_norm);
      adam.step();
      sum += loss.item();
    }
    history.push_back(sum / static_cast<double>(batches));
  }
  fpn.freeze();
  for (auto& p : params) p.tensor.zero_grad();
  return history;
}

}  // namespace flowgen
