#include "flowgen/cvae.hpp"

#include <cmath>
#include <random>

#include "flowgen/errors.hpp"
#include "flowgen/ops.hpp"

namespace flowgen {

void ModelConfig::validate() const {
  const auto l = fpn_channels.size();
  if (l == 0) throw ValidationError("model needs at least one level");
  if (encoder_channels.size() != l || decoder_channels.size() != l) {
    throw ValidationError("encoder, decoder and pyramid must have the same number of levels (" +
                          std::to_string(encoder_channels.size()) + ", " + std::to_string(decoder_channels.size()) +
                          ", " + std::to_string(l) + ")");
  }
  auto positive = [](const std::vector<int>& v) {
    for (int c : v) {
      if (c <= 0) return false;
    }
    return true;
  };
  if (!positive(fpn_channels) || !positive(encoder_channels) || !positive(decoder_channels) || latent_channels <= 0) {
    throw ValidationError("channel counts must be positive");
  }
}

namespace {

template <typename T>
void require_spatial_match(const BasicTensor<T>& activations, const BasicTensor<T>& features, const char* side,
                           int level) {
  const Shape& a = activations.shape();
  const Shape& f = features.shape();
  if (a[0] != f[0] || a[2] != f[2] || a[3] != f[3] || a[4] != f[4]) {
    throw DimensionError(std::string(side) + " level " + std::to_string(level) + ": activations " +
                         shape_to_string(a) + " do not match pyramid features " + shape_to_string(f));
  }
}

}  // namespace

template <typename T>
CvaeModel<T>::CvaeModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const int levels = config_.levels();
  const auto& fpn = config_.fpn_channels;
  const auto& enc = config_.encoder_channels;
  const auto& dec = config_.decoder_channels;

  int in = 4;  // flow (3) + frame (1)
  for (int l = 0; l < levels; ++l) {
    EncoderLevel level{Conv3dLayer<T>(in, enc[l], {3, 2, 1}, rng),
                       Conv3dLayer<T>(enc[l] + fpn[l], enc[l], {3, 1, 1}, rng)};
    encoder_.push_back(std::move(level));
    in = enc[l];
  }
  const int top = enc[levels - 1];
  mu_weight_ = init_uniform<T>({config_.latent_channels, top}, top, 1, rng);
  mu_bias_ = init_uniform<T>({config_.latent_channels}, top, 1, rng);
  log_var_weight_ = init_uniform<T>({config_.latent_channels, top}, top, 1, rng);
  log_var_bias_ = init_uniform<T>({config_.latent_channels}, top, 1, rng);

  in = config_.latent_channels;
  for (int l = 0; l < levels; ++l) {
    const int cond = fpn[levels - 1 - l];
    DecoderLevel level{Deconv3dLayer<T>(in + cond, dec[l], {4, 2, 1}, rng),
                       Conv3dLayer<T>(dec[l], dec[l], {3, 1, 1}, rng)};
    decoder_.push_back(std::move(level));
    in = dec[l];
  }
  head_ = Conv3dLayer<T>(in + 1, 3, {3, 1, 1}, rng);
}

template <typename T>
LatentCode<T> CvaeModel<T>::encode(const BasicTensor<T>& flow, const Conditioning<T>& cond) const {
  const int levels = config_.levels();
  require_pyramid_divisible(cond.frame.shape(), levels);
  if (flow.rank() != 5 || flow.dim(1) != 3 || flow.dim(0) != cond.frame.dim(0) ||
      flow.dim(2) != cond.frame.dim(2) || flow.dim(3) != cond.frame.dim(3) || flow.dim(4) != cond.frame.dim(4)) {
    throw DimensionError("encode: flow " + shape_to_string(flow.shape()) + " does not match condition frame " +
                         shape_to_string(cond.frame.shape()));
  }
  if (static_cast<int>(cond.pyramid.levels.size()) != levels) {
    throw DimensionError("encode: pyramid has " + std::to_string(cond.pyramid.levels.size()) + " levels, model has " +
                         std::to_string(levels));
  }
  const T slope = static_cast<T>(kLeakySlope);
  BasicTensor<T> h = concat_channels<T>({flow, cond.frame});
  for (int l = 0; l < levels; ++l) {
    h = leaky_relu(encoder_[l].reduce.forward(h), slope);
    const auto& features = cond.pyramid.levels[static_cast<std::size_t>(l)];
    require_spatial_match(h, features, "encoder", l);
    h = leaky_relu(encoder_[l].refine.forward(concat_channels<T>({h, features})), slope);
  }
  LatentCode<T> code;
  code.mu = matmul_channels(h, mu_weight_, mu_bias_);
  code.log_var = clamp(matmul_channels(h, log_var_weight_, log_var_bias_), static_cast<T>(kLogVarMin),
                       static_cast<T>(kLogVarMax));
  return code;
}

template <typename T>
BasicTensor<T> CvaeModel<T>::decode(const BasicTensor<T>& z, const Conditioning<T>& cond) const {
  const int levels = config_.levels();
  if (static_cast<int>(cond.pyramid.levels.size()) != levels) {
    throw DimensionError("decode: pyramid has " + std::to_string(cond.pyramid.levels.size()) + " levels, model has " +
                         std::to_string(levels));
  }
  if (z.rank() != 5 || z.dim(1) != config_.latent_channels) {
    throw DimensionError("decode: latent " + shape_to_string(z.shape()) + " does not have " +
                         std::to_string(config_.latent_channels) + " channels");
  }
  const T slope = static_cast<T>(kLeakySlope);
  BasicTensor<T> h = z;
  for (int l = 0; l < levels; ++l) {
    const auto& features = cond.pyramid.levels[static_cast<std::size_t>(levels - 1 - l)];
    require_spatial_match(h, features, "decoder", l);
    h = leaky_relu(decoder_[l].up.forward(concat_channels<T>({h, features})), slope);
    h = leaky_relu(decoder_[l].refine.forward(h), slope);
  }
  require_spatial_match(h, cond.frame, "decoder output", levels);
  return head_.forward(concat_channels<T>({h, cond.frame}));
}

template <typename T>
Shape CvaeModel<T>::latent_shape(const Shape& frame_shape) const {
  require_pyramid_divisible(frame_shape, config_.levels());
  const int f = 1 << config_.levels();
  return {frame_shape[0], config_.latent_channels, frame_shape[2] / f, frame_shape[3] / f, frame_shape[4] / f};
}

template <typename T>
ParameterList<T> CvaeModel<T>::parameters() const {
  ParameterList<T> out;
  for (std::size_t l = 0; l < encoder_.size(); ++l) {
    const std::string prefix = "cvae.encoder" + std::to_string(l);
    encoder_[l].reduce.append_parameters(prefix + ".reduce", out);
    encoder_[l].refine.append_parameters(prefix + ".refine", out);
  }
  out.push_back({"cvae.latent.mu.weight", mu_weight_});
  out.push_back({"cvae.latent.mu.bias", mu_bias_});
  out.push_back({"cvae.latent.log_var.weight", log_var_weight_});
  out.push_back({"cvae.latent.log_var.bias", log_var_bias_});
  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    const std::string prefix = "cvae.decoder" + std::to_string(l);
    decoder_[l].up.append_parameters(prefix + ".up", out);
    decoder_[l].refine.append_parameters(prefix + ".refine", out);
  }
  head_.append_parameters("cvae.head", out);
  return out;
}

template <typename T>
BasicTensor<T> standard_normal(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<T> values(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return BasicTensor<T>::from_data(shape, std::move(values));
}

template <typename T>
LatentCode<T> reparameterize(const LatentCode<T>& code, const BasicTensor<T>& eps) {
  if (eps.shape() != code.mu.shape() || code.log_var.shape() != code.mu.shape()) {
    throw DimensionError("reparameterize: mu " + shape_to_string(code.mu.shape()) + ", log_var " +
                         shape_to_string(code.log_var.shape()) + " and eps " + shape_to_string(eps.shape()) +
                         " must match");
  }
  LatentCode<T> out = code;
  const BasicTensor<T> sigma = exp(affine(code.log_var, T(0.5)));
  out.sample = add(code.mu, mul(sigma, eps));
  return out;
}

template <typename T>
LatentCode<T> reparameterize(const LatentCode<T>& code, std::uint64_t seed) {
  return reparameterize(code, standard_normal<T>(code.mu.shape(), seed));
}

template <typename T>
BasicTensor<T> kl_divergence(const BasicTensor<T>& mu, const BasicTensor<T>& log_var) {
  if (mu.shape() != log_var.shape()) {
    throw DimensionError("kl_divergence: mu " + shape_to_string(mu.shape()) + " vs log_var " +
                         shape_to_string(log_var.shape()));
  }
  const int batch = mu.dim(0);
  // 0.5 * (mu^2 + exp(lv) - 1 - lv)
  const BasicTensor<T> terms = sub(add(square(mu), exp(log_var)), affine(log_var, T(1), T(1)));
  return affine(sum(terms), T(0.5) / static_cast<T>(batch));
}

template <typename T>
LossTerms<T> cvae_loss(const BasicTensor<T>& flow_gt, const BasicTensor<T>& recon, const LatentCode<T>& code,
                       double lambda_recon, double lambda_kl) {
  if (flow_gt.shape() != recon.shape()) {
    throw DimensionError("loss: ground truth " + shape_to_string(flow_gt.shape()) + " vs reconstruction " +
                         shape_to_string(recon.shape()));
  }
  LossTerms<T> terms;
  terms.recon = mse(recon, flow_gt);
  terms.kl = kl_divergence(code.mu, code.log_var);
  terms.total = add(affine(terms.recon, static_cast<T>(lambda_recon)), affine(terms.kl, static_cast<T>(lambda_kl)));
  if (!std::isfinite(static_cast<double>(terms.recon.item())) || !std::isfinite(static_cast<double>(terms.kl.item())) ||
      !std::isfinite(static_cast<double>(terms.total.item()))) {
    throw NumericError("non-finite loss: recon " + std::to_string(terms.recon.item()) + ", kl " +
                       std::to_string(terms.kl.item()));
  }
  return terms;
}

template class CvaeModel<float>;
template class CvaeModel<double>;
template LatentCode<float> reparameterize(const LatentCode<float>&, const BasicTensor<float>&);
template LatentCode<double> reparameterize(const LatentCode<double>&, const BasicTensor<double>&);
template LatentCode<float> reparameterize(const LatentCode<float>&, std::uint64_t);
template LatentCode<double> reparameterize(const LatentCode<double>&, std::uint64_t);
template BasicTensor<float> standard_normal(const Shape&, std::uint64_t);
template BasicTensor<double> standard_normal(const Shape&, std::uint64_t);
template BasicTensor<float> kl_divergence(const BasicTensor<float>&, const BasicTensor<float>&);
template BasicTensor<double> kl_divergence(const BasicTensor<double>&, const BasicTensor<double>&);
template LossTerms<float> cvae_loss(const BasicTensor<float>&, const BasicTensor<float>&, const LatentCode<float>&,
                                    double, double);
template LossTerms<double> cvae_loss(const BasicTensor<double>&, const BasicTensor<double>&,
                                     const LatentCode<double>&, double, double);

}  // namespace flowgen
