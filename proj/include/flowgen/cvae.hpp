#pragma once

#include <cstdint>
#include <vector>

#include "flowgen/fpn.hpp"
#include "flowgen/layers.hpp"
#include "flowgen/tensor.hpp"

namespace flowgen {

/// Lower and upper clamp applied to the log-variance head.
inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

struct ModelConfig {
  /// Channel counts of the conditioning pyramid, one per level.
  std::vector<int> fpn_channels{16, 32, 32, 64, 64};
  /// Output channels of encoder level l (resolution 1/2^(l+1)).
  std::vector<int> encoder_channels{16, 32, 32, 64, 64};
  /// Output channels of decoder level l (resolution 2^(l+1) of the latent grid).
  std::vector<int> decoder_channels{64, 32, 32, 16, 8};
  int latent_channels = 32;

  int levels() const { return static_cast<int>(fpn_channels.size()); }
  void validate() const;
};

/// Approximate posterior over the latent grid plus one draw from it.
template <typename T>
struct LatentCode {
  BasicTensor<T> mu;       // [B, latent_channels, s, s, s]
  BasicTensor<T> log_var;  // clamped to [kLogVarMin, kLogVarMax]
  BasicTensor<T> sample;   // undefined until reparameterize()
};

/// Conditional VAE over flow fields. Both the encoder and the decoder
/// concatenate the resolution-matched pyramid level at every level; the raw
/// frame joins the flow at the encoder input and the features before the
/// output head.
template <typename T>
class CvaeModel {
 public:
  CvaeModel(ModelConfig config, std::uint64_t seed);

  CvaeModel(CvaeModel&&) noexcept = default;
  CvaeModel& operator=(CvaeModel&&) noexcept = default;
  CvaeModel(const CvaeModel&) = delete;
  CvaeModel& operator=(const CvaeModel&) = delete;

  /// `flow` is [B, 3, z, y, x] at the frame resolution.
  LatentCode<T> encode(const BasicTensor<T>& flow, const Conditioning<T>& cond) const;

  /// `z` is [B, latent_channels, ...] at the coarsest pyramid resolution.
  BasicTensor<T> decode(const BasicTensor<T>& z, const Conditioning<T>& cond) const;

  /// Shape of the latent grid for frames of the given [B, 1, z, y, x] shape.
  Shape latent_shape(const Shape& frame_shape) const;

  const ModelConfig& config() const { return config_; }
  ParameterList<T> parameters() const;

 private:
  struct EncoderLevel {
    Conv3dLayer<T> reduce;
    Conv3dLayer<T> refine;
  };
  struct DecoderLevel {
    Deconv3dLayer<T> up;
    Conv3dLayer<T> refine;
  };

  ModelConfig config_;
  std::vector<EncoderLevel> encoder_;
  std::vector<DecoderLevel> decoder_;
  BasicTensor<T> mu_weight_, mu_bias_;
  BasicTensor<T> log_var_weight_, log_var_bias_;
  Conv3dLayer<T> head_;
};

/// sample = mu + exp(log_var / 2) * eps; gradients reach mu and log_var only.
template <typename T>
LatentCode<T> reparameterize(const LatentCode<T>& code, const BasicTensor<T>& eps);

/// Draws eps from a standard normal seeded by `seed`.
template <typename T>
LatentCode<T> reparameterize(const LatentCode<T>& code, std::uint64_t seed);

/// Standard-normal tensor of the given shape.
template <typename T>
BasicTensor<T> standard_normal(const Shape& shape, std::uint64_t seed);

/// Gaussian KL to the standard normal: summed over latent elements, averaged
/// over the batch.
template <typename T>
BasicTensor<T> kl_divergence(const BasicTensor<T>& mu, const BasicTensor<T>& log_var);

template <typename T>
struct LossTerms {
  BasicTensor<T> total;
  BasicTensor<T> recon;
  BasicTensor<T> kl;
};

/// total = lambda_recon * mse(recon, flow_gt) + lambda_kl * KL.
/// Throws NumericError if any term is non-finite.
template <typename T>
LossTerms<T> cvae_loss(const BasicTensor<T>& flow_gt, const BasicTensor<T>& recon, const LatentCode<T>& code,
                       double lambda_recon, double lambda_kl);

}  // namespace flowgen
