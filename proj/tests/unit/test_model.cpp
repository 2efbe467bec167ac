#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "flowgen/cvae.hpp"
#include "flowgen/errors.hpp"
#include "flowgen/fpn.hpp"
#include "flowgen/layers.hpp"
#include "oracles.hpp"

using namespace flowgen;
using testing::gradcheck;
using testing::probe;
using testing::random_tensor;

namespace {

FpnConfig tiny_fpn() { return FpnConfig{{2, 3}}; }

ModelConfig tiny_model() {
  ModelConfig m;
  m.fpn_channels = {2, 3};
  m.encoder_channels = {2, 3};
  m.decoder_channels = {3, 2};
  m.latent_channels = 2;
  return m;
}

std::vector<TensorD> tensors_of(const ParameterList<double>& params) {
  std::vector<TensorD> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

}  // namespace

TEST_CASE("layer gradients pass finite-difference checks") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    std::mt19937_64 rng(seed);
    Conv3dLayer<double> conv(2, 3, {3, 2, 1}, rng);
    Deconv3dLayer<double> up(3, 2, {4, 2, 1}, rng);
    ParameterList<double> params;
    conv.append_parameters("conv", params);
    up.append_parameters("up", params);
    set_trainable(params, true);
    auto x = random_tensor<double>({2, 2, 6, 4, 6}, rng, -1, 1, true);
    auto h = random_tensor<double>({1, 3, 3, 2, 3}, rng, -1, 1, true);
    CHECK(gradcheck([&](auto& in) { return probe(conv.forward(in[0]), seed); }, {x, conv.weight(), conv.bias()})
              .max_rel_error < 1e-3);
    CHECK(gradcheck([&](auto& in) { return probe(up.forward(in[0]), seed); }, {h, up.weight(), up.bias()})
              .max_rel_error < 1e-3);
  }
}

TEST_CASE("extractor gradients pass finite-difference checks") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    FpnExtractor<double> fpn(tiny_fpn(), seed);
    std::mt19937_64 rng(seed + 100);
    auto frame = random_tensor<double>({1, 1, 4, 4, 4}, rng, 0, 1, true);
    auto inputs = tensors_of(fpn.parameters());
    inputs.push_back(frame);
    const auto res = gradcheck(
        [&](auto& in) {
          const auto p = fpn.extract(in.back());
          return add(probe(p.levels[0], seed), probe(p.levels[1], seed + 1));
        },
        inputs);
    CHECK(res.max_rel_error < 1e-3);
    CHECK(res.skipped * 50 <= res.checked);
  }
}

TEST_CASE("extractor shapes, divisibility and freezing") {
  FpnExtractor<float> fpn(FpnConfig{}, 1);
  const auto p = fpn.extract(Tensor::zeros({2, 1, 32, 32, 32}));
  REQUIRE(p.levels.size() == 5);
  CHECK(p.levels[0].shape() == Shape{2, 16, 16, 16, 16});
  CHECK(p.levels[4].shape() == Shape{2, 64, 1, 1, 1});
  CHECK_THROWS_AS(fpn.extract(Tensor::zeros({1, 1, 32, 32, 48})), DimensionError);
  CHECK_THROWS_AS(fpn.extract(Tensor::zeros({1, 1, 32, 32, 24})), DimensionError);
  CHECK_THROWS_AS(fpn.extract(Tensor::zeros({1, 2, 32, 32, 32})), DimensionError);
  CHECK_THROWS_AS(FpnExtractor<float>(FpnConfig{{}}, 1), ValidationError);

  fpn.freeze();
  for (const auto& param : fpn.parameters()) CHECK_FALSE(param.tensor.requires_grad());
  const auto cond = fpn.condition(Tensor::full({1, 1, 32, 32, 32}, 0.5f));
  CHECK_FALSE(cond.pyramid.levels[4].requires_grad());
}

TEST_CASE("CVAE shapes follow the pyramid") {
  FpnExtractor<float> fpn(FpnConfig{}, 1);
  fpn.freeze();
  CvaeModel<float> model(ModelConfig{}, 2);
  const auto cond = fpn.condition(Tensor::full({2, 1, 32, 32, 32}, 0.3f));
  const auto code = model.encode(Tensor::zeros({2, 3, 32, 32, 32}), cond);
  CHECK(code.mu.shape() == Shape{2, 32, 1, 1, 1});
  CHECK(model.latent_shape({2, 1, 32, 32, 32}) == code.mu.shape());
  const auto out = model.decode(code.mu, cond);
  CHECK(out.shape() == Shape{2, 3, 32, 32, 32});
  CHECK_THROWS_AS(model.encode(Tensor::zeros({2, 3, 32, 32, 16}), cond), DimensionError);
  CHECK_THROWS_AS(model.decode(Tensor::zeros({2, 31, 1, 1, 1}), cond), DimensionError);

  ModelConfig bad;
  bad.decoder_channels = {8, 8};
  CHECK_THROWS_AS(CvaeModel<float>(bad, 1), ValidationError);
}

TEST_CASE("KL divergence analytic cases") {
  CHECK(kl_divergence(TensorD::zeros({1, 4, 1, 1, 1}), TensorD::zeros({1, 4, 1, 1, 1})).item() == 0.0);
  CHECK(std::abs(kl_divergence(TensorD::full({1}, 1.0), TensorD::zeros({1})).item() - 0.5) < 1e-7);
  CHECK(std::abs(kl_divergence(Tensor::full({1}, 1.0f), Tensor::zeros({1})).item() - 0.5) < 1e-7);
  // 0.5 (e - 1 - 1) for mu = 0, log_var = 1
  CHECK(kl_divergence(TensorD::zeros({1}), TensorD::full({1}, 1.0)).item() ==
        doctest::Approx(0.5 * (std::exp(1.0) - 2.0)));
  // Batch-averaged: two identical rows give the single-row value.
  CHECK(kl_divergence(TensorD::full({2, 1}, 1.0), TensorD::zeros({2, 1})).item() == doctest::Approx(0.5));
}

TEST_CASE("standard normal draws have unit statistics") {
  const int draws = 1000;
  const Shape s{1, 8, 1, 1, 1};
  std::vector<double> sum(8, 0.0), sq(8, 0.0);
  for (int i = 0; i < draws; ++i) {
    const auto z = standard_normal<float>(s, 1000 + static_cast<std::uint64_t>(i));
    for (int c = 0; c < 8; ++c) {
      sum[c] += z.at(c);
      sq[c] += z.at(c) * z.at(c);
    }
  }
  for (int c = 0; c < 8; ++c) {
    const double m = sum[c] / draws;
    const double var = sq[c] / draws - m * m;
    CHECK(std::abs(m) < 0.1);
    CHECK(var >= 0.85);
    CHECK(var <= 1.15);
  }
}

TEST_CASE("reparameterisation is mu + sigma * eps") {
  LatentCode<double> code;
  code.mu = TensorD::from_data({2}, {1.0, -1.0});
  code.log_var = TensorD::from_data({2}, {0.0, std::log(4.0)});
  const auto out = reparameterize(code, TensorD::from_data({2}, {0.5, 0.5}));
  CHECK(out.sample.at(0) == doctest::Approx(1.5));
  CHECK(out.sample.at(1) == doctest::Approx(0.0));
  CHECK_THROWS_AS(reparameterize(code, TensorD::zeros({3})), DimensionError);
}

TEST_CASE("end-to-end loss gradients pass finite-difference checks") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    FpnExtractor<double> fpn(tiny_fpn(), seed);
    fpn.freeze();
    CvaeModel<double> model(tiny_model(), seed + 1);
    std::mt19937_64 rng(seed + 2);
    const auto frame = random_tensor<double>({2, 1, 4, 4, 4}, rng, 0, 1);
    const auto flow = random_tensor<double>({2, 3, 4, 4, 4}, rng, -1, 1);
    const auto eps = standard_normal<double>({2, 2, 1, 1, 1}, seed + 3);
    const auto cond = fpn.condition(frame);
    const auto res = gradcheck(
        [&](auto&) {
          auto code = reparameterize(model.encode(flow, cond), eps);
          return cvae_loss(flow, model.decode(code.sample, cond), code, 0.95, 0.05).total;
        },
        tensors_of(model.parameters()));
    CHECK(res.max_rel_error < 2e-3);
    CHECK(res.skipped * 50 <= res.checked);
  }
}

TEST_CASE("non-finite losses raise numeric errors") {
  LatentCode<float> code;
  code.mu = Tensor::zeros({1, 1, 1, 1, 1});
  code.log_var = Tensor::zeros({1, 1, 1, 1, 1});
  const auto gt = Tensor::zeros({1, 3, 1, 1, 1});
  const auto bad = Tensor::full({1, 3, 1, 1, 1}, std::numeric_limits<float>::quiet_NaN());
  CHECK_THROWS_AS(cvae_loss(gt, bad, code, 0.95, 0.05), NumericError);
  CHECK_THROWS_AS(cvae_loss(gt, Tensor::zeros({1, 3, 1, 1, 2}), code, 0.95, 0.05), DimensionError);
}
