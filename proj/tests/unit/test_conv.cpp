#include <doctest.h>

#include <random>

#include "flowgen/conv.hpp"
#include "flowgen/errors.hpp"
#include "oracles.hpp"

using namespace flowgen;
using testing::gradcheck;
using testing::probe;
using testing::random_tensor;

namespace {

template <typename T>
std::vector<double> as_double(const BasicTensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

template <typename T>
double conv_oracle_error(const Shape& in_shape, int out_ch, ConvGeometry g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto x = random_tensor<T>(in_shape, rng);
  const auto w = random_tensor<T>({out_ch, in_shape[1], g.kernel, g.kernel, g.kernel}, rng);
  const auto b = random_tensor<T>({out_ch}, rng);
  const auto out = conv3d(x, w, b, g);
  Shape expected;
  const auto ref = testing::naive_conv3d(as_double(x), x.shape(), as_double(w), w.shape(), as_double(b), g.stride,
                                         g.padding, expected);
  REQUIRE(out.shape() == expected);
  double worst = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ref[i] - out.data()[i]));
  return worst;
}

template <typename T>
double deconv_oracle_error(const Shape& in_shape, int out_ch, ConvGeometry g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto x = random_tensor<T>(in_shape, rng);
  const auto w = random_tensor<T>({in_shape[1], out_ch, g.kernel, g.kernel, g.kernel}, rng);
  const auto b = random_tensor<T>({out_ch}, rng);
  const auto out = deconv3d(x, w, b, g);
  Shape expected;
  const auto ref = testing::naive_deconv3d(as_double(x), x.shape(), as_double(w), w.shape(), as_double(b), g.stride,
                                           g.padding, expected);
  REQUIRE(out.shape() == expected);
  double worst = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ref[i] - out.data()[i]));
  return worst;
}

}  // namespace

TEST_CASE("output extents") {
  CHECK(conv_output_extent(32, {3, 2, 1}) == 16);
  CHECK(conv_output_extent(5, {3, 1, 1}) == 5);
  CHECK(conv_output_extent(5, {3, 1, 0}) == 3);
  CHECK(deconv_output_extent(16, {4, 2, 1}) == 32);
  CHECK(deconv_output_extent(1, {4, 2, 1}) == 2);
  CHECK_THROWS_AS(conv_output_extent(2, {5, 1, 0}), DimensionError);
  CHECK_THROWS_AS(conv_output_extent(4, {0, 1, 0}), DimensionError);
}

TEST_CASE("conv3d matches the seven-loop oracle") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    CAPTURE(seed);
    CHECK(conv_oracle_error<double>({2, 3, 5, 4, 7}, 4, {3, 1, 1}, seed) < 1e-12);
    CHECK(conv_oracle_error<double>({1, 2, 4, 3, 20}, 9, {3, 1, 1}, seed) < 1e-12);  // vectorised path
    CHECK(conv_oracle_error<double>({2, 2, 6, 6, 6}, 3, {3, 2, 1}, seed) < 1e-12);
    CHECK(conv_oracle_error<double>({1, 3, 4, 4, 4}, 2, {1, 1, 0}, seed) < 1e-12);
    CHECK(conv_oracle_error<double>({1, 2, 5, 5, 5}, 2, {3, 1, 0}, seed) < 1e-12);
    CHECK(conv_oracle_error<float>({2, 3, 6, 5, 17}, 5, {3, 1, 1}, seed) < 1e-4);
    CHECK(conv_oracle_error<float>({1, 4, 8, 8, 8}, 3, {3, 2, 1}, seed) < 1e-4);
  }
}

TEST_CASE("deconv3d matches the scatter oracle") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    CAPTURE(seed);
    CHECK(deconv_oracle_error<double>({2, 3, 2, 3, 2}, 4, {4, 2, 1}, seed) < 1e-12);
    CHECK(deconv_oracle_error<double>({1, 2, 1, 1, 1}, 3, {4, 2, 1}, seed) < 1e-12);
    CHECK(deconv_oracle_error<double>({1, 2, 3, 3, 3}, 2, {3, 1, 1}, seed) < 1e-12);
    CHECK(deconv_oracle_error<float>({2, 4, 4, 4, 4}, 3, {4, 2, 1}, seed) < 1e-4);
  }
}

TEST_CASE("deconv3d is the adjoint of conv3d") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const ConvGeometry g{4, 2, 1};
    const auto x = random_tensor<double>({1, 3, 6, 4, 6}, rng);
    const auto w = random_tensor<double>({2, 3, 4, 4, 4}, rng);
    const auto cx = conv3d(x, w, TensorD(), g);
    const auto y = random_tensor<double>(cx.shape(), rng);
    const auto dy = deconv3d(y, w, TensorD(), g);
    REQUIRE(dy.shape() == x.shape());
    double lhs = 0.0, rhs = 0.0;
    for (std::int64_t i = 0; i < cx.numel(); ++i) lhs += cx.at(i) * y.at(i);
    for (std::int64_t i = 0; i < x.numel(); ++i) rhs += x.at(i) * dy.at(i);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("impulse responses reproduce the kernel") {
  std::mt19937_64 rng(11);
  const auto w = random_tensor<double>({1, 1, 3, 3, 3}, rng);
  std::vector<double> delta(125, 0.0);
  delta[2 * 25 + 2 * 5 + 2] = 1.0;
  const auto x = TensorD::from_data({1, 1, 5, 5, 5}, delta);

  // Cross-correlation flips the kernel around the impulse.
  const auto c = conv3d(x, w, TensorD(), {3, 1, 1});
  for (int kz = 0; kz < 3; ++kz)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        CHECK(c.at((3 - kz) * 25 + (3 - ky) * 5 + (3 - kx)) == w.at(kz * 9 + ky * 3 + kx));
      }

  // The transposed convolution stamps it unflipped.
  const auto d = deconv3d(x, w, TensorD(), {3, 1, 1});
  for (int kz = 0; kz < 3; ++kz)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        CHECK(d.at((1 + kz) * 25 + (1 + ky) * 5 + (1 + kx)) == w.at(kz * 9 + ky * 3 + kx));
      }
}

TEST_CASE("conv and deconv gradients pass finite-difference checks") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    std::mt19937_64 rng(seed);
    auto x = random_tensor<double>({1, 2, 6, 5, 6}, rng, -1, 1, true);
    auto w3 = random_tensor<double>({3, 2, 3, 3, 3}, rng, -1, 1, true);
    auto b3 = random_tensor<double>({3}, rng, -1, 1, true);
    CHECK(gradcheck([&](auto& in) { return probe(conv3d(in[0], in[1], in[2], {3, 1, 1}), seed); }, {x, w3, b3})
              .max_rel_error < 1e-3);
    CHECK(gradcheck([&](auto& in) { return probe(conv3d(in[0], in[1], in[2], {3, 2, 1}), seed); }, {x, w3, b3})
              .max_rel_error < 1e-3);

    auto y = random_tensor<double>({1, 2, 3, 2, 3}, rng, -1, 1, true);
    auto w4 = random_tensor<double>({2, 3, 4, 4, 4}, rng, -1, 1, true);
    CHECK(gradcheck([&](auto& in) { return probe(deconv3d(in[0], in[1], in[2], {4, 2, 1}), seed); }, {y, w4, b3})
              .max_rel_error < 1e-3);
  }
}

TEST_CASE("vectorised conv path passes finite-difference checks") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::mt19937_64 rng(seed);
    auto x = random_tensor<double>({2, 2, 3, 3, 9}, rng, -1, 1, true);
    auto w = random_tensor<double>({10, 2, 3, 3, 3}, rng, -1, 1, true);
    auto b = random_tensor<double>({10}, rng, -1, 1, true);
    CHECK(gradcheck([&](auto& in) { return probe(conv3d(in[0], in[1], in[2], {3, 1, 1}), seed); }, {x, w, b})
              .max_rel_error < 1e-3);
  }
}

TEST_CASE("shape errors") {
  const auto x = Tensor::zeros({1, 2, 4, 4, 4});
  CHECK_THROWS_AS(conv3d(x, Tensor::zeros({3, 1, 3, 3, 3}), Tensor(), {3, 1, 1}), DimensionError);
  CHECK_THROWS_AS(conv3d(x, Tensor::zeros({3, 2, 3, 3, 3}), Tensor::zeros({2}), {3, 1, 1}), DimensionError);
  CHECK_THROWS_AS(conv3d(Tensor::zeros({2, 4, 4, 4}), Tensor::zeros({3, 2, 3, 3, 3}), Tensor(), {3, 1, 1}),
                  DimensionError);
  CHECK_THROWS_AS(deconv3d(x, Tensor::zeros({3, 2, 4, 4, 4}), Tensor(), {4, 2, 1}), DimensionError);
}
