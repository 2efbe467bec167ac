#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "flowgen/errors.hpp"
#include "flowgen/optim.hpp"

using namespace flowgen;

namespace {

ParameterList<float> make_params(std::vector<std::vector<float>> values) {
  ParameterList<float> out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const int n = static_cast<int>(values[i].size());
    out.push_back({"p" + std::to_string(i), Tensor::from_data({n}, std::move(values[i]), true)});
  }
  return out;
}

void set_grad(Tensor& t, const std::vector<float>& g) {
  auto dst = t.mutable_grad();
  REQUIRE(dst.size() == g.size());
  std::copy(g.begin(), g.end(), dst.begin());
}

}  // namespace

TEST_CASE("adam follows the bias-corrected update") {
  auto params = make_params({{0.5f, -1.0f, 2.0f}});
  Adam adam(params, AdamConfig{});
  std::vector<double> w{0.5, -1.0, 2.0}, m(3, 0.0), v(3, 0.0);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int step = 1; step <= 25; ++step) {
    std::vector<float> g(3);
    for (auto& x : g) x = static_cast<float>(nd(rng));
    set_grad(params[0].tensor, g);
    adam.step();
    for (int j = 0; j < 3; ++j) {
      m[j] = 0.9 * m[j] + 0.1 * g[j];
      v[j] = 0.999 * v[j] + 0.001 * g[j] * g[j];
      const double mh = m[j] / (1.0 - std::pow(0.9, step));
      const double vh = v[j] / (1.0 - std::pow(0.999, step));
      w[j] -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
    }
    for (int j = 0; j < 3; ++j) CHECK(params[0].tensor.data()[j] == doctest::Approx(w[j]).epsilon(1e-5));
  }
  CHECK(adam.steps() == 25);
}

TEST_CASE("adam leaves zero-gradient and frozen parameters alone") {
  auto params = make_params({{1.0f, 2.0f}, {3.0f}});
  Adam adam(params, AdamConfig{});
  set_grad(params[0].tensor, {0.0f, 0.0f});
  set_grad(params[1].tensor, {0.0f});
  adam.step();
  CHECK(params[0].tensor.data()[0] == 1.0f);
  CHECK(params[0].tensor.data()[1] == 2.0f);

  set_grad(params[1].tensor, {1.0f});
  params[1].tensor.set_requires_grad(false);
  adam.step();
  CHECK(params[1].tensor.data()[0] == 3.0f);

  CHECK_THROWS_AS(Adam(params, AdamConfig{0.0}), ValidationError);
  CHECK_THROWS_AS(Adam(params, AdamConfig{1e-3, 1.0}), ValidationError);
}

TEST_CASE("adam state restore checks names and shapes") {
  auto params = make_params({{1.0f, 2.0f}});
  Adam adam(params, AdamConfig{});
  auto moments = adam.moments();
  CHECK_NOTHROW(adam.restore(moments, 7));
  CHECK(adam.steps() == 7);
  moments[0].name = "other";
  CHECK_THROWS_AS(adam.restore(moments, 7), FormatError);
  CHECK_THROWS_AS(adam.restore({}, 7), FormatError);
}

TEST_CASE("clipping rescales to the bound") {
  auto params = make_params({{0.6f, 0.0f}, {0.8f, 0.0f, 0.0f}});
  set_grad(params[0].tensor, {0.9f, 0.0f});
  set_grad(params[1].tensor, {1.2f, 0.0f, 0.0f});
  CHECK(gradient_norm(params) == doctest::Approx(1.5));
  CHECK(clip_gradients(params, 0.75) == doctest::Approx(0.5));
  CHECK(params[0].tensor.grad()[0] == doctest::Approx(0.45));
  CHECK(params[1].tensor.grad()[0] == doctest::Approx(0.6));
  CHECK(gradient_norm(params) == doctest::Approx(0.75));
  CHECK(clip_gradients(params, 0.75) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK_THROWS_AS(clip_gradients(params, 0.0), ValidationError);
}

TEST_CASE("clipping never grows a component and always meets the bound") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> u(-3.0f, 3.0f);
  std::uniform_int_distribution<int> len(1, 40);
  for (int trial = 0; trial < 100; ++trial) {
    auto params = make_params({std::vector<float>(len(rng), 0.0f), std::vector<float>(len(rng), 0.0f)});
    std::vector<std::vector<float>> before;
    for (auto& p : params) {
      std::vector<float> g(static_cast<std::size_t>(p.tensor.numel()));
      for (auto& x : g) x = trial % 10 == 0 ? u(rng) * 0.01f : u(rng);
      set_grad(p.tensor, g);
      before.push_back(g);
    }
    clip_gradients(params, 0.75);
    CHECK(gradient_norm(params) <= 0.75 + 1e-6);
    for (std::size_t i = 0; i < params.size(); ++i)
      for (std::size_t j = 0; j < before[i].size(); ++j) {
        CHECK(std::abs(params[i].tensor.grad()[j]) <= std::abs(before[i][j]));
        CHECK(params[i].tensor.grad()[j] * before[i][j] >= 0.0f);
      }
  }
}

TEST_CASE("clipping rejects non-finite gradients by name") {
  auto params = make_params({{1.0f}, {1.0f, 1.0f}});
  set_grad(params[0].tensor, {0.5f});
  set_grad(params[1].tensor, {0.5f, std::numeric_limits<float>::quiet_NaN()});
  try {
    clip_gradients(params, 0.75);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("'p1'") != std::string::npos);
  }
  set_grad(params[1].tensor, {0.5f, std::numeric_limits<float>::infinity()});
  CHECK_THROWS_AS(clip_gradients(params, 0.75), NumericError);
}
