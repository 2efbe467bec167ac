#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "flowgen/errors.hpp"
#include "flowgen/volume.hpp"
#include "flowgen/warp.hpp"
#include "oracles.hpp"

using namespace flowgen;
using testing::gradcheck;
using testing::probe;

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "flowgen_unit_warp";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("identity warp is bit-exact") {
  std::mt19937_64 rng(1);
  const auto v = testing::random_volume({7, 5, 6}, rng);
  CHECK(warp(v, FlowField(v.extent())) == v);
}

TEST_CASE("integer shifts are exact away from the border") {
  std::mt19937_64 rng(2);
  const Extent3 e{8, 8, 8};
  const auto v = testing::random_volume(e, rng);
  FlowField f(e);
  for (int k = 0; k < 8; ++k)
    for (int j = 0; j < 8; ++j)
      for (int i = 0; i < 8; ++i) {
        f.at(0, i, j, k) = 2.0f;
        f.at(1, i, j, k) = -1.0f;
        f.at(2, i, j, k) = 1.0f;
      }
  const auto w = warp(v, f);
  for (int k = 0; k < 7; ++k)
    for (int j = 1; j < 8; ++j)
      for (int i = 0; i < 6; ++i) CHECK(w.at(i, j, k) == v.at(i + 2, j - 1, k + 1));
}

TEST_CASE("random warps match the naive trilinear oracle") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const Extent3 e{8, 8, 8};
    const auto v = testing::random_volume(e, rng);
    FlowField f(e);
    std::uniform_real_distribution<float> d(-3.0f, 3.0f);
    for (auto& x : f.values()) x = d(rng);  // includes samples clamped at the border
    const auto got = warp(v, f);
    const auto ref = testing::naive_warp(v, f);
    double worst = 0.0;
    for (std::size_t i = 0; i < got.values().size(); ++i) {
      worst = std::max(worst, static_cast<double>(std::abs(got.values()[i] - ref.values()[i])));
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("warp gradients pass finite-difference checks") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    std::mt19937_64 rng(seed);
    const Extent3 e{5, 4, 6};
    const auto flow = testing::smooth_region_flow(e, rng);
    const auto src = testing::random_tensor<double>({2, 2, 6, 4, 5}, rng, -1, 1, true);
    std::vector<double> fv;
    for (int b = 0; b < 2; ++b) fv.insert(fv.end(), flow.values().begin(), flow.values().end());
    auto f = TensorD::from_data({2, 3, 6, 4, 5}, fv, true);
    CHECK(gradcheck([&](auto& in) { return probe(warp(in[0], in[1]), seed); }, {src, f}).max_rel_error < 1e-3);
  }
}

TEST_CASE("clamped coordinates pass no gradient to the flow") {
  auto src = TensorD::from_data({1, 1, 1, 1, 3}, {1.0, 2.0, 4.0});
  auto f = TensorD::from_data({1, 3, 1, 1, 3}, {5.0, 5.0, -5.0, 0, 0, 0, 0, 0, 0}, true);
  sum(warp(src, f)).backward();
  CHECK(f.grad()[0] == 0.0);
  CHECK(f.grad()[2] == 0.0);
}

TEST_CASE("mEPE matches a per-voxel loop") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const Extent3 e{6, 5, 4};
    FlowField a(e), b(e);
    std::normal_distribution<float> n(0.0f, 1.0f);
    for (auto& x : a.values()) x = n(rng);
    for (auto& x : b.values()) x = n(rng);
    const auto m = mepe(a, b);
    CHECK(m.mean == doctest::Approx(testing::naive_mepe(a, b)).epsilon(1e-12));
    CHECK(m.std > 0.0);
  }
  FlowField a({2, 2, 2}), b({2, 2, 2});
  b.at(0, 0, 0, 0) = 3.0f;
  b.at(1, 0, 0, 0) = 4.0f;  // one voxel at distance 5
  CHECK(mepe(a, b).mean == doctest::Approx(5.0 / 8.0));
  CHECK(mepe(a, a).mean == 0.0);
  CHECK_THROWS_AS(mepe(a, FlowField({2, 2, 3})), DimensionError);
}

TEST_CASE("flow statistics and warp consistency") {
  FlowField f({4, 4, 4});
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < 4; ++i) {
        f.at(0, i, j, k) = 0.3f;
        f.at(1, i, j, k) = 0.4f;
      }
  const auto s = flow_stats(f);
  CHECK(s.mean_magnitude == doctest::Approx(0.5));
  CHECK(s.max_magnitude == doctest::Approx(0.5));
  CHECK(s.divergence_mean == doctest::Approx(0.0));

  std::mt19937_64 rng(4);
  const auto es = testing::random_volume({4, 4, 4}, rng);
  CHECK(warp_consistency(es, warp(es, f), f) == 0.0);
  CHECK(warp_consistency(es, es, f) > 0.0);
}

TEST_CASE("VOLF3D round trip and error paths") {
  std::mt19937_64 rng(5);
  const auto v = testing::random_volume({3, 4, 5}, rng);
  write_volume(scratch("v.vol"), v);
  CHECK(read_volume(scratch("v.vol")) == v);

  FlowField f({2, 3, 2});
  for (auto& x : f.values()) x = std::uniform_real_distribution<float>(-1, 1)(rng);
  write_flow(scratch("f.vol"), f);
  CHECK(read_flow(scratch("f.vol")) == f);
  CHECK_THROWS_AS(read_volume(scratch("f.vol")), FormatError);

  CHECK_THROWS_AS(read_volume(scratch("missing.vol")), IoError);
  {
    std::ofstream out(scratch("bad.vol"), std::ios::binary);
    out << "VOLF3D v2 1 1 1 1\n0000";
  }
  CHECK_THROWS_AS(read_volume(scratch("bad.vol")), FormatError);
  {
    std::ofstream out(scratch("short.vol"), std::ios::binary);
    out << "VOLF3D v1 2 2 2 1\n0000";
  }
  CHECK_THROWS_AS(read_volume(scratch("short.vol")), FormatError);
  {
    std::ofstream out(scratch("magic.vol"), std::ios::binary);
    out << "NOTVOL v1 1 1 1 1\n0000";
  }
  CHECK_THROWS_AS(read_volume(scratch("magic.vol")), FormatError);
}

TEST_CASE("tensor packing keeps channel-major layout") {
  FlowField f({2, 1, 1});
  f.at(0, 1, 0, 0) = 1.0f;
  f.at(2, 0, 0, 0) = 7.0f;
  const auto t = to_tensor(f);
  CHECK(t.shape() == Shape{1, 3, 1, 1, 2});
  CHECK(t.at(1) == 1.0f);
  CHECK(t.at(4) == 7.0f);
  CHECK(flow_from_tensor(t) == f);
  CHECK_THROWS_AS(volume_from_tensor(t), DimensionError);
}
