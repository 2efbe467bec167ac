#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "flowgen/checkpoint.hpp"
#include "flowgen/errors.hpp"

using namespace flowgen;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "flowgen_unit_ckpt";
  fs::create_directories(dir);
  return dir / name;
}

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.tensors.push_back({"enc.0.weight", {2, 1, 3}, {1, 2, 3, 4, 5, -6.5f}});
  c.tensors.push_back({"bias", {1}, {0.25f}});
  c.moments.push_back({"bias", {1}, {0.5f}, {0.125f}});
  c.adam_step = 1234567890123ull;
  c.rng_state = "42 17 99";
  c.epoch = 12;
  c.config = "seed = 3\ntrain.epochs = 12\n";
  return c;
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST_CASE("checkpoint round trip") {
  const auto path = scratch("ok.ckpt");
  const auto c = sample_checkpoint();
  save_checkpoint(path, c);
  const auto r = load_checkpoint(path);
  REQUIRE(r.tensors.size() == 2);
  CHECK(r.tensors[0].name == "enc.0.weight");
  CHECK(r.tensors[0].shape == Shape{2, 1, 3});
  CHECK(r.tensors[0].values == c.tensors[0].values);
  REQUIRE(r.moments.size() == 1);
  CHECK(r.moments[0].m == c.moments[0].m);
  CHECK(r.moments[0].v == c.moments[0].v);
  CHECK(r.adam_step == c.adam_step);
  CHECK(r.rng_state == c.rng_state);
  CHECK(r.epoch == 12);
  CHECK(r.config == c.config);
  CHECK(r.find("bias") != nullptr);
  CHECK(r.find("nope") == nullptr);
  CHECK_FALSE(fs::exists(path.string() + ".tmp"));

  const auto bytes = read_bytes(path);
  REQUIRE(bytes.size() > 8);
  CHECK(std::memcmp(bytes.data(), "CVC1", 4) == 0);
  CHECK(bytes[4] == 1);
}

TEST_CASE("checkpoint corruption is reported") {
  const auto path = scratch("base.ckpt");
  save_checkpoint(path, sample_checkpoint());
  const auto good = read_bytes(path);
  const auto bad = scratch("bad.ckpt");

  auto b = good;
  b[0] = 'X';
  write_bytes(bad, b);
  CHECK_THROWS_AS(load_checkpoint(bad), FormatError);

  b = good;
  b[4] = 2;
  write_bytes(bad, b);
  CHECK_THROWS_AS(load_checkpoint(bad), FormatError);

  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, good.size() / 2, good.size() - 1}) {
    write_bytes(bad, std::vector<char>(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut)));
    CHECK_THROWS_AS(load_checkpoint(bad), FormatError);
  }

  b = good;
  b.push_back('\0');
  write_bytes(bad, b);
  CHECK_THROWS_AS(load_checkpoint(bad), FormatError);

  CHECK_THROWS_AS(load_checkpoint(scratch("absent.ckpt")), IoError);
}

TEST_CASE("parameters restore by name and shape") {
  ParameterList<float> params;
  params.push_back({"bias", Tensor::zeros({1}, true)});
  params.push_back({"enc.0.weight", Tensor::zeros({2, 1, 3}, true)});
  const auto c = sample_checkpoint();
  restore_parameters(c.tensors, params);
  CHECK(params[0].tensor.data()[0] == 0.25f);
  CHECK(params[1].tensor.data()[5] == -6.5f);
  const auto snap = snapshot(params);
  CHECK(snap[1].values == c.tensors[0].values);

  ParameterList<float> wrong;
  wrong.push_back({"bias", Tensor::zeros({2}, true)});
  CHECK_THROWS_AS(restore_parameters(c.tensors, wrong), FormatError);
  ParameterList<float> missing;
  missing.push_back({"other", Tensor::zeros({1}, true)});
  CHECK_THROWS_AS(restore_parameters(c.tensors, missing), FormatError);
}
