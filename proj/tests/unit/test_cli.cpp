#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "flowgen/checkpoint.hpp"
#include "flowgen/phantom.hpp"
#include "flowgen/warp.hpp"

using namespace flowgen;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "flowgen_unit_cli";

int run(const std::string& args) {
  const std::string cmd = std::string("\"") + FLOWGEN_CLI + "\" " + args + " > \"" + (kRoot / "last.log").string() +
                          "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string p(const std::string& rel) { return "\"" + (kRoot / rel).string() + "\""; }

}  // namespace

TEST_CASE("command line pipeline on a small grid") {
  fs::remove_all(kRoot);
  fs::create_directories(kRoot);
  {
    std::ofstream cfg(kRoot / "tiny.cfg");
    cfg << "dataset.size = 6\n"
           "phantom.extent = 16\n"
           "phantom.center = 7.5,7.5,7.5\n"
           "phantom.inner_radius = 3\n"
           "phantom.outer_radius = 4.5\n"
           "phantom.feather = 2\n"
           "jitter.center = 0.5\n"
           "jitter.inner_radius = 0.3\n"
           "jitter.outer_radius = 0.3\n"
           "fpn.channels = 2,3\n"
           "model.encoder_channels = 2,3\n"
           "model.decoder_channels = 3,2\n"
           "model.latent_channels = 2\n"
           "pretrain.epochs = 1\n"
           "pretrain.batch_size = 2\n"
           "train.epochs = 2\n"
           "train.batch_size = 2\n"
           "train.validation_fraction = 0.2\n"
           "loo.max_folds = 1\n";
  }
  const std::string g = "--config " + p("tiny.cfg") + " ";

  REQUIRE(run(g + "phantom --out " + p("data")) == 0);
  const auto data = load_dataset(kRoot / "data/manifest.tsv");
  CHECK(data.size() == 6);
  CHECK(slurp(kRoot / "data/resolved_config.txt").find("phantom.extent = 16\n") != std::string::npos);

  REQUIRE(run(g + "pretrain-fpn --data " + p("data/manifest.tsv") + " --out " + p("fpn/fpn.ckpt")) == 0);
  REQUIRE(run(g + "train --data " + p("data/manifest.tsv") + " --fpn " + p("fpn/fpn.ckpt") + " --out " + p("run")) ==
          0);
  const auto log = slurp(kRoot / "run/train.log");
  CHECK(log.find("epoch 2 total") != std::string::npos);
  CHECK(load_checkpoint(kRoot / "run/model.ckpt").epoch == 2);

  // Same seed, same log.
  REQUIRE(run(g + "train --data " + p("data/manifest.tsv") + " --fpn " + p("fpn/fpn.ckpt") + " --out " + p("run2")) ==
          0);
  CHECK(slurp(kRoot / "run2/train.log") == log);

  // Resuming the finished run for two more epochs.
  REQUIRE(run(g + "--set train.epochs=4 train --data " + p("data/manifest.tsv") + " --fpn " + p("fpn/fpn.ckpt") +
              " --out " + p("run3") + " --resume " + p("run/model.ckpt")) == 0);
  CHECK(load_checkpoint(kRoot / "run3/model.ckpt").epoch == 4);

  REQUIRE(run(g + "evaluate --checkpoint " + p("run/model.ckpt") + " --data " + p("data/manifest.tsv") + " --out " +
              p("eval")) == 0);
  CHECK(fs::exists(kRoot / "eval/evaluation.tsv"));

  REQUIRE(run(g + "loo --data " + p("data/manifest.tsv") + " --fpn " + p("fpn/fpn.ckpt") + " --out " + p("loo")) == 0);
  CHECK(fs::exists(kRoot / "loo/loo.tsv"));

  const auto cond = (kRoot / "data/sample_0000_es.vol").string();
  REQUIRE(run(g + "generate --checkpoint " + p("run/model.ckpt") + " --condition \"" + cond + "\" --count 3 --out " +
              p("gen")) == 0);
  const auto gen = load_dataset(kRoot / "gen/manifest.tsv");
  REQUIRE(gen.size() == 3);
  for (const auto& s : gen) CHECK(warp_consistency(s.es, s.ed, s.flow) <= 1e-3);

  REQUIRE(run(g + "interpolate --checkpoint " + p("run/model.ckpt") + " --condition \"" + cond +
              "\" --steps 4 --out " + p("interp")) == 0);
  CHECK(fs::exists(kRoot / "interp/interp_0003_flow.vol"));
  CHECK(fs::exists(kRoot / "interp/steps.tsv"));
  REQUIRE(run(g + "interpolate --checkpoint " + p("run/model.ckpt") + " --condition \"" + cond +
              "\" --mode plane --steps 2 --out " + p("plane")) == 0);
  CHECK(fs::exists(kRoot / "plane/interp_0003_flow.vol"));

  // Anchors read back reproduce the anchor decodings.
  REQUIRE(run(g + "generate --checkpoint " + p("run/model.ckpt") + " --condition \"" + cond + "\" --z " +
              p("interp/anchor_a.vol") + " --out " + p("fixed")) == 0);
  CHECK(load_dataset(kRoot / "fixed/manifest.tsv")[0].flow == read_flow(kRoot / "interp/interp_0000_flow.vol"));

  REQUIRE(run("render --input " + p("gen/gen_0000_flow.vol") + " --axis x --out " + p("img/flow.ppm")) == 0);
  CHECK(fs::exists(kRoot / "img/flow.ppm.txt"));
  REQUIRE(run("render --input \"" + cond + "\" --out " + p("img/es.pgm")) == 0);

  // Error mapping.
  CHECK(run("render --input \"" + cond + "\" --index 99 --out " + p("img/bad.pgm")) == 2);
  CHECK(run("--set bogus=1 phantom --out " + p("x")) == 2);
  CHECK(run("phantom") == 2);
  CHECK(run("render --input " + p("absent.vol") + " --out " + p("img/a.pgm")) == 4);
  {
    std::ofstream junk(kRoot / "junk.vol");
    junk << "not a volume";
  }
  CHECK(run("render --input " + p("junk.vol") + " --out " + p("img/j.pgm")) == 4);
  CHECK(run(g + "train --data " + p("data/manifest.tsv") + " --fpn " + p("run/train.log") + " --out " + p("r4")) == 4);
}
