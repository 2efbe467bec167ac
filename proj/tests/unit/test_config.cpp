#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "flowgen/config.hpp"
#include "flowgen/errors.hpp"

using namespace flowgen;

TEST_CASE("defaults validate and echo") {
  RunConfig c;
  c.sync();
  CHECK_NOTHROW(c.validate());
  const auto text = c.to_text();
  CHECK(text.find("seed = 1\n") != std::string::npos);
  CHECK(text.find("phantom.alpha = 0.27\n") != std::string::npos);
  CHECK(text.find("fpn.channels = 16,32,32,64,64\n") != std::string::npos);
  CHECK(text.find("train.lambda_recon = 0.95\n") != std::string::npos);
}

TEST_CASE("parsing applies assignments over a base") {
  const auto c = parse_config(
      "# comment\n"
      "seed = 7   # trailing\n"
      "\n"
      "  phantom.center = 15,16,17.5\n"
      "fpn.channels=4,8\n"
      "train.augment = false\n"
      "train.learning_rate = 2.5e-4\n",
      "inline");
  CHECK(c.seed == 7);
  CHECK(c.phantom.center[2] == 17.5);
  CHECK(c.fpn.channels == std::vector<int>{4, 8});
  CHECK_FALSE(c.train.augment);
  CHECK(c.train.learning_rate == 2.5e-4);

  RunConfig synced = c;
  synced.sync();
  CHECK(synced.model.fpn_channels == std::vector<int>{4, 8});
  CHECK(synced.train.seed == 7);
  CHECK(synced.pretrain.seed == 7);

  RunConfig base;
  base.dataset_size = 10;
  CHECK(parse_config("seed = 2\n", "x", base).dataset_size == 10);
}

TEST_CASE("parse errors carry origin and line") {
  auto message = [](const std::string& text) -> std::string {
    try {
      parse_config(text, "cfg");
    } catch (const ValidationError& e) {
      return e.what();
    }
    return "";
  };
  CHECK(message("seed = 1\nbogus.key = 3\n").find("cfg:2") != std::string::npos);
  CHECK(message("seed 1\n").find("cfg:1") != std::string::npos);
  CHECK(message("\n\ntrain.epochs = many\n").find("cfg:3") != std::string::npos);
  CHECK(message("train.augment = maybe\n").find("cfg:1") != std::string::npos);
  CHECK(message("phantom.center = 1,2\n").find("cfg:1") != std::string::npos);
  CHECK(message("train.epochs = 3x\n") != "");
  CHECK(message("seed = -1\n") != "");

  RunConfig c;
  CHECK_THROWS_AS(c.set("nope", "1"), ValidationError);
  c.set("phantom.alpha", "0.5");
  c.sync();
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("echo text parses back to the same configuration") {
  RunConfig c;
  c.seed = 99;
  c.phantom.alpha = 0.1 + 0.2;
  c.train.learning_rate = 1.0 / 3.0;
  c.model.encoder_channels = {3, 5, 7, 9};
  c.train.augmentation.zoom_max = 1.05;
  c.sync();
  const auto text = c.to_text();
  const auto back = parse_config(text, "echo");
  CHECK(back.to_text() == text);
  CHECK(back.phantom.alpha == c.phantom.alpha);
  CHECK(back.train.learning_rate == c.train.learning_rate);
  CHECK(back.model.encoder_channels == c.model.encoder_channels);
}

TEST_CASE("config files") {
  const auto dir = std::filesystem::temp_directory_path() / "flowgen_unit_config";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "a.cfg");
    out << "dataset.size = 12\nloo.max_folds = 0\n";
  }
  const auto c = load_config(dir / "a.cfg");
  CHECK(c.dataset_size == 12);
  CHECK(c.loo_max_folds == 0);
  CHECK_THROWS_AS(load_config(dir / "missing.cfg"), IoError);
}
