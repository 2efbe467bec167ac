#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "flowgen/cvae.hpp"
#include "flowgen/fpn.hpp"
#include "flowgen/fpn_pretrain.hpp"
#include "flowgen/phantom.hpp"
#include "flowgen/train.hpp"

namespace flowgen {

/// Every tunable of the pipeline, settable through `section.key = value`
/// lines. The global `seed` feeds every stage; `threads` sets the OpenMP
/// worker count.
struct RunConfig {
  std::uint64_t seed = 1;
  int threads = 1;
  int dataset_size = 72;
  int loo_max_folds = 4;
  PhantomSpec phantom;
  JitterRanges jitter;
  FpnConfig fpn;
  ModelConfig model;
  PretrainConfig pretrain;
  TrainConfig train;

  /// Copies the shared values (seed, pyramid widths) into the stage configs.
  void sync();
  void validate() const;

  /// Applies one assignment; throws ValidationError for unknown keys or
  /// unparsable values.
  void set(std::string_view key, std::string_view value);

  /// Every key with its current value, one `key = value` per line.
  std::string to_text() const;
};

/// Parses `key = value` lines (`#` starts a comment) on top of `base`.
RunConfig parse_config(std::string_view text, const std::string& origin, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// Seed of the extractor initialisation for a run seed.
std::uint64_t fpn_seed(std::uint64_t run_seed);

}  // namespace flowgen
