#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "flowgen/optim.hpp"
#include "flowgen/tensor.hpp"

namespace flowgen {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// On-disk layout, all integers little-endian:
///   "CVC1" | u32 version | u32 count | count x tensor
///   | u32 count | count x (name, m tensor payload, v tensor payload) | u64 adam step
///   | u32 len + rng state text | u64 epoch | u32 len + config text
/// where a tensor is u32 name length, UTF-8 name, u32 rank, rank x u32
/// extents and the float32 payload.
struct Checkpoint {
  std::vector<StoredTensor> tensors;
  std::vector<AdamMoments> moments;
  std::uint64_t adam_step = 0;
  std::string rng_state;
  std::uint64_t epoch = 0;
  std::string config;

  const StoredTensor* find(const std::string& name) const;
};

/// Writes through a temporary file and a rename, so an existing checkpoint
/// is never left half-written.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<StoredTensor> snapshot(const ParameterList<float>& params);

/// Copies stored values into every listed parameter. Throws FormatError when
/// a name is missing or a shape differs.
void restore_parameters(const std::vector<StoredTensor>& stored, ParameterList<float>& params);

}  // namespace flowgen
