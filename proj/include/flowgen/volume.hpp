#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "flowgen/tensor.hpp"

namespace flowgen {

/// Spatial extents in voxels, ordered (x, y, z). Storage is z-major: the x
/// index varies fastest.
struct Extent3 {
  int x = 0;
  int y = 0;
  int z = 0;

  std::int64_t voxels() const { return static_cast<std::int64_t>(x) * y * z; }
  std::int64_t index(int i, int j, int k) const { return (static_cast<std::int64_t>(k) * y + j) * x + i; }
  bool operator==(const Extent3&) const = default;
};

std::string to_string(const Extent3& e);

/// Scalar intensity grid (a CT frame).
class Volume {
 public:
  Volume() = default;
  explicit Volume(Extent3 extent, float fill = 0.0f);
  Volume(Extent3 extent, std::vector<float> values);

  const Extent3& extent() const { return extent_; }
  std::span<const float> values() const { return values_; }
  std::span<float> values() { return values_; }
  float at(int i, int j, int k) const { return values_[static_cast<std::size_t>(extent_.index(i, j, k))]; }
  float& at(int i, int j, int k) { return values_[static_cast<std::size_t>(extent_.index(i, j, k))]; }

  bool all_finite() const;
  bool operator==(const Volume&) const = default;

 private:
  Extent3 extent_;
  std::vector<float> values_;
};

/// Per-voxel displacement (dx, dy, dz) in voxel units, stored as three
/// channel-major planes.
class FlowField {
 public:
  FlowField() = default;
  explicit FlowField(Extent3 extent);
  FlowField(Extent3 extent, std::vector<float> values);

  const Extent3& extent() const { return extent_; }
  std::span<const float> values() const { return values_; }
  std::span<float> values() { return values_; }
  std::span<const float> component(int c) const;
  std::span<float> component(int c);
  float at(int c, int i, int j, int k) const {
    return values_[static_cast<std::size_t>(c * extent_.voxels() + extent_.index(i, j, k))];
  }
  float& at(int c, int i, int j, int k) {
    return values_[static_cast<std::size_t>(c * extent_.voxels() + extent_.index(i, j, k))];
  }

  bool all_finite() const;
  bool operator==(const FlowField&) const = default;

 private:
  Extent3 extent_;
  std::vector<float> values_;
};

/// Packs one or more volumes into a [B, 1, z, y, x] tensor.
Tensor to_tensor(std::span<const Volume* const> volumes);
Tensor to_tensor(const Volume& volume);
/// Packs one or more flows into a [B, 3, z, y, x] tensor.
Tensor to_tensor(std::span<const FlowField* const> flows);
Tensor to_tensor(const FlowField& flow);

Volume volume_from_tensor(const Tensor& t, int batch_index = 0);
FlowField flow_from_tensor(const Tensor& t, int batch_index = 0);

/// Raw grid as stored on disk: extents, channel count and channel-major data.
struct GridFile {
  Extent3 extent;
  int channels = 0;
  std::vector<float> values;
};

/// Writes `VOLF3D v1 <dx> <dy> <dz> <channels>\n` followed by little-endian
/// float32 payload.
void write_grid(const std::filesystem::path& path, const GridFile& grid);
GridFile read_grid(const std::filesystem::path& path);

void write_volume(const std::filesystem::path& path, const Volume& v);
void write_flow(const std::filesystem::path& path, const FlowField& f);
Volume read_volume(const std::filesystem::path& path);
FlowField read_flow(const std::filesystem::path& path);

}  // namespace flowgen
