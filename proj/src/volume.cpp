#include "flowgen/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "flowgen/errors.hpp"

namespace flowgen {

namespace {

void check_extent(const Extent3& e) {
  if (e.x <= 0 || e.y <= 0 || e.z <= 0) throw DimensionError("extents must be positive, got " + to_string(e));
}

bool finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float f) { return std::isfinite(f); });
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

}  // namespace

std::string to_string(const Extent3& e) {
  return std::to_string(e.x) + "x" + std::to_string(e.y) + "x" + std::to_string(e.z);
}

Volume::Volume(Extent3 extent, float fill) : extent_(extent) {
  check_extent(extent);
  values_.assign(static_cast<std::size_t>(extent.voxels()), fill);
}

Volume::Volume(Extent3 extent, std::vector<float> values) : extent_(extent), values_(std::move(values)) {
  check_extent(extent);
  if (static_cast<std::int64_t>(values_.size()) != extent.voxels()) {
    throw DimensionError("volume of extent " + to_string(extent) + " needs " + std::to_string(extent.voxels()) +
                         " values, got " + std::to_string(values_.size()));
  }
}

bool Volume::all_finite() const { return finite(values_); }

FlowField::FlowField(Extent3 extent) : extent_(extent) {
  check_extent(extent);
  values_.assign(static_cast<std::size_t>(3 * extent.voxels()), 0.0f);
}

FlowField::FlowField(Extent3 extent, std::vector<float> values) : extent_(extent), values_(std::move(values)) {
  check_extent(extent);
  if (static_cast<std::int64_t>(values_.size()) != 3 * extent.voxels()) {
    throw DimensionError("flow of extent " + to_string(extent) + " needs " + std::to_string(3 * extent.voxels()) +
                         " values, got " + std::to_string(values_.size()));
  }
}

std::span<const float> FlowField::component(int c) const {
  const auto n = static_cast<std::size_t>(extent_.voxels());
  return std::span<const float>(values_).subspan(static_cast<std::size_t>(c) * n, n);
}

std::span<float> FlowField::component(int c) {
  const auto n = static_cast<std::size_t>(extent_.voxels());
  return std::span<float>(values_).subspan(static_cast<std::size_t>(c) * n, n);
}

bool FlowField::all_finite() const { return finite(values_); }

Tensor to_tensor(std::span<const Volume* const> volumes) {
  if (volumes.empty()) throw ContractError("to_tensor needs at least one volume");
  const Extent3 e = volumes.front()->extent();
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(e.voxels()) * volumes.size());
  for (const auto* v : volumes) {
    if (!(v->extent() == e)) {
      throw DimensionError("cannot batch volumes of extents " + to_string(e) + " and " + to_string(v->extent()));
    }
    data.insert(data.end(), v->values().begin(), v->values().end());
  }
  return Tensor::from_data({static_cast<int>(volumes.size()), 1, e.z, e.y, e.x}, std::move(data));
}

Tensor to_tensor(const Volume& volume) {
  const Volume* p = &volume;
  return to_tensor(std::span<const Volume* const>(&p, 1));
}

Tensor to_tensor(std::span<const FlowField* const> flows) {
  if (flows.empty()) throw ContractError("to_tensor needs at least one flow");
  const Extent3 e = flows.front()->extent();
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(3 * e.voxels()) * flows.size());
  for (const auto* f : flows) {
    if (!(f->extent() == e)) {
      throw DimensionError("cannot batch flows of extents " + to_string(e) + " and " + to_string(f->extent()));
    }
    data.insert(data.end(), f->values().begin(), f->values().end());
  }
  return Tensor::from_data({static_cast<int>(flows.size()), 3, e.z, e.y, e.x}, std::move(data));
}

Tensor to_tensor(const FlowField& flow) {
  const FlowField* p = &flow;
  return to_tensor(std::span<const FlowField* const>(&p, 1));
}

Volume volume_from_tensor(const Tensor& t, int batch_index) {
  if (t.rank() != 5 || t.dim(1) != 1) {
    throw DimensionError("expected a [B, 1, z, y, x] tensor, got " + shape_to_string(t.shape()));
  }
  const Extent3 e{t.dim(4), t.dim(3), t.dim(2)};
  const auto n = static_cast<std::size_t>(e.voxels());
  auto d = t.data().subspan(static_cast<std::size_t>(batch_index) * n, n);
  return Volume(e, std::vector<float>(d.begin(), d.end()));
}

FlowField flow_from_tensor(const Tensor& t, int batch_index) {
  if (t.rank() != 5 || t.dim(1) != 3) {
    throw DimensionError("expected a [B, 3, z, y, x] tensor, got " + shape_to_string(t.shape()));
  }
  const Extent3 e{t.dim(4), t.dim(3), t.dim(2)};
  const auto n = static_cast<std::size_t>(3 * e.voxels());
  auto d = t.data().subspan(static_cast<std::size_t>(batch_index) * n, n);
  return FlowField(e, std::vector<float>(d.begin(), d.end()));
}

void write_grid(const std::filesystem::path& path, const GridFile& grid) {
  check_extent(grid.extent);
  if (grid.channels <= 0 ||
      static_cast<std::int64_t>(grid.values.size()) != grid.channels * grid.extent.voxels()) {
    throw DimensionError("grid payload does not match " + to_string(grid.extent) + " x " +
                         std::to_string(grid.channels) + " channels");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "VOLF3D v1 " << grid.extent.x << ' ' << grid.extent.y << ' ' << grid.extent.z << ' ' << grid.channels
      << '\n';
  std::vector<std::uint32_t> words(grid.values.size());
  for (std::size_t i = 0; i < words.size(); ++i) words[i] = to_le(std::bit_cast<std::uint32_t>(grid.values[i]));
  out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
  if (!out) throw IoError("failed writing " + path.string());
}

GridFile read_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw FormatError(path.string() + ": missing header line");
  std::istringstream hs(header);
  std::string magic, version;
  GridFile grid;
  hs >> magic >> version >> grid.extent.x >> grid.extent.y >> grid.extent.z >> grid.channels;
  if (!hs || magic != "VOLF3D") throw FormatError(path.string() + ": not a VOLF3D file");
  if (version != "v1") throw FormatError(path.string() + ": unsupported VOLF3D version " + version);
  std::string trailing;
  if (hs >> trailing) throw FormatError(path.string() + ": unexpected header content '" + trailing + "'");
  if (grid.extent.x <= 0 || grid.extent.y <= 0 || grid.extent.z <= 0 || grid.channels <= 0) {
    throw FormatError(path.string() + ": non-positive extents in header");
  }
  const auto count = static_cast<std::size_t>(grid.channels * grid.extent.voxels());
  std::vector<std::uint32_t> words(count);
  in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(count * 4));
  if (static_cast<std::size_t>(in.gcount()) != count * 4) throw FormatError(path.string() + ": truncated payload");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes after payload");
  grid.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) grid.values[i] = std::bit_cast<float>(to_le(words[i]));
  return grid;
}

void write_volume(const std::filesystem::path& path, const Volume& v) {
  write_grid(path, {v.extent(), 1, std::vector<float>(v.values().begin(), v.values().end())});
}

void write_flow(const std::filesystem::path& path, const FlowField& f) {
  write_grid(path, {f.extent(), 3, std::vector<float>(f.values().begin(), f.values().end())});
}

Volume read_volume(const std::filesystem::path& path) {
  GridFile g = read_grid(path);
  if (g.channels != 1) {
    throw FormatError(path.string() + ": expected 1 channel, found " + std::to_string(g.channels));
  }
  return Volume(g.extent, std::move(g.values));
}

FlowField read_flow(const std::filesystem::path& path) {
  GridFile g = read_grid(path);
  if (g.channels != 3) {
    throw FormatError(path.string() + ": expected 3 channels, found " + std::to_string(g.channels));
  }
  return FlowField(g.extent, std::move(g.values));
}

}  // namespace flowgen
