#include "flowgen/generate.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "flowgen/errors.hpp"
#include "flowgen/random.hpp"
#include "flowgen/train.hpp"
#include "flowgen/warp.hpp"

namespace flowgen {

FpnExtractor<float> restore_fpn(const Checkpoint& ckpt, const FpnConfig& config) {
  FpnExtractor<float> fpn(config, 0);
  auto params = fpn.parameters();
  restore_parameters(ckpt.tensors, params);
  fpn.freeze();
  return fpn;
}

LoadedModel load_model(const Checkpoint& ckpt) {
  RunConfig config = parse_config(ckpt.config, "checkpoint config");
  config.validate();
  FpnExtractor<float> fpn = restore_fpn(ckpt, config.fpn);
  CvaeModel<float> model(config.model, 0);
  auto params = model.parameters();
  restore_parameters(ckpt.tensors, params);
  set_trainable(params, false);
  return {std::move(config), std::move(fpn), std::move(model)};
}

LoadedModel load_model(const std::filesystem::path& checkpoint_path) {
  return load_model(load_checkpoint(checkpoint_path));
}

Tensor latent_draw(const CvaeModel<float>& model, const Volume& condition, std::uint64_t seed, int index) {
  const Tensor frame = to_tensor(condition);
  return standard_normal<float>(model.latent_shape(frame.shape()), derive_seed(seed, static_cast<std::uint64_t>(index)));
}

Tensor read_latent(const std::filesystem::path& path) {
  GridFile grid = read_grid(path);
  return Tensor::from_data({1, grid.channels, grid.extent.z, grid.extent.y, grid.extent.x}, std::move(grid.values));
}

void write_latent(const std::filesystem::path& path, const Tensor& z) {
  if (z.rank() != 5 || z.dim(0) != 1) throw DimensionError("latent " + shape_to_string(z.shape()) + " is not [1, C, z, y, x]");
  GridFile grid;
  grid.extent = {z.dim(4), z.dim(3), z.dim(2)};
  grid.channels = z.dim(1);
  grid.values.assign(z.data().begin(), z.data().end());
  write_grid(path, grid);
}

namespace {

AnnotatedSample decode_with(const CvaeModel<float>& model, const Conditioning<float>& cond, const Volume& condition,
                            const Tensor& z) {
  const Shape expected = model.latent_shape(cond.frame.shape());
  if (z.shape() != expected) {
    throw DimensionError("latent " + shape_to_string(z.shape()) + " does not match the expected " +
                         shape_to_string(expected));
  }
  AnnotatedSample out;
  out.flow = flow_from_tensor(model.decode(z, cond));
  if (!out.flow.all_finite()) throw NumericError("decoded flow contains non-finite values");
  out.es = condition;
  out.ed = warp(condition, out.flow);
  return out;
}

}  // namespace

AnnotatedSample synthesize(const CvaeModel<float>& model, const FpnExtractor<float>& fpn, const Volume& condition,
                           const Tensor& z) {
  NoGradGuard no_grad;
  const Conditioning<float> cond = fpn.condition(to_tensor(condition));
  AnnotatedSample out = decode_with(model, cond, condition, z);
  out.source = "generated";
  return out;
}

std::vector<AnnotatedSample> generate(const CvaeModel<float>& model, const FpnExtractor<float>& fpn,
                                      const Volume& condition, int count, std::uint64_t seed,
                                      const std::vector<Tensor>& fixed_z) {
  if (fixed_z.empty() && count < 1) throw ValidationError("sample count must be at least 1");
  NoGradGuard no_grad;
  const Conditioning<float> cond = fpn.condition(to_tensor(condition));
  std::vector<AnnotatedSample> out;
  if (!fixed_z.empty()) {
    for (std::size_t i = 0; i < fixed_z.size(); ++i) {
      out.push_back(decode_with(model, cond, condition, fixed_z[i]));
      out.back().source = "generated:fixed_z:" + std::to_string(i);
    }
    return out;
  }
  const Shape shape = model.latent_shape(cond.frame.shape());
  for (int i = 0; i < count; ++i) {
    const Tensor z = standard_normal<float>(shape, derive_seed(seed, static_cast<std::uint64_t>(i)));
    out.push_back(decode_with(model, cond, condition, z));
    out.back().source = "generated:seed=" + std::to_string(seed) + ":index=" + std::to_string(i);
  }
  return out;
}

std::filesystem::path run_generation(const GenerationRequest& request) {
  const LoadedModel loaded = load_model(request.checkpoint);
  const Volume condition = read_volume(request.condition);
  std::vector<Tensor> fixed;
  for (const auto& p : request.fixed_z) fixed.push_back(read_latent(p));
  const auto samples = generate(loaded.model, loaded.fpn, condition, request.count, request.seed, fixed);

  std::error_code ec;
  std::filesystem::create_directories(request.output_dir, ec);
  if (ec) throw IoError("cannot create " + request.output_dir.string() + ": " + ec.message());
  const auto manifest = request.output_dir / "manifest.tsv";
  std::ofstream out(manifest);
  if (!out) throw IoError("cannot write " + manifest.string());
  out << "# es\ted\tflow\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "gen_%04zu", i);
    const std::string s = stem;
    write_volume(request.output_dir / (s + "_es.vol"), samples[i].es);
    write_volume(request.output_dir / (s + "_ed.vol"), samples[i].ed);
    write_flow(request.output_dir / (s + "_flow.vol"), samples[i].flow);
    out << s << "_es.vol\t" << s << "_ed.vol\t" << s << "_flow.vol\n";
  }
  if (!out) throw IoError("failed writing " + manifest.string());
  return manifest;
}

void LatentTrajectory::validate() const {
  if (steps < 2) throw ValidationError("trajectory needs at least 2 steps, got " + std::to_string(steps));
  if (!z_a.defined() || !z_b.defined()) throw ValidationError("trajectory endpoints are missing");
  if (z_a.shape() != z_b.shape()) {
    throw DimensionError("trajectory endpoints differ in shape: " + shape_to_string(z_a.shape()) + " vs " +
                         shape_to_string(z_b.shape()));
  }
  if (mode == TrajectoryMode::plane) {
    if (!z_c.defined()) throw ValidationError("plane trajectory needs a third anchor");
    if (z_c.shape() != z_a.shape()) {
      throw DimensionError("third anchor " + shape_to_string(z_c.shape()) + " differs from " +
                           shape_to_string(z_a.shape()));
    }
  }
}

std::vector<Tensor> LatentTrajectory::points() const {
  validate();
  const auto a = z_a.data();
  const auto b = z_b.data();
  const auto n = a.size();
  const double last = static_cast<double>(steps - 1);
  std::vector<Tensor> out;
  for (int r = 0; r < rows(); ++r) {
    const double v = mode == TrajectoryMode::line ? 0.0 : static_cast<double>(r) / last;
    for (int i = 0; i < steps; ++i) {
      const double u = static_cast<double>(i) / last;
      std::vector<float> values(n);
      for (std::size_t e = 0; e < n; ++e) {
        double x = (1.0 - u - v) * a[e] + u * b[e];
        if (mode == TrajectoryMode::plane) x += v * z_c.data()[e];
        values[e] = static_cast<float>(x);
      }
      out.push_back(Tensor::from_data(z_a.shape(), std::move(values)));
    }
  }
  return out;
}

InterpolationResult interpolate(const CvaeModel<float>& model, const FpnExtractor<float>& fpn,
                                const Volume& condition, const LatentTrajectory& trajectory) {
  const auto points = trajectory.points();
  InterpolationResult result;
  result.samples = generate(model, fpn, condition, 0, 0, points);
  for (std::size_t i = 0; i < result.samples.size(); ++i) {
    result.samples[i].source = "interpolated:" + std::to_string(i);
  }
  const auto steps = static_cast<std::size_t>(trajectory.steps);
  for (int r = 0; r < trajectory.rows(); ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * steps;
    for (std::size_t i = 0; i + 1 < steps; ++i) {
      result.step_mepe.push_back(mepe(result.samples[base + i + 1].flow, result.samples[base + i].flow).mean);
    }
  }
  result.endpoint_mepe = mepe(result.samples[steps - 1].flow, result.samples[0].flow).mean;
  return result;
}

SliceAxis parse_axis(std::string_view text) {
  if (text == "x") return SliceAxis::x;
  if (text == "y") return SliceAxis::y;
  if (text == "z") return SliceAxis::z;
  throw ValidationError("slice axis must be x, y or z, got '" + std::string(text) + "'");
}

double SliceImage::decode(std::uint8_t p) const {
  if (is_signed) return (static_cast<double>(p) - 128.0) / 127.0 * max;
  return max > min ? min + (max - min) * static_cast<double>(p) / 255.0 : min;
}

namespace {

struct SliceGeometry {
  int width = 0;
  int height = 0;
};

SliceGeometry geometry(const Extent3& e, SliceAxis axis, int index) {
  const int limit = axis == SliceAxis::x ? e.x : axis == SliceAxis::y ? e.y : e.z;
  if (index < 0 || index >= limit) {
    throw ValidationError("slice index " + std::to_string(index) + " outside [0, " + std::to_string(limit) + ")");
  }
  switch (axis) {
    case SliceAxis::x: return {e.y, e.z};
    case SliceAxis::y: return {e.x, e.z};
    case SliceAxis::z: return {e.x, e.y};
  }
  return {};
}

// Voxel (i, j, k) shown at pixel (col, row) of the slice.
std::array<int, 3> voxel(SliceAxis axis, int index, int col, int row) {
  switch (axis) {
    case SliceAxis::x: return {index, col, row};
    case SliceAxis::y: return {col, index, row};
    case SliceAxis::z: return {col, row, index};
  }
  return {};
}

}  // namespace

SliceImage slice_image(const Volume& volume, SliceAxis axis, int index) {
  const auto g = geometry(volume.extent(), axis, index);
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(g.width) * g.height);
  for (int row = 0; row < g.height; ++row) {
    for (int col = 0; col < g.width; ++col) {
      const auto [i, j, k] = voxel(axis, index, col, row);
      values.push_back(volume.at(i, j, k));
    }
  }
  SliceImage img;
  img.width = g.width;
  img.height = g.height;
  img.channels = 1;
  img.min = *std::min_element(values.begin(), values.end());
  img.max = *std::max_element(values.begin(), values.end());
  const double range = img.max - img.min;
  for (double v : values) {
    const double t = range > 0.0 ? (v - img.min) / range : 0.0;
    img.pixels.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0)));
  }
  return img;
}

SliceImage slice_image(const FlowField& flow, SliceAxis axis, int index) {
  const auto g = geometry(flow.extent(), axis, index);
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(g.width) * g.height * 3);
  double scale = 0.0;
  for (int row = 0; row < g.height; ++row) {
    for (int col = 0; col < g.width; ++col) {
      const auto [i, j, k] = voxel(axis, index, col, row);
      for (int c = 0; c < 3; ++c) {
        values.push_back(flow.at(c, i, j, k));
        scale = std::max(scale, std::abs(values.back()));
      }
    }
  }
  SliceImage img;
  img.width = g.width;
  img.height = g.height;
  img.channels = 3;
  img.is_signed = true;
  img.min = -scale;
  img.max = scale;
  for (double v : values) {
    const double t = scale > 0.0 ? v / scale : 0.0;
    img.pixels.push_back(static_cast<std::uint8_t>(128 + std::lround(std::clamp(t, -1.0, 1.0) * 127.0)));
  }
  return img;
}

void write_slice(const std::filesystem::path& path, const SliceImage& image) {
  if (image.channels != 1 && image.channels != 3) throw ValidationError("slice images have 1 or 3 channels");
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * image.channels) {
    throw DimensionError("slice pixel count does not match its size");
  }
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << (image.channels == 1 ? "P5" : "P6") << '\n' << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError("failed writing " + path.string());

  const auto sidecar = path.string() + ".txt";
  std::ofstream side(sidecar);
  if (!side) throw IoError("cannot write " + sidecar);
  char buf[128];
  std::snprintf(buf, sizeof buf, "min %.9g max %.9g\n", image.min, image.max);
  side << buf << "mode " << (image.is_signed ? "signed" : "minmax") << '\n';
  if (!side) throw IoError("failed writing " + sidecar);
}

SliceImage read_slice(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  int maxval = 0;
  SliceImage img;
  in >> magic >> img.width >> img.height >> maxval;
  if (!in || (magic != "P5" && magic != "P6") || img.width <= 0 || img.height <= 0 || maxval != 255) {
    throw FormatError(path.string() + ": not an 8-bit binary PGM/PPM");
  }
  in.get();
  img.channels = magic == "P5" ? 1 : 3;
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw FormatError(path.string() + ": truncated");

  const auto sidecar = path.string() + ".txt";
  std::ifstream side(sidecar);
  if (!side) throw IoError("cannot open " + sidecar);
  std::string k1, k2, k3, mode;
  side >> k1 >> img.min >> k2 >> img.max >> k3 >> mode;
  if (!side || k1 != "min" || k2 != "max" || k3 != "mode" || (mode != "signed" && mode != "minmax")) {
    throw FormatError(sidecar + ": malformed normalisation sidecar");
  }
  img.is_signed = mode == "signed";
  return img;
}

}  // namespace flowgen
