#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "flowgen/checkpoint.hpp"
#include "flowgen/config.hpp"
#include "flowgen/cvae.hpp"
#include "flowgen/fpn.hpp"
#include "flowgen/phantom.hpp"

namespace flowgen {

/// Builds a frozen extractor with the given layout and copies its weights
/// out of `ckpt`.
FpnExtractor<float> restore_fpn(const Checkpoint& ckpt, const FpnConfig& config);

/// A trained generator rebuilt from a checkpoint and its config echo.
struct LoadedModel {
  RunConfig config;
  FpnExtractor<float> fpn;
  CvaeModel<float> model;
};

LoadedModel load_model(const Checkpoint& ckpt);
LoadedModel load_model(const std::filesystem::path& checkpoint_path);

/// Latent draw i for `seed`: standard normal with seed derive_seed(seed, i).
Tensor latent_draw(const CvaeModel<float>& model, const Volume& condition, std::uint64_t seed, int index);

/// Reads a latent grid stored as a VOLF3D file with latent_channels channels.
Tensor read_latent(const std::filesystem::path& path);
void write_latent(const std::filesystem::path& path, const Tensor& z);

/// Decodes `z` against the condition and warps it: (es = condition,
/// ed = warp(condition, flow), flow).
AnnotatedSample synthesize(const CvaeModel<float>& model, const FpnExtractor<float>& fpn, const Volume& condition,
                           const Tensor& z);

/// `count` prior draws, or one sample per entry of `fixed_z` when it is
/// non-empty.
std::vector<AnnotatedSample> generate(const CvaeModel<float>& model, const FpnExtractor<float>& fpn,
                                      const Volume& condition, int count, std::uint64_t seed,
                                      const std::vector<Tensor>& fixed_z = {});

/// File-level request used by the command line.
struct GenerationRequest {
  std::filesystem::path condition;
  std::filesystem::path checkpoint;
  int count = 1;
  std::uint64_t seed = 1;
  std::filesystem::path output_dir;
  std::vector<std::filesystem::path> fixed_z;
};

/// Runs a request and writes `gen_%04d_{es,ed,flow}.vol` plus a manifest.
/// Returns the manifest path.
std::filesystem::path run_generation(const GenerationRequest& request);

enum class TrajectoryMode { line, plane };

struct LatentTrajectory {
  Tensor z_a;
  Tensor z_b;
  /// Third anchor, used only in plane mode.
  Tensor z_c;
  int steps = 2;
  TrajectoryMode mode = TrajectoryMode::line;

  void validate() const;
  /// Line: steps points at t_i = i / (steps - 1). Plane: steps x steps points
  /// z = (1 - u - v) z_a + u z_b + v z_c, row-major with v over rows.
  std::vector<Tensor> points() const;
  int rows() const { return mode == TrajectoryMode::line ? 1 : steps; }
};

struct InterpolationResult {
  std::vector<AnnotatedSample> samples;
  /// mEPE between consecutive decodings within each row, in row order.
  std::vector<double> step_mepe;
  /// mEPE between the decodings of the first and last point of the first row.
  double endpoint_mepe = 0.0;
};

InterpolationResult interpolate(const CvaeModel<float>& model, const FpnExtractor<float>& fpn,
                                const Volume& condition, const LatentTrajectory& trajectory);

enum class SliceAxis { x, y, z };

SliceAxis parse_axis(std::string_view text);

/// 8-bit slice plus the value range that maps onto it.
struct SliceImage {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;
  double min = 0.0;
  double max = 0.0;
  /// True for signed flow images, where 128 encodes zero and the range is
  /// symmetric.
  bool is_signed = false;

  /// Value represented by pixel byte `p`.
  double decode(std::uint8_t p) const;
};

/// Axis z gives an x-by-y image, axis y x-by-z, axis x y-by-z. Volumes are
/// min-max normalised.
SliceImage slice_image(const Volume& volume, SliceAxis axis, int index);
/// Components (dx, dy, dz) go to the RGB channels with one symmetric scale
/// max|v|, so zero maps to 128.
SliceImage slice_image(const FlowField& flow, SliceAxis axis, int index);

/// Writes binary PGM (one channel) or PPM (three) and a `<path>.txt` sidecar
/// with the normalisation.
void write_slice(const std::filesystem::path& path, const SliceImage& image);
SliceImage read_slice(const std::filesystem::path& path);

}  // namespace flowgen
