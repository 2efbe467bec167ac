#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "flowgen/volume.hpp"

namespace flowgen {

/// Analytic cardiac phantom: an ellipsoidal myocardial shell around a blood
/// pool, elongated along z. All lengths are in voxels; the x/y radii are the
/// given radii and z is stretched by `elongation`.
struct PhantomSpec {
  int extent = 32;
  std::array<double, 3> center{15.5, 15.5, 15.5};  // (x, y, z)
  double inner_radius = 6.0;
  double outer_radius = 9.0;
  /// Width of the band outside the shell over which the motion fades out.
  double feather = 4.5;
  double elongation = 1.05;
  /// Contraction as a fraction of radius, in [0, 0.3].
  double alpha = 0.27;
  /// Extra relative contraction of the blood pool compared to the outer wall.
  double thickening = 1.0;
  /// Twist (radians) between the apex and base planes of the shell.
  double twist = 0.4;
  /// Standard deviation of the additive intensity noise.
  double noise_floor = 0.01;
  std::uint64_t seed = 1;

  /// Throws ValidationError when the shell or its motion support leaves the grid.
  void validate() const;
};

/// A frame pair with its exact motion: ed == warp(es, flow).
struct AnnotatedSample {
  Volume es;
  Volume ed;
  FlowField flow;
  /// Set for generated phantoms; external samples carry only `source`.
  std::optional<PhantomSpec> spec;
  std::string source;
};

/// Fraction of radial scaling applied at ellipsoidal radius `rho`.
double contraction_scale(const PhantomSpec& spec, double rho);

/// Closed-form displacement (dx, dy, dz) at voxel coordinate (x, y, z).
std::array<double, 3> phantom_displacement(const PhantomSpec& spec, double x, double y, double z);

AnnotatedSample generate_phantom(const PhantomSpec& spec);

/// Half-widths of the uniform jitter applied around a base spec.
struct JitterRanges {
  double center = 0.5;
  double inner_radius = 0.4;
  double outer_radius = 0.3;
  double alpha = 0.03;
  double thickening = 0.2;
  double twist = 0.15;
};

/// Phantom parameters of sample `index` in a dataset drawn with `seed`.
PhantomSpec jittered_spec(const PhantomSpec& base, const JitterRanges& jitter, std::uint64_t seed, int index);

std::vector<AnnotatedSample> generate_samples(int n, const PhantomSpec& base, const JitterRanges& jitter,
                                              std::uint64_t seed);

/// Writes n samples as VOLF3D files plus `manifest.tsv` (es, ed, flow per
/// line, tab-separated, relative to the directory). Returns the manifest path.
std::filesystem::path make_dataset(const std::filesystem::path& dir, int n, const PhantomSpec& base,
                                   const JitterRanges& jitter, std::uint64_t seed);

/// Reads every triple listed in a manifest. Works for any externally produced
/// triples in the same file format.
std::vector<AnnotatedSample> load_dataset(const std::filesystem::path& manifest);

struct AugmentConfig {
  double noise_variance = 0.015;
  /// Maximum absolute shift per axis at the reference extent.
  double max_shift = 10.0;
  int reference_extent = 64;
  double zoom_min = 0.9;
  double zoom_max = 1.1;

  /// Shift bound for a grid of the given extent, scaled down proportionally
  /// for grids smaller than the reference.
  int max_shift_for(int extent) const;
  void validate() const;
};

/// One draw of augmentation parameters.
struct AugmentParams {
  std::array<int, 3> shift{0, 0, 0};  // (x, y, z)
  double zoom = 1.0;
  double noise_std = 0.0;
  std::uint64_t noise_seed = 0;
};

AugmentParams sample_augment(const AugmentConfig& cfg, const Extent3& extent, std::uint64_t seed);

/// Applies one similarity transform x' = c + zoom * (x - c) + shift to all
/// three members (flow vectors scaled by zoom), adds noise to es and rebuilds
/// ed = warp(es, flow) so the annotation stays exact.
AnnotatedSample apply_augment(const AnnotatedSample& sample, const AugmentParams& params);

AnnotatedSample augment(const AnnotatedSample& sample, const AugmentConfig& cfg, std::uint64_t seed);

}  // namespace flowgen
