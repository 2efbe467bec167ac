#include "flowgen/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "flowgen/errors.hpp"
#include "flowgen/random.hpp"
#include "flowgen/warp.hpp"

namespace flowgen {

namespace {

constexpr double kBackground = 0.15;
constexpr double kMyocardium = 0.6;
constexpr double kBloodPool = 0.9;
constexpr double kTextureAmplitude = 0.05;
constexpr double kEdgeWidth = 0.6;
constexpr int kTextureWaves = 6;

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

double logistic(double t) { return 1.0 / (1.0 + std::exp(-t / kEdgeWidth)); }

double ellipsoidal_radius(const PhantomSpec& s, double dx, double dy, double dz) {
  const double ez = dz / s.elongation;
  return std::sqrt(dx * dx + dy * dy + ez * ez);
}

double uniform_pm(std::mt19937_64& rng, double half_width) {
  const double u = std::generate_canonical<double, 53>(rng);
  return half_width * (2.0 * u - 1.0);
}

struct Wave {
  double kx, ky, kz, phase;
};

std::vector<Wave> texture_waves(std::mt19937_64& rng) {
  std::vector<Wave> waves;
  for (int m = 0; m < kTextureWaves; ++m) {
    // Wavelengths between 6 and 16 voxels in random directions.
    const double wavelength = 6.0 + 10.0 * std::generate_canonical<double, 53>(rng);
    const double cos_theta = 2.0 * std::generate_canonical<double, 53>(rng) - 1.0;
    const double phi = 2.0 * std::numbers::pi * std::generate_canonical<double, 53>(rng);
    const double sin_theta = std::sqrt(1.0 - cos_theta * cos_theta);
    const double k = 2.0 * std::numbers::pi / wavelength;
    const double phase = 2.0 * std::numbers::pi * std::generate_canonical<double, 53>(rng);
    waves.push_back({k * sin_theta * std::cos(phi), k * sin_theta * std::sin(phi), k * cos_theta, phase});
  }
  return waves;
}

std::string sample_name(int index, const char* member) {
  std::ostringstream out;
  out << "sample_";
  out.width(4);
  out.fill('0');
  out << index << '_' << member << ".vol";
  return out.str();
}

}  // namespace

void PhantomSpec::validate() const {
  if (extent < 2) throw ValidationError("phantom extent must be at least 2, got " + std::to_string(extent));
  if (!(inner_radius > 0.0 && inner_radius < outer_radius && outer_radius < extent / 2.0)) {
    throw ValidationError("phantom radii must satisfy 0 < inner (" + std::to_string(inner_radius) + ") < outer (" +
                          std::to_string(outer_radius) + ") < extent/2 (" + std::to_string(extent / 2.0) + ")");
  }
  if (!(alpha >= 0.0 && alpha <= 0.3)) {
    throw ValidationError("contraction amplitude must lie in [0, 0.3], got " + std::to_string(alpha));
  }
  if (!(thickening >= 0.0) || alpha * (1.0 + thickening) >= 1.0) {
    throw ValidationError("wall thickening must be non-negative with alpha * (1 + thickening) < 1");
  }
  if (!(feather > 0.0) || !(elongation > 0.0)) throw ValidationError("feather and elongation must be positive");
  if (!(noise_floor >= 0.0)) throw ValidationError("noise floor must be non-negative");
  if (!std::isfinite(twist)) throw ValidationError("twist must be finite");
  const double support = outer_radius + feather;
  const double reach[3] = {support, support, support * elongation};
  for (int a = 0; a < 3; ++a) {
    if (center[a] - reach[a] < 0.0 || center[a] + reach[a] > extent - 1) {
      throw ValidationError("phantom motion support leaves the grid along axis " + std::string(1, "xyz"[a]) +
                            ": center " + std::to_string(center[a]) + ", reach " + std::to_string(reach[a]));
    }
  }
}

double contraction_scale(const PhantomSpec& s, double rho) {
  const double wall = 1.0 + s.thickening * (1.0 - smoothstep(s.inner_radius, s.outer_radius, rho));
  const double window = 1.0 - smoothstep(s.outer_radius, s.outer_radius + s.feather, rho);
  return s.alpha * wall * window;
}

std::array<double, 3> phantom_displacement(const PhantomSpec& s, double x, double y, double z) {
  const double dx = x - s.center[0];
  const double dy = y - s.center[1];
  const double dz = z - s.center[2];
  const double rho = ellipsoidal_radius(s, dx, dy, dz);
  const double scale = 1.0 - contraction_scale(s, rho);
  const double window = 1.0 - smoothstep(s.outer_radius, s.outer_radius + s.feather, rho);
  const double height = std::clamp(dz / (s.elongation * s.outer_radius), -1.0, 1.0);
  const double angle = 0.5 * s.twist * height * window;
  const double c = std::cos(angle);
  const double sn = std::sin(angle);
  const double px = scale * dx;
  const double py = scale * dy;
  return {c * px - sn * py - dx, sn * px + c * py - dy, scale * dz - dz};
}

AnnotatedSample generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const int n = spec.extent;
  const Extent3 extent{n, n, n};
  std::mt19937_64 rng(spec.seed);
  const auto waves = texture_waves(rng);
  std::normal_distribution<double> noise(0.0, 1.0);

  Volume es(extent);
  FlowField flow(extent);
  for (int k = 0; k < n; ++k) {
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        const double rho =
            ellipsoidal_radius(spec, i - spec.center[0], j - spec.center[1], k - spec.center[2]);
        double texture = 0.0;
        for (const auto& w : waves) texture += std::cos(w.kx * i + w.ky * j + w.kz * k + w.phase);
        texture *= kTextureAmplitude / std::sqrt(static_cast<double>(kTextureWaves));
        double v = kBackground + (kMyocardium - kBackground) * logistic(spec.outer_radius - rho) +
                   (kBloodPool - kMyocardium) * logistic(spec.inner_radius - rho) + texture;
        if (spec.noise_floor > 0.0) v += spec.noise_floor * noise(rng);
        es.at(i, j, k) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        const auto d = phantom_displacement(spec, i, j, k);
        for (int c = 0; c < 3; ++c) flow.at(c, i, j, k) = static_cast<float>(d[static_cast<std::size_t>(c)]);
      }
    }
  }
  AnnotatedSample sample;
  sample.ed = warp(es, flow);
  sample.es = std::move(es);
  sample.flow = std::move(flow);
  sample.spec = spec;
  sample.source = "phantom:" + std::to_string(spec.seed);
  return sample;
}

PhantomSpec jittered_spec(const PhantomSpec& base, const JitterRanges& jitter, std::uint64_t seed, int index) {
  std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(index)));
  PhantomSpec s = base;
  for (auto& c : s.center) c += uniform_pm(rng, jitter.center);
  s.inner_radius += uniform_pm(rng, jitter.inner_radius);
  s.outer_radius += uniform_pm(rng, jitter.outer_radius);
  s.alpha += uniform_pm(rng, jitter.alpha);
  s.thickening += uniform_pm(rng, jitter.thickening);
  s.twist += uniform_pm(rng, jitter.twist);
  s.seed = base.seed + static_cast<std::uint64_t>(index);
  return s;
}

std::vector<AnnotatedSample> generate_samples(int n, const PhantomSpec& base, const JitterRanges& jitter,
                                              std::uint64_t seed) {
  if (n < 1) throw ValidationError("dataset size must be at least 1, got " + std::to_string(n));
  std::vector<PhantomSpec> specs;
  for (int i = 0; i < n; ++i) {
    specs.push_back(jittered_spec(base, jitter, seed, i));
    specs.back().validate();
  }
  std::vector<AnnotatedSample> out(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = generate_phantom(specs[static_cast<std::size_t>(i)]);
  return out;
}

std::filesystem::path make_dataset(const std::filesystem::path& dir, int n, const PhantomSpec& base,
                                   const JitterRanges& jitter, std::uint64_t seed) {
  const auto samples = generate_samples(n, base, jitter, seed);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  const auto manifest = dir / "manifest.tsv";
  std::ofstream out(manifest);
  if (!out) throw IoError("cannot write " + manifest.string());
  out << "# es\ted\tflow\n";
  for (int i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    const std::string es = sample_name(i, "es"), ed = sample_name(i, "ed"), fl = sample_name(i, "flow");
    write_volume(dir / es, s.es);
    write_volume(dir / ed, s.ed);
    write_flow(dir / fl, s.flow);
    out << es << '\t' << ed << '\t' << fl << '\n';
  }
  out.flush();
  if (!out) throw IoError("failed writing " + manifest.string());
  return manifest;
}

std::vector<AnnotatedSample> load_dataset(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest " + manifest.string());
  const auto base = manifest.parent_path();
  std::vector<AnnotatedSample> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::vector<std::string> fields;
    std::istringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 3) {
      throw FormatError(manifest.string() + ":" + std::to_string(line_no) + ": expected 3 tab-separated paths, got " +
                        std::to_string(fields.size()));
    }
    AnnotatedSample s;
    s.es = read_volume(base / fields[0]);
    s.ed = read_volume(base / fields[1]);
    s.flow = read_flow(base / fields[2]);
    if (!(s.es.extent() == s.ed.extent()) || !(s.es.extent() == s.flow.extent())) {
      throw FormatError(manifest.string() + ":" + std::to_string(line_no) + ": member extents differ");
    }
    s.source = (base / fields[0]).string();
    out.push_back(std::move(s));
  }
  if (out.empty()) throw FormatError("manifest " + manifest.string() + " lists no samples");
  return out;
}

int AugmentConfig::max_shift_for(int extent) const {
  const double scale = std::min(1.0, static_cast<double>(extent) / reference_extent);
  return static_cast<int>(std::floor(max_shift * scale + 1e-9));
}

void AugmentConfig::validate() const {
  if (!(noise_variance >= 0.0)) throw ValidationError("noise variance must be non-negative");
  if (!(max_shift >= 0.0) || reference_extent <= 0) throw ValidationError("shift bound must be non-negative");
  if (!(zoom_min > 0.0 && zoom_min <= zoom_max)) {
    throw ValidationError("zoom range must satisfy 0 < min <= max, got [" + std::to_string(zoom_min) + ", " +
                          std::to_string(zoom_max) + "]");
  }
}

AugmentParams sample_augment(const AugmentConfig& cfg, const Extent3& extent, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  AugmentParams p;
  const int dims[3] = {extent.x, extent.y, extent.z};
  for (int a = 0; a < 3; ++a) {
    const int m = cfg.max_shift_for(dims[a]);
    p.shift[static_cast<std::size_t>(a)] = std::uniform_int_distribution<int>(-m, m)(rng);
  }
  p.zoom = cfg.zoom_min + (cfg.zoom_max - cfg.zoom_min) * std::generate_canonical<double, 53>(rng);
  p.noise_std = std::sqrt(cfg.noise_variance);
  p.noise_seed = rng();
  return p;
}

AnnotatedSample apply_augment(const AnnotatedSample& sample, const AugmentParams& p) {
  if (!(p.zoom > 0.0)) throw ValidationError("zoom factor must be positive, got " + std::to_string(p.zoom));
  const Extent3 e = sample.es.extent();
  if (!(sample.ed.extent() == e) || !(sample.flow.extent() == e)) {
    throw DimensionError("augment: sample members have different extents");
  }
  const bool identity = p.shift == std::array<int, 3>{0, 0, 0} && p.zoom == 1.0 && p.noise_std == 0.0;
  if (identity) return sample;

  const int dims[3] = {e.x, e.y, e.z};
  double centre[3];
  for (int a = 0; a < 3; ++a) {
    centre[a] = 0.5 * (dims[a] - 1);
    // Source interval seen by the output grid along this axis.
    const double lo = centre[a] + (0.0 - p.shift[static_cast<std::size_t>(a)] - centre[a]) / p.zoom;
    const double hi = centre[a] + (dims[a] - 1.0 - p.shift[static_cast<std::size_t>(a)] - centre[a]) / p.zoom;
    if (hi < 0.0 || lo > dims[a] - 1.0) {
      throw ValidationError("augmentation moves the content fully out of the frame along axis " +
                            std::string(1, "xyz"[a]));
    }
  }

  // Output voxel x' reads the source at c + (x' - shift - c) / zoom.
  FlowField resample(e);
  for (int k = 0; k < e.z; ++k) {
    for (int j = 0; j < e.y; ++j) {
      for (int i = 0; i < e.x; ++i) {
        const int idx[3] = {i, j, k};
        for (int a = 0; a < 3; ++a) {
          const double src = centre[a] + (idx[a] - p.shift[static_cast<std::size_t>(a)] - centre[a]) / p.zoom;
          resample.at(a, i, j, k) = static_cast<float>(src - idx[a]);
        }
      }
    }
  }

  AnnotatedSample out;
  out.es = warp(sample.es, resample);
  const Tensor moved = warp(to_tensor(sample.flow), to_tensor(resample));
  out.flow = flow_from_tensor(moved);
  for (float& v : out.flow.values()) v = static_cast<float>(v * p.zoom);
  if (p.noise_std > 0.0) {
    std::mt19937_64 rng(p.noise_seed);
    std::normal_distribution<double> noise(0.0, p.noise_std);
    for (float& v : out.es.values()) v = static_cast<float>(v + noise(rng));
  }
  out.ed = warp(out.es, out.flow);
  out.spec = sample.spec;
  out.source = sample.source + "+augment";
  return out;
}

AnnotatedSample augment(const AnnotatedSample& sample, const AugmentConfig& cfg, std::uint64_t seed) {
  return apply_augment(sample, sample_augment(cfg, sample.es.extent(), seed));
}

}  // namespace flowgen
