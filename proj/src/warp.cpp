#include "flowgen/warp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "flowgen/errors.hpp"

namespace flowgen {

namespace {

template <typename T>
struct AxisSample {
  int i0 = 0;
  int i1 = 0;
  T t = T(0);
  bool inside = true;  // false when the coordinate was clamped
};

template <typename T>
AxisSample<T> locate(T p, int n) {
  AxisSample<T> s;
  const T hi = static_cast<T>(n - 1);
  if (p < T(0) || p > hi) s.inside = false;
  p = std::clamp(p, T(0), hi);
  int i0 = static_cast<int>(std::floor(p));
  if (n >= 2) i0 = std::min(i0, n - 2);
  s.i0 = i0;
  s.i1 = std::min(i0 + 1, n - 1);
  s.t = n >= 2 ? p - static_cast<T>(i0) : T(0);
  return s;
}

// Eight-corner stencil of one trilinear sample.
template <typename T>
struct Stencil {
  AxisSample<T> x, y, z;
  std::int64_t idx[8];

  Stencil(T px, T py, T pz, int nx, int ny, int nz)
      : x(locate(px, nx)), y(locate(py, ny)), z(locate(pz, nz)) {
    const int xs[2] = {x.i0, x.i1};
    const int ys[2] = {y.i0, y.i1};
    const int zs[2] = {z.i0, z.i1};
    for (int c = 0; c < 8; ++c) {
      idx[c] = (static_cast<std::int64_t>(zs[(c >> 2) & 1]) * ny + ys[(c >> 1) & 1]) * nx + xs[c & 1];
    }
  }

  T value(const T* g) const {
    const T c00 = g[idx[0]] * (T(1) - x.t) + g[idx[1]] * x.t;
    const T c10 = g[idx[2]] * (T(1) - x.t) + g[idx[3]] * x.t;
    const T c01 = g[idx[4]] * (T(1) - x.t) + g[idx[5]] * x.t;
    const T c11 = g[idx[6]] * (T(1) - x.t) + g[idx[7]] * x.t;
    const T c0 = c00 * (T(1) - y.t) + c10 * y.t;
    const T c1 = c01 * (T(1) - y.t) + c11 * y.t;
    return c0 * (T(1) - z.t) + c1 * z.t;
  }

  T weight(int c) const {
    const T wx = (c & 1) ? x.t : T(1) - x.t;
    const T wy = (c & 2) ? y.t : T(1) - y.t;
    const T wz = (c & 4) ? z.t : T(1) - z.t;
    return wx * wy * wz;
  }

  // Partial derivatives of the sampled value with respect to the unclamped
  // coordinates.
  void gradient(const T* g, T& dx, T& dy, T& dz) const {
    const T ux = T(1) - x.t, uy = T(1) - y.t, uz = T(1) - z.t;
    dx = ((g[idx[1]] - g[idx[0]]) * uy * uz + (g[idx[3]] - g[idx[2]]) * y.t * uz +
          (g[idx[5]] - g[idx[4]]) * uy * z.t + (g[idx[7]] - g[idx[6]]) * y.t * z.t);
    dy = ((g[idx[2]] - g[idx[0]]) * ux * uz + (g[idx[3]] - g[idx[1]]) * x.t * uz +
          (g[idx[6]] - g[idx[4]]) * ux * z.t + (g[idx[7]] - g[idx[5]]) * x.t * z.t);
    dz = ((g[idx[4]] - g[idx[0]]) * ux * uy + (g[idx[5]] - g[idx[1]]) * x.t * uy +
          (g[idx[6]] - g[idx[2]]) * ux * y.t + (g[idx[7]] - g[idx[3]]) * x.t * y.t);
    if (!x.inside) dx = T(0);
    if (!y.inside) dy = T(0);
    if (!z.inside) dz = T(0);
  }
};

}  // namespace

template <typename T>
BasicTensor<T> warp(const BasicTensor<T>& source, const BasicTensor<T>& flow) {
  if (source.rank() != 5 || flow.rank() != 5 || flow.dim(1) != 3 || source.dim(0) != flow.dim(0) ||
      source.dim(2) != flow.dim(2) || source.dim(3) != flow.dim(3) || source.dim(4) != flow.dim(4)) {
    throw DimensionError("warp: source " + shape_to_string(source.shape()) + " and flow " +
                         shape_to_string(flow.shape()) + " are incompatible");
  }
  const int batch = source.dim(0);
  const int channels = source.dim(1);
  const int nz = source.dim(2), ny = source.dim(3), nx = source.dim(4);
  const std::int64_t n = static_cast<std::int64_t>(nz) * ny * nx;
  std::vector<T> out(static_cast<std::size_t>(batch) * channels * n);
  const T* src = source.data().data();
  const T* fl = flow.data().data();

#pragma omp parallel for schedule(static)
  for (int b = 0; b < batch; ++b) {
    const T* fb = fl + b * 3 * n;
    for (int k = 0; k < nz; ++k) {
      for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
          const std::int64_t v = (static_cast<std::int64_t>(k) * ny + j) * nx + i;
          const Stencil<T> s(static_cast<T>(i) + fb[v], static_cast<T>(j) + fb[n + v], static_cast<T>(k) + fb[2 * n + v],
                             nx, ny, nz);
          for (int c = 0; c < channels; ++c) {
            const std::int64_t plane = (static_cast<std::int64_t>(b) * channels + c) * n;
            out[static_cast<std::size_t>(plane + v)] = s.value(src + plane);
          }
        }
      }
    }
  }

  auto sn = source.node();
  auto fn = flow.node();
  return detail::make_result<T>(
      source.shape(), std::move(out), {source, flow}, "warp",
      [sn, fn, batch, channels, nx, ny, nz, n](detail::TensorNode<T>& self) {
        const T* src = sn->data.data();
        const T* fl = fn->data.data();
        const T* g = self.grad.data();
        std::vector<T> gs(sn->requires_grad ? sn->data.size() : 0, T(0));
        std::vector<T> gf(fn->requires_grad ? fn->data.size() : 0, T(0));
#pragma omp parallel for schedule(static)
        for (int b = 0; b < batch; ++b) {
          const T* fb = fl + b * 3 * n;
          for (int k = 0; k < nz; ++k) {
            for (int j = 0; j < ny; ++j) {
              for (int i = 0; i < nx; ++i) {
                const std::int64_t v = (static_cast<std::int64_t>(k) * ny + j) * nx + i;
                const Stencil<T> s(static_cast<T>(i) + fb[v], static_cast<T>(j) + fb[n + v],
                                   static_cast<T>(k) + fb[2 * n + v], nx, ny, nz);
                T ax(0), ay(0), az(0);
                for (int c = 0; c < channels; ++c) {
                  const std::int64_t plane = (static_cast<std::int64_t>(b) * channels + c) * n;
                  const T go = g[plane + v];
                  if (!gs.empty()) {
                    for (int corner = 0; corner < 8; ++corner) gs[plane + s.idx[corner]] += go * s.weight(corner);
                  }
                  if (!gf.empty()) {
                    T dx, dy, dz;
                    s.gradient(src + plane, dx, dy, dz);
                    ax += go * dx;
                    ay += go * dy;
                    az += go * dz;
                  }
                }
                if (!gf.empty()) {
                  gf[b * 3 * n + v] = ax;
                  gf[b * 3 * n + n + v] = ay;
                  gf[b * 3 * n + 2 * n + v] = az;
                }
              }
            }
          }
        }
        if (!gs.empty()) sn->accumulate(gs);
        if (!gf.empty()) fn->accumulate(gf);
      });
}

Volume warp(const Volume& source, const FlowField& flow) {
  if (!(source.extent() == flow.extent())) {
    throw DimensionError("warp: source extent " + to_string(source.extent()) + " differs from flow extent " +
                         to_string(flow.extent()));
  }
  return volume_from_tensor(warp(to_tensor(source), to_tensor(flow)));
}

EndpointError mepe(const FlowField& pred, const FlowField& gt) {
  if (!(pred.extent() == gt.extent())) {
    throw DimensionError("mepe: extents " + to_string(pred.extent()) + " and " + to_string(gt.extent()) +
                         " differ");
  }
  const auto n = static_cast<std::size_t>(pred.extent().voxels());
  const auto a = pred.values();
  const auto b = gt.values();
  double total = 0.0, total_sq = 0.0;
  for (std::size_t v = 0; v < n; ++v) {
    const double dx = static_cast<double>(a[v]) - b[v];
    const double dy = static_cast<double>(a[n + v]) - b[n + v];
    const double dz = static_cast<double>(a[2 * n + v]) - b[2 * n + v];
    const double e = std::sqrt(dx * dx + dy * dy + dz * dz);
    total += e;
    total_sq += e * e;
  }
  EndpointError r;
  r.mean = total / static_cast<double>(n);
  r.std = std::sqrt(std::max(0.0, total_sq / static_cast<double>(n) - r.mean * r.mean));
  return r;
}

FlowStats flow_stats(const FlowField& flow) {
  const Extent3& e = flow.extent();
  const auto n = static_cast<std::size_t>(e.voxels());
  const auto f = flow.values();
  FlowStats s;
  for (std::size_t v = 0; v < n; ++v) {
    const double m = std::sqrt(static_cast<double>(f[v]) * f[v] + static_cast<double>(f[n + v]) * f[n + v] +
                               static_cast<double>(f[2 * n + v]) * f[2 * n + v]);
    s.mean_magnitude += m;
    s.max_magnitude = std::max(s.max_magnitude, m);
  }
  s.mean_magnitude /= static_cast<double>(n);

  std::int64_t interior = 0;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  double acc = 0.0;
  for (int k = 1; k + 1 < e.z; ++k) {
    for (int j = 1; j + 1 < e.y; ++j) {
      for (int i = 1; i + 1 < e.x; ++i) {
        const double div = 0.5 * (static_cast<double>(flow.at(0, i + 1, j, k)) - flow.at(0, i - 1, j, k)) +
                           0.5 * (static_cast<double>(flow.at(1, i, j + 1, k)) - flow.at(1, i, j - 1, k)) +
                           0.5 * (static_cast<double>(flow.at(2, i, j, k + 1)) - flow.at(2, i, j, k - 1));
        acc += div;
        lo = std::min(lo, div);
        hi = std::max(hi, div);
        ++interior;
      }
    }
  }
  if (interior > 0) {
    s.divergence_mean = acc / static_cast<double>(interior);
    s.divergence_min = lo;
    s.divergence_max = hi;
  }
  return s;
}

double warp_consistency(const Volume& es, const Volume& ed, const FlowField& flow) {
  const Volume w = warp(es, flow);
  if (!(w.extent() == ed.extent())) {
    throw DimensionError("warp_consistency: extents " + to_string(w.extent()) + " and " + to_string(ed.extent()) +
                         " differ");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < w.values().size(); ++i) acc += std::abs(static_cast<double>(w.values()[i]) - ed.values()[i]);
  return acc / static_cast<double>(w.values().size());
}

template BasicTensor<float> warp(const BasicTensor<float>&, const BasicTensor<float>&);
template BasicTensor<double> warp(const BasicTensor<double>&, const BasicTensor<double>&);

}  // namespace flowgen
