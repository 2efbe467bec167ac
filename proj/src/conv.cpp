#include "flowgen/conv.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cstring>

#include "flowgen/errors.hpp"

namespace flowgen {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMatrix = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMapMatrix = Eigen::Map<const RowMatrix<T>>;

struct Grid {
  int d = 0, h = 0, w = 0;
  std::int64_t size() const { return static_cast<std::int64_t>(d) * h * w; }
};

// Valid output index range [lo, hi) along one axis for kernel tap `k`.
std::pair<int, int> valid_range(int out_extent, int in_extent, int tap, const ConvGeometry& g) {
  // in = out * s - p + tap must lie in [0, in_extent).
  const int off = tap - g.padding;
  int lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  int hi = (in_extent - 1 - off) >= 0 ? (in_extent - 1 - off) / g.stride + 1 : 0;
  lo = std::min(lo, out_extent);
  hi = std::clamp(hi, lo, out_extent);
  return {lo, hi};
}

// Output planes per column slab, sized so a slab of columns stays in cache.
int slab_planes(std::int64_t rows, Grid out) {
  constexpr std::int64_t kBudget = 1 << 18;
  const std::int64_t plane = rows * out.h * out.w;
  return static_cast<int>(std::clamp<std::int64_t>(kBudget / std::max<std::int64_t>(plane, 1), 1, out.d));
}

// Unfolds `src` [C, in] into columns [C*k^3, n] for a conv from `in` to `out`,
// restricted to output planes [z0, z1) so that n = (z1 - z0) * out.h * out.w.
template <typename T>
void im2col(const T* src, int channels, Grid in, Grid out, const ConvGeometry& g, int z0, int z1, T* cols) {
  const int k = g.kernel;
  const std::int64_t out_n = static_cast<std::int64_t>(z1 - z0) * out.h * out.w;
  for (int c = 0; c < channels; ++c) {
    const T* plane = src + c * in.size();
    for (int kz = 0; kz < k; ++kz) {
      const auto [z_lo, z_hi] = valid_range(out.d, in.d, kz, g);
      for (int ky = 0; ky < k; ++ky) {
        const auto [y_lo, y_hi] = valid_range(out.h, in.h, ky, g);
        for (int kx = 0; kx < k; ++kx) {
          const auto [x_lo, x_hi] = valid_range(out.w, in.w, kx, g);
          T* row = cols + (((static_cast<std::int64_t>(c) * k + kz) * k + ky) * k + kx) * out_n;
          for (int oz = z0; oz < z1; ++oz) {
            T* zrow = row + static_cast<std::int64_t>(oz - z0) * out.h * out.w;
            if (oz < z_lo || oz >= z_hi) {
              std::fill_n(zrow, out.h * out.w, T(0));
              continue;
            }
            const int iz = oz * g.stride - g.padding + kz;
            for (int oy = 0; oy < out.h; ++oy) {
              T* dst = zrow + oy * out.w;
              if (oy < y_lo || oy >= y_hi) {
                std::fill_n(dst, out.w, T(0));
                continue;
              }
              const int iy = oy * g.stride - g.padding + ky;
              const T* srow = plane + (static_cast<std::int64_t>(iz) * in.h + iy) * in.w;
              std::fill_n(dst, x_lo, T(0));
              const int ix0 = x_lo * g.stride - g.padding + kx;
              if (g.stride == 1) {
                std::copy_n(srow + ix0, x_hi - x_lo, dst + x_lo);
              } else {
                for (int ox = x_lo; ox < x_hi; ++ox) dst[ox] = srow[ix0 + (ox - x_lo) * g.stride];
              }
              std::fill_n(dst + x_hi, out.w - x_hi, T(0));
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates columns back onto `dst` [C, in].
template <typename T>
void col2im(const T* cols, int channels, Grid in, Grid out, const ConvGeometry& g, int z0, int z1, T* dst) {
  const int k = g.kernel;
  const std::int64_t out_n = static_cast<std::int64_t>(z1 - z0) * out.h * out.w;
  for (int c = 0; c < channels; ++c) {
    T* plane = dst + c * in.size();
    for (int kz = 0; kz < k; ++kz) {
      const auto [z_lo, z_hi] = valid_range(out.d, in.d, kz, g);
      for (int ky = 0; ky < k; ++ky) {
        const auto [y_lo, y_hi] = valid_range(out.h, in.h, ky, g);
        for (int kx = 0; kx < k; ++kx) {
          const auto [x_lo, x_hi] = valid_range(out.w, in.w, kx, g);
          const T* row = cols + (((static_cast<std::int64_t>(c) * k + kz) * k + ky) * k + kx) * out_n;
          for (int oz = std::max(z_lo, z0); oz < std::min(z_hi, z1); ++oz) {
            const int iz = oz * g.stride - g.padding + kz;
            for (int oy = y_lo; oy < y_hi; ++oy) {
              const int iy = oy * g.stride - g.padding + ky;
              const T* src = row + (static_cast<std::int64_t>(oz - z0) * out.h + oy) * out.w;
              T* drow = plane + (static_cast<std::int64_t>(iz) * in.h + iy) * in.w;
              const int ix0 = x_lo * g.stride - g.padding + kx;
              if (g.stride == 1) {
                for (int ox = x_lo; ox < x_hi; ++ox) drow[ix0 + ox - x_lo] += src[ox];
              } else {
                for (int ox = x_lo; ox < x_hi; ++ox) drow[ix0 + (ox - x_lo) * g.stride] += src[ox];
              }
            }
          }
        }
      }
    }
  }
}

// Direct kernels for kernel 3, stride 1, padding 1, the geometry of every
// refiner and output head. Rows are processed in vector chunks along x with
// a block of output channels held in registers, so no column matrix is built.
namespace direct {

template <typename T>
struct Simd {
  static constexpr int kLanes = 64 / sizeof(T);
  typedef T V __attribute__((vector_size(64)));
};

template <typename T>
using Vec = typename Simd<T>::V;

template <typename T>
inline Vec<T> load(const T* p) {
  Vec<T> v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

template <typename T>
inline Vec<T> splat(T x) {
  return Vec<T>{} + x;
}

template <typename T>
bool applies(const ConvGeometry& g, int width) {
  return g.kernel == 3 && g.stride == 1 && g.padding == 1 && width >= Simd<T>::kLanes;
}

// Zero-padded copy layout: [C][d+2][h+2][row], input x at column x + 1.
struct Padded {
  Grid grid;
  int chunks = 0;
  int row = 0;
  std::int64_t plane() const { return static_cast<std::int64_t>(grid.h + 2) * row; }
  std::int64_t channel() const { return static_cast<std::int64_t>(grid.d + 2) * plane(); }
};

template <typename T>
Padded layout(Grid g) {
  constexpr int L = Simd<T>::kLanes;
  Padded p;
  p.grid = g;
  p.chunks = (g.w + L - 1) / L;
  p.row = p.chunks * L + 2;
  return p;
}

template <typename T>
void pad(const T* src, int channels, const Padded& p, std::vector<T>& dst) {
  dst.assign(static_cast<std::size_t>(channels * p.channel()), T(0));
  const Grid g = p.grid;
  for (int c = 0; c < channels; ++c) {
    for (int z = 0; z < g.d; ++z) {
      for (int y = 0; y < g.h; ++y) {
        const T* s = src + ((static_cast<std::int64_t>(c) * g.d + z) * g.h + y) * g.w;
        T* d = dst.data() + c * p.channel() + (z + 1) * p.plane() + static_cast<std::int64_t>(y + 1) * p.row + 1;
        std::copy_n(s, g.w, d);
      }
    }
  }
}

// out[o0 + b] over the whole grid for OB consecutive output channels.
// `w` is [out][in][3][3][3].
template <typename T, int OB>
void forward_block(const T* padded, int in_ch, const Padded& p, const T* w, const T* bias, int o0, T* out) {
  constexpr int L = Simd<T>::kLanes;
  const Grid g = p.grid;
  for (int z = 0; z < g.d; ++z) {
    for (int y = 0; y < g.h; ++y) {
      for (int cx = 0; cx < p.chunks; ++cx) {
        Vec<T> acc[OB];
        for (int b = 0; b < OB; ++b) acc[b] = splat<T>(bias ? bias[o0 + b] : T(0));
        for (int c = 0; c < in_ch; ++c) {
          const T* base = padded + c * p.channel() + z * p.plane() + static_cast<std::int64_t>(y) * p.row + cx * L;
          for (int kz = 0; kz < 3; ++kz) {
            for (int ky = 0; ky < 3; ++ky) {
              const T* row = base + kz * p.plane() + ky * p.row;
              const Vec<T> r0 = load(row), r1 = load(row + 1), r2 = load(row + 2);
              const int tap = kz * 9 + ky * 3;
              for (int b = 0; b < OB; ++b) {
                const T* wk = w + (static_cast<std::int64_t>(o0 + b) * in_ch + c) * 27 + tap;
                acc[b] += splat(wk[0]) * r0 + splat(wk[1]) * r1 + splat(wk[2]) * r2;
              }
            }
          }
        }
        const int n = std::min(L, g.w - cx * L);
        for (int b = 0; b < OB; ++b) {
          T lanes[L];
          std::memcpy(lanes, &acc[b], sizeof lanes);
          T* dst = out + ((static_cast<std::int64_t>(o0 + b) * g.d + z) * g.h + y) * g.w + cx * L;
          std::copy_n(lanes, n, dst);
        }
      }
    }
  }
}

template <typename T>
void forward(const T* padded, int in_ch, int out_ch, const Padded& p, const T* w, const T* bias, T* out) {
  int o = 0;
  for (; o + 8 <= out_ch; o += 8) forward_block<T, 8>(padded, in_ch, p, w, bias, o, out);
  switch (out_ch - o) {
    case 7: forward_block<T, 7>(padded, in_ch, p, w, bias, o, out); break;
    case 6: forward_block<T, 6>(padded, in_ch, p, w, bias, o, out); break;
    case 5: forward_block<T, 5>(padded, in_ch, p, w, bias, o, out); break;
    case 4: forward_block<T, 4>(padded, in_ch, p, w, bias, o, out); break;
    case 3: forward_block<T, 3>(padded, in_ch, p, w, bias, o, out); break;
    case 2: forward_block<T, 2>(padded, in_ch, p, w, bias, o, out); break;
    case 1: forward_block<T, 1>(padded, in_ch, p, w, bias, o, out); break;
    default: break;
  }
}

// Weights of the adjoint convolution: w'[c][o][k] = w[o][c][26 - k].
template <typename T>
std::vector<T> adjoint_weights(const T* w, int out_ch, int in_ch) {
  std::vector<T> t(static_cast<std::size_t>(out_ch) * in_ch * 27);
  for (int o = 0; o < out_ch; ++o) {
    for (int c = 0; c < in_ch; ++c) {
      for (int k = 0; k < 27; ++k) {
        t[(static_cast<std::size_t>(c) * out_ch + o) * 27 + k] = w[(static_cast<std::size_t>(o) * in_ch + c) * 27 + 26 - k];
      }
    }
  }
  return t;
}

// gy rows widened to whole vector chunks with zero tails: [out][d][h][chunks*L].
template <typename T>
void widen(const T* gy, int channels, const Padded& p, std::vector<T>& dst) {
  constexpr int L = Simd<T>::kLanes;
  const Grid g = p.grid;
  const int width = p.chunks * L;
  dst.assign(static_cast<std::size_t>(channels) * g.d * g.h * width, T(0));
  for (std::int64_t r = 0; r < static_cast<std::int64_t>(channels) * g.d * g.h; ++r) {
    std::copy_n(gy + r * g.w, g.w, dst.data() + r * width);
  }
}

template <typename T>
T lane_sum(const Vec<T>& v) {
  T lanes[Simd<T>::kLanes];
  std::memcpy(lanes, &v, sizeof lanes);
  T s(0);
  for (T x : lanes) s += x;
  return s;
}

// dw[o][c][k] += sum over the grid of gy[o] * shifted input[c].
template <typename T, int OB>
void weight_grad_block(const T* padded, int in_ch, const Padded& p, const T* gy_wide, int o0, T* dw) {
  constexpr int L = Simd<T>::kLanes;
  const Grid g = p.grid;
  const int width = p.chunks * L;
  for (int c = 0; c < in_ch; ++c) {
    for (int kz = 0; kz < 3; ++kz) {
      for (int ky = 0; ky < 3; ++ky) {
        Vec<T> acc[OB][3];
        for (int b = 0; b < OB; ++b) acc[b][0] = acc[b][1] = acc[b][2] = splat<T>(T(0));
        for (int z = 0; z < g.d; ++z) {
          for (int y = 0; y < g.h; ++y) {
            const T* row = padded + c * p.channel() + (z + kz) * p.plane() + static_cast<std::int64_t>(y + ky) * p.row;
            for (int cx = 0; cx < p.chunks; ++cx) {
              const Vec<T> r0 = load(row + cx * L), r1 = load(row + cx * L + 1), r2 = load(row + cx * L + 2);
              for (int b = 0; b < OB; ++b) {
                const Vec<T> gv =
                    load(gy_wide + ((static_cast<std::int64_t>(o0 + b) * g.d + z) * g.h + y) * width + cx * L);
                acc[b][0] += gv * r0;
                acc[b][1] += gv * r1;
                acc[b][2] += gv * r2;
              }
            }
          }
        }
        for (int b = 0; b < OB; ++b) {
          T* d = dw + (static_cast<std::int64_t>(o0 + b) * in_ch + c) * 27 + kz * 9 + ky * 3;
          for (int kx = 0; kx < 3; ++kx) d[kx] += lane_sum<T>(acc[b][kx]);
        }
      }
    }
  }
}

template <typename T>
void weight_grad(const T* padded, int in_ch, int out_ch, const Padded& p, const T* gy_wide, T* dw) {
  int o = 0;
  for (; o + 8 <= out_ch; o += 8) weight_grad_block<T, 8>(padded, in_ch, p, gy_wide, o, dw);
  switch (out_ch - o) {
    case 7: weight_grad_block<T, 7>(padded, in_ch, p, gy_wide, o, dw); break;
    case 6: weight_grad_block<T, 6>(padded, in_ch, p, gy_wide, o, dw); break;
    case 5: weight_grad_block<T, 5>(padded, in_ch, p, gy_wide, o, dw); break;
    case 4: weight_grad_block<T, 4>(padded, in_ch, p, gy_wide, o, dw); break;
    case 3: weight_grad_block<T, 3>(padded, in_ch, p, gy_wide, o, dw); break;
    case 2: weight_grad_block<T, 2>(padded, in_ch, p, gy_wide, o, dw); break;
    case 1: weight_grad_block<T, 1>(padded, in_ch, p, gy_wide, o, dw); break;
    default: break;
  }
}

}  // namespace direct

void check_geometry(const ConvGeometry& g) {
  if (g.kernel <= 0 || g.stride <= 0 || g.padding < 0) {
    throw DimensionError("invalid convolution geometry: kernel " + std::to_string(g.kernel) + ", stride " +
                         std::to_string(g.stride) + ", padding " + std::to_string(g.padding));
  }
}

template <typename T>
void check_operands(const char* what, const BasicTensor<T>& input, const BasicTensor<T>& weight,
                    const BasicTensor<T>& bias, int weight_in_axis, int out_ch, const ConvGeometry& g) {
  check_geometry(g);
  if (input.rank() != 5) {
    throw DimensionError(std::string(what) + ": expected 5-D input, got " + shape_to_string(input.shape()));
  }
  const Shape& ws = weight.shape();
  if (ws.size() != 5 || ws[2] != g.kernel || ws[3] != g.kernel || ws[4] != g.kernel) {
    throw DimensionError(std::string(what) + ": weight " + shape_to_string(ws) + " does not match kernel " +
                         std::to_string(g.kernel));
  }
  if (ws[static_cast<std::size_t>(weight_in_axis)] != input.dim(1)) {
    throw DimensionError(std::string(what) + ": input channels of " + shape_to_string(input.shape()) +
                         " do not match weight " + shape_to_string(ws));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_ch)) {
    throw DimensionError(std::string(what) + ": bias " + shape_to_string(bias.shape()) +
                         " does not match weight " + shape_to_string(ws));
  }
}

template <typename T>
void add_bias(T* out, const T* bias, int channels, std::int64_t spatial) {
  for (int o = 0; o < channels; ++o) {
    const T b = bias[o];
    T* row = out + o * spatial;
    for (std::int64_t i = 0; i < spatial; ++i) row[i] += b;
  }
}

template <typename T>
std::vector<T> bias_grad(const std::vector<T>& grad, int batch, int channels, std::int64_t spatial) {
  std::vector<T> gb(static_cast<std::size_t>(channels), T(0));
  for (int b = 0; b < batch; ++b) {
    for (int o = 0; o < channels; ++o) {
      const T* row = grad.data() + (static_cast<std::int64_t>(b) * channels + o) * spatial;
      T acc(0);
      for (std::int64_t i = 0; i < spatial; ++i) acc += row[i];
      gb[static_cast<std::size_t>(o)] += acc;
    }
  }
  return gb;
}

// Sums per-sample partial weight gradients in sample order.
template <typename T>
std::vector<T> reduce_partials(const std::vector<T>& partial, int batch, std::size_t size) {
  std::vector<T> out(size, T(0));
  for (int b = 0; b < batch; ++b) {
    const T* p = partial.data() + static_cast<std::size_t>(b) * size;
    for (std::size_t i = 0; i < size; ++i) out[i] += p[i];
  }
  return out;
}

}  // namespace

int conv_output_extent(int in, const ConvGeometry& g) {
  check_geometry(g);
  const int num = in + 2 * g.padding - g.kernel;
  const int out = num >= 0 ? num / g.stride + 1 : 0;
  if (out <= 0) {
    throw DimensionError("convolution output extent is not positive: input " + std::to_string(in) +
                         ", kernel " + std::to_string(g.kernel) + ", stride " + std::to_string(g.stride) +
                         ", padding " + std::to_string(g.padding));
  }
  return out;
}

int deconv_output_extent(int in, const ConvGeometry& g) {
  check_geometry(g);
  const int out = (in - 1) * g.stride - 2 * g.padding + g.kernel;
  if (in <= 0 || out <= 0) {
    throw DimensionError("transposed convolution output extent is not positive: input " + std::to_string(in) +
                         ", kernel " + std::to_string(g.kernel) + ", stride " + std::to_string(g.stride) +
                         ", padding " + std::to_string(g.padding));
  }
  return out;
}

template <typename T>
BasicTensor<T> conv3d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      const ConvGeometry& g) {
  const int out_ch = weight.rank() == 5 ? weight.dim(0) : 0;
  check_operands("conv3d", input, weight, bias, 1, out_ch, g);
  const int batch = input.dim(0);
  const int in_ch = input.dim(1);
  const Grid in{input.dim(2), input.dim(3), input.dim(4)};
  const Grid out{conv_output_extent(in.d, g), conv_output_extent(in.h, g), conv_output_extent(in.w, g)};
  const int k3 = g.kernel * g.kernel * g.kernel;
  const std::int64_t rows = static_cast<std::int64_t>(in_ch) * k3;

  std::vector<T> y(static_cast<std::size_t>(batch) * out_ch * out.size());
  const T* x = input.data().data();
  const T* w = weight.data().data();
  const T* bptr = bias.defined() ? bias.data().data() : nullptr;

  const int planes = slab_planes(rows, out);
  const std::int64_t plane_n = static_cast<std::int64_t>(out.h) * out.w;
  const bool use_direct = direct::applies<T>(g, in.w);

#pragma omp parallel for schedule(static)
  for (int b = 0; b < batch; ++b) {
    if (use_direct) {
      std::vector<T> padded;
      const auto p = direct::layout<T>(in);
      direct::pad(x + b * in_ch * in.size(), in_ch, p, padded);
      direct::forward(padded.data(), in_ch, out_ch, p, w, bptr, y.data() + b * out_ch * out.size());
      continue;
    }
    std::vector<T> cols(static_cast<std::size_t>(rows * planes * plane_n));
    MapMatrix<T> yb(y.data() + b * out_ch * out.size(), out_ch, out.size());
    for (int z0 = 0; z0 < out.d; z0 += planes) {
      const int z1 = std::min(out.d, z0 + planes);
      const std::int64_t n = (z1 - z0) * plane_n;
      im2col(x + b * in_ch * in.size(), in_ch, in, out, g, z0, z1, cols.data());
      yb.middleCols(z0 * plane_n, n).noalias() =
          ConstMapMatrix<T>(w, out_ch, rows) * ConstMapMatrix<T>(cols.data(), rows, n);
    }
    if (bptr) add_bias(yb.data(), bptr, out_ch, out.size());
  }

  auto xn = input.node();
  auto wn = weight.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  return detail::make_result<T>(
      {batch, out_ch, out.d, out.h, out.w}, std::move(y), {input, weight, bias}, "conv3d",
      [xn, wn, bn, g, batch, in_ch, out_ch, in, out, rows, planes, plane_n](detail::TensorNode<T>& self) {
        const T* gy = self.grad.data();
        const T* x = xn->data.data();
        ConstMapMatrix<T> wm(wn->data.data(), out_ch, rows);
        const bool need_x = xn->requires_grad;
        const bool need_w = wn->requires_grad;
        std::vector<T> gx(need_x ? xn->data.size() : 0, T(0));
        const std::size_t wsize = wn->data.size();
        std::vector<T> gw_partial(need_w ? wsize * static_cast<std::size_t>(batch) : 0);

        if (direct::applies<T>(g, in.w)) {
          const auto p = direct::layout<T>(in);
          const std::vector<T> wt = need_x ? direct::adjoint_weights(wn->data.data(), out_ch, in_ch) : std::vector<T>{};
#pragma omp parallel for schedule(static)
          for (int b = 0; b < batch; ++b) {
            std::vector<T> buf;
            if (need_x) {
              direct::pad(gy + b * out_ch * out.size(), out_ch, p, buf);
              direct::forward<T>(buf.data(), out_ch, in_ch, p, wt.data(), nullptr, gx.data() + b * in_ch * in.size());
            }
            if (need_w) {
              std::vector<T> wide;
              direct::widen(gy + b * out_ch * out.size(), out_ch, p, wide);
              direct::pad(x + b * in_ch * in.size(), in_ch, p, buf);
              T* gwb = gw_partial.data() + b * wsize;
              std::fill_n(gwb, wsize, T(0));
              direct::weight_grad(buf.data(), in_ch, out_ch, p, wide.data(), gwb);
            }
          }
        } else {
#pragma omp parallel for schedule(static)
        for (int b = 0; b < batch; ++b) {
          ConstMapMatrix<T> gb(gy + b * out_ch * out.size(), out_ch, out.size());
          std::vector<T> cols(static_cast<std::size_t>(rows * planes * plane_n));
          MapMatrix<T> gwb(need_w ? gw_partial.data() + b * wsize : nullptr, out_ch, rows);
          if (need_w) gwb.setZero();
          for (int z0 = 0; z0 < out.d; z0 += planes) {
            const int z1 = std::min(out.d, z0 + planes);
            const std::int64_t n = (z1 - z0) * plane_n;
            if (need_w) {
              im2col(x + b * in_ch * in.size(), in_ch, in, out, g, z0, z1, cols.data());
              gwb.noalias() += gb.middleCols(z0 * plane_n, n) * ConstMapMatrix<T>(cols.data(), rows, n).transpose();
            }
            if (need_x) {
              MapMatrix<T>(cols.data(), rows, n).noalias() = wm.transpose() * gb.middleCols(z0 * plane_n, n);
              col2im(cols.data(), in_ch, in, out, g, z0, z1, gx.data() + b * in_ch * in.size());
            }
          }
        }
        }
        if (need_x) xn->accumulate(gx);
        if (need_w) wn->accumulate(reduce_partials(gw_partial, batch, wsize));
        if (bn && bn->requires_grad) bn->accumulate(bias_grad(self.grad, batch, out_ch, out.size()));
      });
}

template <typename T>
BasicTensor<T> deconv3d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                        const ConvGeometry& g) {
  const int out_ch = weight.rank() == 5 ? weight.dim(1) : 0;
  check_operands("deconv3d", input, weight, bias, 0, out_ch, g);
  const int batch = input.dim(0);
  const int in_ch = input.dim(1);
  const Grid in{input.dim(2), input.dim(3), input.dim(4)};
  const Grid out{deconv_output_extent(in.d, g), deconv_output_extent(in.h, g), deconv_output_extent(in.w, g)};
  const int k3 = g.kernel * g.kernel * g.kernel;
  const std::int64_t rows = static_cast<std::int64_t>(out_ch) * k3;

  std::vector<T> y(static_cast<std::size_t>(batch) * out_ch * out.size(), T(0));
  const T* x = input.data().data();
  const T* w = weight.data().data();
  const T* bptr = bias.defined() ? bias.data().data() : nullptr;

  // The deconvolution output plays the role of the convolution input: a conv
  // over `out` with geometry `g` produces extents `in`.
  const int planes = slab_planes(rows, in);
  const std::int64_t plane_n = static_cast<std::int64_t>(in.h) * in.w;

#pragma omp parallel for schedule(static)
  for (int b = 0; b < batch; ++b) {
    std::vector<T> cols(static_cast<std::size_t>(rows * planes * plane_n));
    ConstMapMatrix<T> xb(x + b * in_ch * in.size(), in_ch, in.size());
    T* yb = y.data() + b * out_ch * out.size();
    for (int z0 = 0; z0 < in.d; z0 += planes) {
      const int z1 = std::min(in.d, z0 + planes);
      const std::int64_t n = (z1 - z0) * plane_n;
      MapMatrix<T>(cols.data(), rows, n).noalias() =
          ConstMapMatrix<T>(w, in_ch, rows).transpose() * xb.middleCols(z0 * plane_n, n);
      col2im(cols.data(), out_ch, out, in, g, z0, z1, yb);
    }
    if (bptr) add_bias(yb, bptr, out_ch, out.size());
  }

  auto xn = input.node();
  auto wn = weight.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  return detail::make_result<T>(
      {batch, out_ch, out.d, out.h, out.w}, std::move(y), {input, weight, bias}, "deconv3d",
      [xn, wn, bn, g, batch, in_ch, out_ch, in, out, rows, planes, plane_n](detail::TensorNode<T>& self) {
        const T* gy = self.grad.data();
        const T* x = xn->data.data();
        ConstMapMatrix<T> wm(wn->data.data(), in_ch, rows);
        const bool need_x = xn->requires_grad;
        const bool need_w = wn->requires_grad;
        std::vector<T> gx(need_x ? xn->data.size() : 0);
        const std::size_t wsize = wn->data.size();
        std::vector<T> gw_partial(need_w ? wsize * static_cast<std::size_t>(batch) : 0);

#pragma omp parallel for schedule(static)
        for (int b = 0; b < batch; ++b) {
          std::vector<T> cols(static_cast<std::size_t>(rows * planes * plane_n));
          ConstMapMatrix<T> xb(x + b * in_ch * in.size(), in_ch, in.size());
          MapMatrix<T> gxb(need_x ? gx.data() + b * in_ch * in.size() : nullptr, in_ch, in.size());
          MapMatrix<T> gwb(need_w ? gw_partial.data() + b * wsize : nullptr, in_ch, rows);
          if (need_w) gwb.setZero();
          for (int z0 = 0; z0 < in.d; z0 += planes) {
            const int z1 = std::min(in.d, z0 + planes);
            const std::int64_t n = (z1 - z0) * plane_n;
            im2col(gy + b * out_ch * out.size(), out_ch, out, in, g, z0, z1, cols.data());
            ConstMapMatrix<T> cm(cols.data(), rows, n);
            if (need_x) gxb.middleCols(z0 * plane_n, n).noalias() = wm * cm;
            if (need_w) gwb.noalias() += xb.middleCols(z0 * plane_n, n) * cm.transpose();
          }
        }
        if (need_x) xn->accumulate(gx);
        if (need_w) wn->accumulate(reduce_partials(gw_partial, batch, wsize));
        if (bn && bn->requires_grad) bn->accumulate(bias_grad(self.grad, batch, out_ch, out.size()));
      });
}

template BasicTensor<float> conv3d(const BasicTensor<float>&, const BasicTensor<float>&, const BasicTensor<float>&,
                                   const ConvGeometry&);
template BasicTensor<double> conv3d(const BasicTensor<double>&, const BasicTensor<double>&,
                                    const BasicTensor<double>&, const ConvGeometry&);
template BasicTensor<float> deconv3d(const BasicTensor<float>&, const BasicTensor<float>&, const BasicTensor<float>&,
                                     const ConvGeometry&);
template BasicTensor<double> deconv3d(const BasicTensor<double>&, const BasicTensor<double>&,
                                      const BasicTensor<double>&, const ConvGeometry&);

}  // namespace flowgen
