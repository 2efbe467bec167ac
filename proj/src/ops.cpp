#include "flowgen/ops.hpp"

#include <Eigen/Core>
#include <cmath>

#include "flowgen/errors.hpp"

namespace flowgen {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMatrix = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMapMatrix = Eigen::Map<const RowMatrix<T>>;

// Result of matching two shapes under leading-singleton broadcasting. The
// smaller operand repeats with period `period` over the larger one.
struct Broadcast {
  Shape out;
  bool a_small = false;
  bool b_small = false;
  std::size_t period = 0;
};

bool repeats_over_prefix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  Shape padded(big.size() - small.size(), 1);
  padded.insert(padded.end(), small.begin(), small.end());
  std::size_t k = 0;
  while (k < padded.size() && padded[k] == 1 && big[k] != 1) ++k;
  for (std::size_t i = k; i < padded.size(); ++i) {
    if (padded[i] != big[i]) return false;
  }
  return true;
}

Broadcast resolve_broadcast(const Shape& a, const Shape& b) {
  Broadcast r;
  if (a == b) {
    r.out = a;
    r.period = static_cast<std::size_t>(shape_numel(a));
    return r;
  }
  if (shape_numel(b) <= shape_numel(a) && repeats_over_prefix(b, a)) {
    r.out = a;
    r.b_small = true;
    r.period = static_cast<std::size_t>(shape_numel(b));
    return r;
  }
  if (shape_numel(a) < shape_numel(b) && repeats_over_prefix(a, b)) {
    r.out = b;
    r.a_small = true;
    r.period = static_cast<std::size_t>(shape_numel(a));
    return r;
  }
  throw DimensionError("shape mismatch: " + shape_to_string(a) + " vs " + shape_to_string(b));
}

// Folds a full-size gradient onto a repeated operand.
template <typename T>
std::vector<T> fold(std::span<const T> g, std::size_t period) {
  std::vector<T> out(period, T(0));
  for (std::size_t i = 0; i < g.size(); ++i) out[i % period] += g[i];
  return out;
}

template <typename T>
void require_same_rest(const Shape& a, const Shape& b, const char* what) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(what) + ": rank mismatch " + shape_to_string(a) + " vs " +
                         shape_to_string(b));
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (i == 1) continue;
    if (a[i] != b[i]) {
      throw DimensionError(std::string(what) + ": shape mismatch " + shape_to_string(a) + " vs " +
                           shape_to_string(b));
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> elementwise(BinaryOp op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const Broadcast bc = resolve_broadcast(a.shape(), b.shape());
  const auto n = static_cast<std::size_t>(shape_numel(bc.out));
  const std::size_t pa = bc.a_small ? bc.period : n;
  const std::size_t pb = bc.b_small ? bc.period : n;
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<T> out(n);
  switch (op) {
    case BinaryOp::Add:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i % pa] + bd[i % pb];
      break;
    case BinaryOp::Sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i % pa] - bd[i % pb];
      break;
    case BinaryOp::Mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i % pa] * bd[i % pb];
      break;
  }
  static constexpr const char* names[] = {"add", "sub", "mul"};
  auto an = a.node();
  auto bn = b.node();
  return detail::make_result<T>(
      bc.out, std::move(out), {a, b}, names[static_cast<int>(op)],
      [op, an, bn, pa, pb, n](detail::TensorNode<T>& self) {
        const std::span<const T> g = self.grad;
        if (an->requires_grad) {
          std::vector<T> ga(n);
          for (std::size_t i = 0; i < n; ++i) {
            ga[i] = op == BinaryOp::Mul ? g[i] * bn->data[i % pb] : g[i];
          }
          an->accumulate(pa == n ? std::span<const T>(ga) : std::span<const T>(fold<T>(ga, pa)));
        }
        if (bn->requires_grad) {
          std::vector<T> gb(n);
          for (std::size_t i = 0; i < n; ++i) {
            switch (op) {
              case BinaryOp::Add: gb[i] = g[i]; break;
              case BinaryOp::Sub: gb[i] = -g[i]; break;
              case BinaryOp::Mul: gb[i] = g[i] * an->data[i % pa]; break;
            }
          }
          bn->accumulate(pb == n ? std::span<const T>(gb) : std::span<const T>(fold<T>(gb, pb)));
        }
      });
}

template <typename T>
BasicTensor<T> elementwise(UnaryOp op, const BasicTensor<T>& a, T param) {
  const auto ad = a.data();
  const std::size_t n = ad.size();
  std::vector<T> out(n);
  switch (op) {
    case UnaryOp::Neg:
      for (std::size_t i = 0; i < n; ++i) out[i] = -ad[i];
      break;
    case UnaryOp::Exp:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(ad[i]);
      break;
    case UnaryOp::Square:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] * ad[i];
      break;
    case UnaryOp::LeakyRelu:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] >= T(0) ? ad[i] : ad[i] * param;
      break;
  }
  static constexpr const char* names[] = {"neg", "exp", "square", "leaky_relu"};
  auto an = a.node();
  return detail::make_result<T>(
      a.shape(), std::move(out), {a}, names[static_cast<int>(op)],
      [op, an, param](detail::TensorNode<T>& self) {
        const T* x = an->data.data();
        const T* g = self.grad.data();
        const T* y = self.data.data();
        const std::size_t n = an->data.size();
        T* gx = an->grad_buffer().data();
        switch (op) {
          case UnaryOp::Neg:
            for (std::size_t i = 0; i < n; ++i) gx[i] -= g[i];
            break;
          case UnaryOp::Exp:
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * y[i];
            break;
          case UnaryOp::Square:
            for (std::size_t i = 0; i < n; ++i) gx[i] += T(2) * x[i] * g[i];
            break;
          case UnaryOp::LeakyRelu:
            for (std::size_t i = 0; i < n; ++i) gx[i] += x[i] >= T(0) ? g[i] : g[i] * param;
            break;
        }
      });
}

template <typename T>
BasicTensor<T> affine(const BasicTensor<T>& a, T factor, T offset) {
  const auto ad = a.data();
  std::vector<T> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] * factor + offset;
  auto an = a.node();
  return detail::make_result<T>(a.shape(), std::move(out), {a}, "affine",
                                [an, factor](detail::TensorNode<T>& self) {
                                  std::vector<T> gx(self.grad.size());
                                  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = self.grad[i] * factor;
                                  an->accumulate(gx);
                                });
}

template <typename T>
BasicTensor<T> clamp(const BasicTensor<T>& a, T lo, T hi) {
  if (!(lo <= hi)) throw ContractError("clamp requires lo <= hi");
  const auto ad = a.data();
  std::vector<T> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = std::min(std::max(ad[i], lo), hi);
  auto an = a.node();
  return detail::make_result<T>(a.shape(), std::move(out), {a}, "clamp",
                                [an, lo, hi](detail::TensorNode<T>& self) {
                                  const auto& x = an->data;
                                  std::vector<T> gx(x.size());
                                  for (std::size_t i = 0; i < x.size(); ++i) {
                                    gx[i] = (x[i] >= lo && x[i] <= hi) ? self.grad[i] : T(0);
                                  }
                                  an->accumulate(gx);
                                });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  double acc = 0.0;
  for (T v : a.data()) acc += static_cast<double>(v);
  auto an = a.node();
  return detail::make_result<T>({1}, {static_cast<T>(acc)}, {a}, "sum",
                                [an](detail::TensorNode<T>& self) {
                                  an->accumulate(std::vector<T>(an->data.size(), self.grad[0]));
                                });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  return affine(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mse: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
  return mean(square(sub(a, b)));
}

template <typename T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_channels needs at least one input");
  const Shape& first = parts.front().shape();
  if (first.size() < 2) throw DimensionError("concat_channels needs rank >= 2, got " + shape_to_string(first));
  int channels = 0;
  for (const auto& p : parts) {
    require_same_rest<T>(first, p.shape(), "concat_channels");
    channels += p.dim(1);
  }
  const int batch = first[0];
  std::int64_t spatial = 1;
  for (std::size_t i = 2; i < first.size(); ++i) spatial *= first[i];
  Shape out_shape = first;
  out_shape[1] = channels;

  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
  std::vector<int> offsets;
  int offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const int c = p.dim(1);
    const auto src = p.data();
    for (int b = 0; b < batch; ++b) {
      std::copy_n(src.begin() + b * c * spatial, c * spatial,
                  out.begin() + (static_cast<std::int64_t>(b) * channels + offset) * spatial);
    }
    offset += c;
  }

  std::vector<detail::NodePtr<T>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return detail::make_result<T>(
      out_shape, std::move(out), parts, "concat_channels",
      [nodes, offsets, batch, channels, spatial](detail::TensorNode<T>& self) {
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          auto& n = nodes[k];
          if (!n->requires_grad) continue;
          const int c = n->shape[1];
          std::vector<T> g(n->data.size());
          for (int b = 0; b < batch; ++b) {
            std::copy_n(self.grad.begin() + (static_cast<std::int64_t>(b) * channels + offsets[k]) * spatial,
                        c * spatial, g.begin() + b * c * spatial);
          }
          n->accumulate(g);
        }
      });
}

template <typename T>
BasicTensor<T> matmul_channels(const BasicTensor<T>& a, const BasicTensor<T>& w, const BasicTensor<T>& bias) {
  if (a.rank() < 2 || w.rank() != 2) {
    throw DimensionError("matmul_channels: expected a [B, C, ...] and w [O, C], got " +
                         shape_to_string(a.shape()) + " and " + shape_to_string(w.shape()));
  }
  const int batch = a.dim(0);
  const int in_ch = a.dim(1);
  const int out_ch = w.dim(0);
  if (w.dim(1) != in_ch) {
    throw DimensionError("matmul_channels: channel extent " + std::to_string(in_ch) +
                         " does not match weight " + shape_to_string(w.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_ch)) {
    throw DimensionError("matmul_channels: bias " + shape_to_string(bias.shape()) +
                         " does not match weight " + shape_to_string(w.shape()));
  }
  const std::int64_t spatial = a.numel() / (static_cast<std::int64_t>(batch) * in_ch);
  Shape out_shape = a.shape();
  out_shape[1] = out_ch;
  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
  ConstMapMatrix<T> wm(w.data().data(), out_ch, in_ch);
  for (int b = 0; b < batch; ++b) {
    ConstMapMatrix<T> xb(a.data().data() + b * in_ch * spatial, in_ch, spatial);
    MapMatrix<T> yb(out.data() + b * out_ch * spatial, out_ch, spatial);
    yb.noalias() = wm * xb;
    if (bias.defined()) {
      for (int o = 0; o < out_ch; ++o) yb.row(o).array() += bias.data()[static_cast<std::size_t>(o)];
    }
  }

  auto an = a.node();
  auto wn = w.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  return detail::make_result<T>(
      out_shape, std::move(out), {a, w, bias}, "matmul_channels",
      [an, wn, bn, batch, in_ch, out_ch, spatial](detail::TensorNode<T>& self) {
        ConstMapMatrix<T> wm(wn->data.data(), out_ch, in_ch);
        if (an->requires_grad) {
          std::vector<T> ga(an->data.size());
          for (int b = 0; b < batch; ++b) {
            ConstMapMatrix<T> gb(self.grad.data() + b * out_ch * spatial, out_ch, spatial);
            MapMatrix<T>(ga.data() + b * in_ch * spatial, in_ch, spatial).noalias() = wm.transpose() * gb;
          }
          an->accumulate(ga);
        }
        if (wn->requires_grad) {
          RowMatrix<T> gw = RowMatrix<T>::Zero(out_ch, in_ch);
          for (int b = 0; b < batch; ++b) {
            ConstMapMatrix<T> gb(self.grad.data() + b * out_ch * spatial, out_ch, spatial);
            ConstMapMatrix<T> xb(an->data.data() + b * in_ch * spatial, in_ch, spatial);
            gw.noalias() += gb * xb.transpose();
          }
          wn->accumulate(std::span<const T>(gw.data(), static_cast<std::size_t>(gw.size())));
        }
        if (bn && bn->requires_grad) {
          std::vector<T> gbias(static_cast<std::size_t>(out_ch), T(0));
          for (int b = 0; b < batch; ++b) {
            for (int o = 0; o < out_ch; ++o) {
              const T* row = self.grad.data() + (b * out_ch + o) * spatial;
              T acc(0);
              for (std::int64_t s = 0; s < spatial; ++s) acc += row[s];
              gbias[static_cast<std::size_t>(o)] += acc;
            }
          }
          bn->accumulate(gbias);
        }
      });
}

#define FLOWGEN_INSTANTIATE_OPS(T)                                                              \
  template BasicTensor<T> elementwise(BinaryOp, const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> elementwise(UnaryOp, const BasicTensor<T>&, T);                      \
  template BasicTensor<T> affine(const BasicTensor<T>&, T, T);                                 \
  template BasicTensor<T> clamp(const BasicTensor<T>&, T, T);                                  \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                          \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                         \
  template BasicTensor<T> mse(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>&);                 \
  template BasicTensor<T> matmul_channels(const BasicTensor<T>&, const BasicTensor<T>&,        \
                                          const BasicTensor<T>&);

FLOWGEN_INSTANTIATE_OPS(float)
FLOWGEN_INSTANTIATE_OPS(double)

}  // namespace flowgen
