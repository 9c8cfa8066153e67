#include "cvc/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace cvc {
namespace {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapC = Eigen::Map<const Mat<T>>;
template <class T>
using MapM = Eigen::Map<Mat<T>>;

template <class T>
bool wants(const Node<T>& n, std::size_t i) {
  return n.inputs[i]->requires_grad;
}

template <class T>
std::vector<T>& grad_of(Node<T>& n, std::size_t i) {
  return n.inputs[i]->ensure_grad();
}

template <class T>
const std::vector<T>& value_of(const Node<T>& n, std::size_t i) {
  return *n.inputs[i]->value;
}

// Elementwise unary op: f gives the value, df(x, y) the local derivative.
template <class T, class F, class DF>
BasicTensor<T> unary(const BasicTensor<T>& a, F f, DF df, const char* name) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return BasicTensor<T>::from_op(
      a.shape(), std::move(out), {a},
      [df](Node<T>& n) {
        const auto& xv = value_of(n, 0);
        const auto& yv = *n.value;
        auto& g = grad_of(n, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * df(xv[i], yv[i]);
      },
      name);
}

}  // namespace

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return BasicTensor<T>::from_op(
      a.shape(), std::move(out), {a, b},
      [](Node<T>& n) {
        for (std::size_t k = 0; k < 2; ++k) {
          if (!wants(n, k)) continue;
          auto& g = grad_of(n, k);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
      },
      "add");
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return BasicTensor<T>::from_op(
      a.shape(), std::move(out), {a, b},
      [](Node<T>& n) {
        if (wants(n, 0)) {
          auto& g = grad_of(n, 0);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
        if (wants(n, 1)) {
          auto& g = grad_of(n, 1);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
        }
      },
      "sub");
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return BasicTensor<T>::from_op(
      a.shape(), std::move(out), {a, b},
      [](Node<T>& n) {
        const auto& xv = value_of(n, 0);
        const auto& yv = value_of(n, 1);
        if (wants(n, 0)) {
          auto& g = grad_of(n, 0);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * yv[i];
        }
        if (wants(n, 1)) {
          auto& g = grad_of(n, 1);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * xv[i];
        }
      },
      "mul");
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T s) {
  return unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; }, "scale");
}

template <class T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, T s) {
  return unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); }, "add_scalar");
}

template <class T>
BasicTensor<T> exp(const BasicTensor<T>& a) {
  return unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; }, "exp");
}

template <class T>
BasicTensor<T> log(const BasicTensor<T>& a) {
  return unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; }, "log");
}

template <class T>
BasicTensor<T> square(const BasicTensor<T>& a) {
  return unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; }, "square");
}

template <class T>
BasicTensor<T> softplus(const BasicTensor<T>& a) {
  return unary(
      a,
      [](T x) { return x > T(20) ? x : std::log1p(std::exp(x)); },
      [](T x, T) { return T(1) / (T(1) + std::exp(-x)); }, "softplus");
}

template <class T>
BasicTensor<T> gelu(const BasicTensor<T>& a) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k = T(0.044715);
  return unary(
      a,
      [](T x) { return T(0.5) * x * (T(1) + std::tanh(c * (x + k * x * x * x))); },
      [](T x, T) {
        const T u = c * (x + k * x * x * x);
        const T t = std::tanh(u);
        const T du = c * (T(1) + T(3) * k * x * x);
        return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
      },
      "gelu");
}

template <class T>
BasicTensor<T> clamp(const BasicTensor<T>& a, T lo, T hi) {
  return unary(
      a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); }, "clamp");
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  return BasicTensor<T>::from_op(
      {}, {s}, {a},
      [](Node<T>& n) {
        auto& g = grad_of(n, 0);
        const T d = n.grad[0];
        for (auto& v : g) v += d;
      },
      "sum");
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b, bool transpose_b) {
  const bool batched = a.rank() == 3;
  if (!((a.rank() == 2 && b.rank() == 2) || (a.rank() == 3 && b.rank() == 3)))
    throw DimensionError("matmul: expected two 2-D or two 3-D operands, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t batch = batched ? a.dim(0) : 1;
  const std::size_t off = batched ? 1 : 0;
  if (batched && b.dim(0) != batch)
    throw DimensionError("matmul: batch mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  const std::size_t m = a.dim(off), k = a.dim(off + 1);
  const std::size_t bk = transpose_b ? b.dim(off + 1) : b.dim(off);
  const std::size_t n = transpose_b ? b.dim(off) : b.dim(off + 1);
  if (bk != k)
    throw DimensionError("matmul: inner extents differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()) + (transpose_b ? " (b transposed)" : ""));

  Shape out_shape = batched ? Shape{batch, m, n} : Shape{m, n};
  std::vector<T> out(batch * m * n);
  const T* ap = a.data().data();
  const T* bp = b.data().data();
  for (std::size_t s = 0; s < batch; ++s) {
    MapC<T> A(ap + s * m * k, m, k);
    MapM<T> C(out.data() + s * m * n, m, n);
    if (transpose_b) {
      MapC<T> B(bp + s * n * k, n, k);
      C.noalias() = A * B.transpose();
    } else {
      MapC<T> B(bp + s * k * n, k, n);
      C.noalias() = A * B;
    }
  }

  return BasicTensor<T>::from_op(
      std::move(out_shape), std::move(out), {a, b},
      [batch, m, k, n, transpose_b](Node<T>& nd) {
        const T* av = value_of(nd, 0).data();
        const T* bv = value_of(nd, 1).data();
        const T* gv = nd.grad.data();
        const bool ga = wants(nd, 0), gb = wants(nd, 1);
        T* da = ga ? grad_of(nd, 0).data() : nullptr;
        T* db = gb ? grad_of(nd, 1).data() : nullptr;
        for (std::size_t s = 0; s < batch; ++s) {
          MapC<T> G(gv + s * m * n, m, n);
          MapC<T> A(av + s * m * k, m, k);
          if (transpose_b) {
            // C = A * B^T with B [n,k]: dA = G * B, dB = G^T * A
            MapC<T> B(bv + s * n * k, n, k);
            if (ga) MapM<T>(da + s * m * k, m, k).noalias() += G * B;
            if (gb) MapM<T>(db + s * n * k, n, k).noalias() += G.transpose() * A;
          } else {
            MapC<T> B(bv + s * k * n, k, n);
            if (ga) MapM<T>(da + s * m * k, m, k).noalias() += G * B.transpose();
            if (gb) MapM<T>(db + s * k * n, k, n).noalias() += A.transpose() * G;
          }
        }
      },
      "matmul");
}

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis) {
  if (axis >= x.rank())
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  const std::size_t len = x.dim(axis);
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

  std::vector<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      T z = 0;
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      const T inv = T(1) / z;
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] *= inv;
    }
  }
  return BasicTensor<T>::from_op(
      x.shape(), std::move(out), {x},
      [outer, inner, len](Node<T>& n) {
        const auto& y = *n.value;
        auto& g = grad_of(n, 0);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T dot = 0;
            for (std::size_t j = 0; j < len; ++j)
              dot += n.grad[base + j * inner] * y[base + j * inner];
            for (std::size_t j = 0; j < len; ++j) {
              const std::size_t p = base + j * inner;
              g[p] += y[p] * (n.grad[p] - dot);
            }
          }
        }
      },
      "softmax");
}

template <class T>
BasicTensor<T> layernorm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                         const BasicTensor<T>& bias, T eps) {
  if (x.rank() == 0) throw DimensionError("layernorm: scalar input");
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d)
    throw DimensionError("layernorm: gain/bias must have " + std::to_string(d) + " elements");
  const std::size_t rows = x.numel() / d;
  auto xv = x.data();
  auto gv = gain.data();
  auto bv = bias.data();

  std::vector<T> out(x.numel());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }

  return BasicTensor<T>::from_op(
      x.shape(), std::move(out), {x, gain, bias},
      [rows, d, xhat, rstd](Node<T>& n) {
        const auto& gv = value_of(n, 1);
        if (wants(n, 1) || wants(n, 2)) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
              const T g = n.grad[r * d + j];
              if (wants(n, 1)) grad_of(n, 1)[j] += g * (*xhat)[r * d + j];
              if (wants(n, 2)) grad_of(n, 2)[j] += g;
            }
          }
        }
        if (!wants(n, 0)) return;
        auto& dx = grad_of(n, 0);
        for (std::size_t r = 0; r < rows; ++r) {
          T s1 = 0, s2 = 0;
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = n.grad[r * d + j] * gv[j];
            s1 += dh;
            s2 += dh * (*xhat)[r * d + j];
          }
          const T inv_d = T(1) / static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = n.grad[r * d + j] * gv[j];
            dx[r * d + j] += (*rstd)[r] * (dh - inv_d * s1 - (*xhat)[r * d + j] * inv_d * s2);
          }
        }
      },
      "layernorm");
}

template <class T>
BasicTensor<T> broadcast_rows(const BasicTensor<T>& v, std::size_t rows) {
  const std::size_t n = v.numel();
  std::vector<T> out(rows * n);
  auto vv = v.data();
  for (std::size_t r = 0; r < rows; ++r) std::copy(vv.begin(), vv.end(), out.begin() + r * n);
  return BasicTensor<T>::from_op(
      {rows, n}, std::move(out), {v},
      [rows, n](Node<T>& nd) {
        auto& g = grad_of(nd, 0);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) g[j] += nd.grad[r * n + j];
      },
      "broadcast_rows");
}

template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  auto y = matmul(x, w);
  return add(y, broadcast_rows(b, y.dim(0)));
}

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  return BasicTensor<T>::from_op_shared(
      std::move(shape), x.node()->value, {x},
      [](Node<T>& n) {
        auto& g = grad_of(n, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
      },
      "reshape");
}

template <class T>
BasicTensor<T> gather(const BasicTensor<T>& x, std::vector<std::size_t> index, Shape out_shape) {
  if (shape_numel(out_shape) != index.size())
    throw DimensionError("gather: index count does not match " + shape_str(out_shape));
  const std::size_t n = x.numel();
  std::vector<T> out(index.size());
  auto xv = x.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= n) throw DimensionError("gather: index out of range");
    out[i] = xv[index[i]];
  }
  auto idx = std::make_shared<const std::vector<std::size_t>>(std::move(index));
  return BasicTensor<T>::from_op(
      std::move(out_shape), std::move(out), {x},
      [idx](Node<T>& nd) {
        auto& g = grad_of(nd, 0);
        const auto& ix = *idx;
        for (std::size_t i = 0; i < ix.size(); ++i) g[ix[i]] += nd.grad[i];
      },
      "gather");
}

template <class T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw DimensionError("permute: axis count mismatch");
  std::vector<bool> used(r, false);
  for (auto a : axes) {
    if (a >= r || used[a]) throw DimensionError("permute: invalid axis list");
    used[a] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(axes[i]);
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.dim(i);

  std::vector<std::size_t> index(x.numel());
  std::vector<std::size_t> counter(r, 0);
  for (std::size_t flat = 0; flat < index.size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += counter[i] * in_stride[axes[i]];
    index[flat] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++counter[i] < out_shape[i]) break;
      counter[i] = 0;
    }
  }
  return gather(x, std::move(index), std::move(out_shape));
}

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("transpose: expected 2-D, got " + shape_str(x.shape()));
  return permute(x, {1, 0});
}

namespace {

void check_patch_grid(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw) {
  if (kh == 0 || kw == 0 || h % kh != 0 || w % kw != 0)
    throw DimensionError("patch grid " + std::to_string(h) + "x" + std::to_string(w) +
                         " is not divisible by kernel " + std::to_string(kh) + "x" +
                         std::to_string(kw));
}

// For patch p = (py, px) and feature f = (c, dy, dx): source offset in [C,H,W].
std::vector<std::size_t> patch_index(std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
                                     std::size_t kw) {
  const std::size_t ph = h / kh, pw = w / kw, feat = c * kh * kw;
  std::vector<std::size_t> index(ph * pw * feat);
  std::size_t o = 0;
  for (std::size_t py = 0; py < ph; ++py)
    for (std::size_t px = 0; px < pw; ++px)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t dy = 0; dy < kh; ++dy)
          for (std::size_t dx = 0; dx < kw; ++dx)
            index[o++] = (ch * h + py * kh + dy) * w + px * kw + dx;
  return index;
}

}  // namespace

template <class T>
BasicTensor<T> patchify(const BasicTensor<T>& x, std::size_t kh, std::size_t kw) {
  if (x.rank() != 3) throw DimensionError("patchify: expected [C,H,W], got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  check_patch_grid(h, w, kh, kw);
  return gather(x, patch_index(c, h, w, kh, kw), {(h / kh) * (w / kw), c * kh * kw});
}

template <class T>
BasicTensor<T> unpatchify(const BasicTensor<T>& patches, std::size_t channels, std::size_t height,
                          std::size_t width, std::size_t kh, std::size_t kw) {
  check_patch_grid(height, width, kh, kw);
  const Shape expect{(height / kh) * (width / kw), channels * kh * kw};
  if (patches.shape() != expect)
    throw DimensionError("unpatchify: expected " + shape_str(expect) + ", got " +
                         shape_str(patches.shape()));
  const auto fwd = patch_index(channels, height, width, kh, kw);
  std::vector<std::size_t> inv(fwd.size());
  for (std::size_t i = 0; i < fwd.size(); ++i) inv[fwd[i]] = i;
  return gather(patches, std::move(inv), {channels, height, width});
}

#define CVC_INSTANTIATE_OPS(T)                                                                 \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                     \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                                \
  template BasicTensor<T> exp(const BasicTensor<T>&);                                          \
  template BasicTensor<T> log(const BasicTensor<T>&);                                          \
  template BasicTensor<T> square(const BasicTensor<T>&);                                       \
  template BasicTensor<T> softplus(const BasicTensor<T>&);                                     \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                         \
  template BasicTensor<T> clamp(const BasicTensor<T>&, T, T);                                  \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                          \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                         \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&, bool);          \
  template BasicTensor<T> softmax(const BasicTensor<T>&, std::size_t);                         \
  template BasicTensor<T> layernorm(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                    const BasicTensor<T>&, T);                                 \
  template BasicTensor<T> broadcast_rows(const BasicTensor<T>&, std::size_t);                  \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                 const BasicTensor<T>&);                                       \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                               \
  template BasicTensor<T> permute(const BasicTensor<T>&, const std::vector<std::size_t>&);     \
  template BasicTensor<T> gather(const BasicTensor<T>&, std::vector<std::size_t>, Shape);      \
  template BasicTensor<T> patchify(const BasicTensor<T>&, std::size_t, std::size_t);           \
  template BasicTensor<T> unpatchify(const BasicTensor<T>&, std::size_t, std::size_t,          \
                                     std::size_t, std::size_t, std::size_t);                   \
  template BasicTensor<T> transpose(const BasicTensor<T>&);

CVC_INSTANTIATE_OPS(float)
CVC_INSTANTIATE_OPS(double)

}  // namespace cvc
