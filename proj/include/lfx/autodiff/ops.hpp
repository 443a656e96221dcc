#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "lfx/autodiff/tensor.hpp"
#include "lfx/detail/permute.hpp"

namespace lfx::ad {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatMap = Eigen::Map<const RowMatrix<Scalar>>;

namespace detail {

template <typename Scalar>
void accumulate(Node<Scalar>& parent, const Buffer<Scalar>& g) {
  if (!parent.requires_grad) return;
  if (parent.grad.size() != parent.value.size()) parent.grad = g;
  else parent.grad += g;
}

template <typename Scalar>
void accumulate(Node<Scalar>& parent, Buffer<Scalar>&& g) {
  if (!parent.requires_grad) return;
  if (parent.grad.size() != parent.value.size()) parent.grad = std::move(g);
  else parent.grad += g;
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  auto pa = a.node_ptr(), pb = b.node_ptr();
  return make_result<Scalar>(a.shape(), a.value() + b.value(), "add", {a, b},
                             [pa, pb](const Node<Scalar>& self) {
                               detail::accumulate(*pa, self.grad);
                               detail::accumulate(*pb, self.grad);
                             });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  auto pa = a.node_ptr(), pb = b.node_ptr();
  return make_result<Scalar>(a.shape(), a.value() - b.value(), "sub", {a, b},
                             [pa, pb](const Node<Scalar>& self) {
                               detail::accumulate(*pa, self.grad);
                               detail::accumulate<Scalar>(*pb, -self.grad);
                             });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  auto pa = a.node_ptr(), pb = b.node_ptr();
  return make_result<Scalar>(a.shape(), a.value() * b.value(), "mul", {a, b},
                             [pa, pb](const Node<Scalar>& self) {
                               detail::accumulate<Scalar>(*pa, self.grad * pb->value);
                               detail::accumulate<Scalar>(*pb, self.grad * pa->value);
                             });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar s) {
  auto pa = a.node_ptr();
  return make_result<Scalar>(a.shape(), a.value() * s, "scale", {a},
                             [pa, s](const Node<Scalar>& self) {
                               detail::accumulate<Scalar>(*pa, self.grad * s);
                             });
}

template <typename Scalar>
Tensor<Scalar> leaky_relu(const Tensor<Scalar>& a, Scalar slope = Scalar(0.1)) {
  auto pa = a.node_ptr();
  Buffer<Scalar> out = (a.value() > Scalar(0)).select(a.value(), a.value() * slope);
  return make_result<Scalar>(a.shape(), std::move(out), "leaky_relu", {a},
                             [pa, slope](const Node<Scalar>& self) {
                               Buffer<Scalar> g =
                                   (pa->value > Scalar(0)).select(self.grad, self.grad * slope);
                               detail::accumulate(*pa, std::move(g));
                             });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  auto pa = a.node_ptr();
  Buffer<Scalar> out(1);
  out[0] = a.value().sum();
  return make_result<Scalar>({1}, std::move(out), "sum", {a}, [pa](const Node<Scalar>& self) {
    detail::accumulate<Scalar>(*pa, Buffer<Scalar>::Constant(pa->value.size(), self.grad[0]));
  });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.size()));
}

// Mean absolute error; the subgradient at zero residual is 0.
template <typename Scalar>
Tensor<Scalar> l1_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
  detail::require_same_shape(pred.shape(), target.shape(), "l1_loss");
  auto pp = pred.node_ptr(), pt = target.node_ptr();
  const auto n = static_cast<Scalar>(pred.size());
  Buffer<Scalar> out(1);
  out[0] = (pred.value() - target.value()).abs().sum() / n;
  return make_result<Scalar>({1}, std::move(out), "l1_loss", {pred, target},
                             [pp, pt, n](const Node<Scalar>& self) {
                               Buffer<Scalar> g = (pp->value - pt->value).sign() * (self.grad[0] / n);
                               detail::accumulate(*pp, g);
                               detail::accumulate<Scalar>(*pt, -g);
                             });
}

// ---------------------------------------------------------------- shape ops

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  if (numel(shape) != a.size())
    throw ShapeError("reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
  auto pa = a.node_ptr();
  return make_result<Scalar>(std::move(shape), a.value(), "reshape", {a},
                             [pa](const Node<Scalar>& self) { detail::accumulate(*pa, self.grad); },
                             false);
}

// Output axis k is input axis perm[k]; the reverse pass applies the inverse.
template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& a, const std::vector<std::size_t>& perm) {
  Shape out_shape = lfx::detail::permuted_shape(a.shape(), perm);
  Buffer<Scalar> out(a.value().size());
  lfx::detail::permute_copy(a.value().data(), out.data(), a.shape(), perm);
  auto pa = a.node_ptr();
  return make_result<Scalar>(out_shape, std::move(out), "permute", {a},
                             [pa, perm, out_shape](const Node<Scalar>& self) {
                               if (!pa->requires_grad) return;
                               const auto inv = lfx::detail::inverse_permutation(perm);
                               Buffer<Scalar> g(self.grad.size());
                               lfx::detail::permute_copy(self.grad.data(), g.data(), out_shape, inv);
                               detail::accumulate(*pa, std::move(g));
                             },
                             false);
}

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range");
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t k = 0; k < ref.size(); ++k)
      if (k != axis && p.dim(k) != ref[k])
        throw ShapeError("concat: shape mismatch " + to_string(p.shape()) + " vs " + to_string(ref));
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= ref[k];
  for (std::size_t k = axis + 1; k < ref.size(); ++k) inner *= ref[k];
  const std::size_t out_row = out_shape[axis] * inner;

  Buffer<Scalar> out(static_cast<Eigen::Index>(numel(out_shape)));
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.value().data() + o * w, w, out.data() + o * out_row + offset);
    widths.push_back(w);
    offset += w;
  }
  std::vector<std::shared_ptr<Node<Scalar>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node_ptr());
  return make_result<Scalar>(out_shape, std::move(out), "concat", parts,
                             [nodes, widths, outer, out_row](const Node<Scalar>& self) {
                               std::size_t off = 0;
                               for (std::size_t i = 0; i < nodes.size(); ++i) {
                                 const std::size_t w = widths[i];
                                 if (nodes[i]->requires_grad) {
                                   Buffer<Scalar> g(static_cast<Eigen::Index>(outer * w));
                                   for (std::size_t o = 0; o < outer; ++o)
                                     std::copy_n(self.grad.data() + o * out_row + off, w,
                                                 g.data() + o * w);
                                   detail::accumulate(*nodes[i], g);
                                 }
                                 off += w;
                               }
                             });
}

// ---------------------------------------------------------------- linear algebra

// x[..., K] times w[K, N] -> [..., N].
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& x, const Tensor<Scalar>& w) {
  if (w.rank() != 2 || x.rank() < 1 || x.shape().back() != w.dim(0))
    throw ShapeError("matmul: " + to_string(x.shape()) + " x " + to_string(w.shape()));
  const auto K = static_cast<Eigen::Index>(w.dim(0));
  const auto N = static_cast<Eigen::Index>(w.dim(1));
  const auto M = static_cast<Eigen::Index>(x.size()) / K;
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  Buffer<Scalar> out(M * N);
  MatMap<Scalar>(out.data(), M, N).noalias() =
      ConstMatMap<Scalar>(x.value().data(), M, K) * ConstMatMap<Scalar>(w.value().data(), K, N);
  auto px = x.node_ptr(), pw = w.node_ptr();
  return make_result<Scalar>(out_shape, std::move(out), "matmul", {x, w},
                             [px, pw, M, K, N](const Node<Scalar>& self) {
                               ConstMatMap<Scalar> g(self.grad.data(), M, N);
                               if (px->requires_grad) {
                                 px->ensure_grad();
                                 MatMap<Scalar>(px->grad.data(), M, K).noalias() +=
                                     g * ConstMatMap<Scalar>(pw->value.data(), K, N).transpose();
                               }
                               if (pw->requires_grad) {
                                 pw->ensure_grad();
                                 MatMap<Scalar>(pw->grad.data(), K, N).noalias() +=
                                     ConstMatMap<Scalar>(px->value.data(), M, K).transpose() * g;
                               }
                             });
}

// Batched product a[B, M, K] * b[B, K, N], or b[B, N, K] transposed.
template <typename Scalar>
Tensor<Scalar> bmm(const Tensor<Scalar>& a, const Tensor<Scalar>& b, bool transpose_b = false) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0))
    throw ShapeError("bmm: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const auto B = static_cast<Eigen::Index>(a.dim(0));
  const auto M = static_cast<Eigen::Index>(a.dim(1));
  const auto K = static_cast<Eigen::Index>(a.dim(2));
  const auto N = static_cast<Eigen::Index>(transpose_b ? b.dim(1) : b.dim(2));
  if (static_cast<Eigen::Index>(transpose_b ? b.dim(2) : b.dim(1)) != K)
    throw ShapeError("bmm: inner dims differ " + to_string(a.shape()) + " x " + to_string(b.shape()));
  Buffer<Scalar> out(B * M * N);
  for (Eigen::Index i = 0; i < B; ++i) {
    ConstMatMap<Scalar> A(a.value().data() + i * M * K, M, K);
    MatMap<Scalar> C(out.data() + i * M * N, M, N);
    if (transpose_b)
      C.noalias() = A * ConstMatMap<Scalar>(b.value().data() + i * N * K, N, K).transpose();
    else
      C.noalias() = A * ConstMatMap<Scalar>(b.value().data() + i * K * N, K, N);
  }
  auto pa = a.node_ptr(), pb = b.node_ptr();
  return make_result<Scalar>(
      {a.dim(0), a.dim(1), static_cast<std::size_t>(N)}, std::move(out), "bmm", {a, b},
      [pa, pb, B, M, K, N, transpose_b](const Node<Scalar>& self) {
        if (pa->requires_grad) pa->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        for (Eigen::Index i = 0; i < B; ++i) {
          ConstMatMap<Scalar> G(self.grad.data() + i * M * N, M, N);
          ConstMatMap<Scalar> A(pa->value.data() + i * M * K, M, K);
          if (transpose_b) {
            ConstMatMap<Scalar> Bm(pb->value.data() + i * N * K, N, K);
            if (pa->requires_grad)
              MatMap<Scalar>(pa->grad.data() + i * M * K, M, K).noalias() += G * Bm;
            if (pb->requires_grad)
              MatMap<Scalar>(pb->grad.data() + i * N * K, N, K).noalias() += G.transpose() * A;
          } else {
            ConstMatMap<Scalar> Bm(pb->value.data() + i * K * N, K, N);
            if (pa->requires_grad)
              MatMap<Scalar>(pa->grad.data() + i * M * K, M, K).noalias() += G * Bm.transpose();
            if (pb->requires_grad)
              MatMap<Scalar>(pb->grad.data() + i * K * N, K, N).noalias() += A.transpose() * G;
          }
        }
      });
}

// ---------------------------------------------------------------- normalization

// Normalizes over the last axis: (x - mean) / sqrt(var + eps) * gamma + beta,
// with the biased variance.
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, Scalar eps = Scalar(1e-5)) {
  const std::size_t C = x.shape().back();
  if (gamma.size() != C || beta.size() != C)
    throw ShapeError("layer_norm: affine size must equal last dim " + std::to_string(C));
  const auto rows = static_cast<Eigen::Index>(x.size() / C);
  const auto Ci = static_cast<Eigen::Index>(C);
  ConstMatMap<Scalar> X(x.value().data(), rows, Ci);
  auto xhat = std::make_shared<RowMatrix<Scalar>>(rows, Ci);
  auto inv_std = std::make_shared<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Scalar mu = X.row(r).mean();
    const Scalar var = (X.row(r).array() - mu).square().mean();
    (*inv_std)(r) = Scalar(1) / std::sqrt(var + eps);
    xhat->row(r) = (X.row(r).array() - mu) * (*inv_std)(r);
  }
  Buffer<Scalar> out(rows * Ci);
  MatMap<Scalar> O(out.data(), rows, Ci);
  const auto g = gamma.value().transpose().matrix();
  const auto b = beta.value().transpose().matrix();
  for (Eigen::Index r = 0; r < rows; ++r)
    O.row(r) = xhat->row(r).array() * g.array() + b.array();
  auto px = x.node_ptr(), pg = gamma.node_ptr(), pbeta = beta.node_ptr();
  return make_result<Scalar>(
      x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
      [px, pg, pbeta, xhat, inv_std, rows, Ci](const Node<Scalar>& self) {
        ConstMatMap<Scalar> G(self.grad.data(), rows, Ci);
        if (pg->requires_grad) {
          pg->ensure_grad();
          pg->grad += (G.array() * xhat->array()).colwise().sum().transpose();
        }
        if (pbeta->requires_grad) {
          pbeta->ensure_grad();
          pbeta->grad += G.array().colwise().sum().transpose();
        }
        if (px->requires_grad) {
          px->ensure_grad();
          MatMap<Scalar> DX(px->grad.data(), rows, Ci);
          const auto gam = pg->value.transpose();
          for (Eigen::Index r = 0; r < rows; ++r) {
            Eigen::Array<Scalar, 1, Eigen::Dynamic> dxh = G.row(r).array() * gam;
            const Scalar m1 = dxh.mean();
            const Scalar m2 = (dxh * xhat->row(r).array()).mean();
            DX.row(r).array() += (*inv_std)(r) * (dxh - m1 - xhat->row(r).array() * m2);
          }
        }
      });
}

// Row softmax of x + mask over the last axis; x is [..., Lq, Lk] and mask is
// Lq x Lk with entries 0 or -inf (empty mask = no masking). A row with no
// finite entry cannot be normalized.
template <typename Scalar>
Tensor<Scalar> softmax_masked(const Tensor<Scalar>& x,
                              const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic,
                                                  Eigen::RowMajor>& mask) {
  if (x.rank() < 2) throw ShapeError("softmax_masked: rank must be >= 2");
  const auto Lq = static_cast<Eigen::Index>(x.dim(x.rank() - 2));
  const auto Lk = static_cast<Eigen::Index>(x.dim(x.rank() - 1));
  const bool masked = mask.size() > 0;
  if (masked && (mask.rows() != Lq || mask.cols() != Lk))
    throw ShapeError("softmax_masked: mask is " + std::to_string(mask.rows()) + "x" +
                     std::to_string(mask.cols()) + ", scores end in " + std::to_string(Lq) + "x" +
                     std::to_string(Lk));
  const Eigen::Index mats = static_cast<Eigen::Index>(x.size()) / (Lq * Lk);
  Buffer<Scalar> out(x.value().size());
  for (Eigen::Index m = 0; m < mats; ++m) {
    for (Eigen::Index q = 0; q < Lq; ++q) {
      Eigen::Map<const Buffer<Scalar>> in(x.value().data() + (m * Lq + q) * Lk, Lk);
      Eigen::Map<Buffer<Scalar>> row(out.data() + (m * Lq + q) * Lk, Lk);
      if (masked) row = in + Eigen::Map<const Buffer<Scalar>>(mask.data() + q * Lk, Lk);
      else row = in;
      const Scalar mx = row.maxCoeff();
      if (!std::isfinite(mx))
        throw NumericError("softmax_masked: row " + std::to_string(q) + " is fully masked");
      row = (row - mx).exp();
      row /= row.sum();
    }
  }
  auto px = x.node_ptr();
  return make_result<Scalar>(x.shape(), std::move(out), "softmax_masked", {x},
                             [px, mats, Lq, Lk](const Node<Scalar>& self) {
                               if (!px->requires_grad) return;
                               px->ensure_grad();
                               for (Eigen::Index r = 0; r < mats * Lq; ++r) {
                                 const Scalar* p = self.value.data() + r * Lk;
                                 const Scalar* g = self.grad.data() + r * Lk;
                                 Scalar dot = 0;
                                 for (Eigen::Index k = 0; k < Lk; ++k) dot += p[k] * g[k];
                                 Scalar* d = px->grad.data() + r * Lk;
                                 for (Eigen::Index k = 0; k < Lk; ++k) d[k] += p[k] * (g[k] - dot);
                               }
                             });
}

// ---------------------------------------------------------------- convolution

struct Conv2dOptions {
  std::array<std::size_t, 2> stride{1, 1};
  std::array<std::size_t, 2> dilation{1, 1};
  std::array<std::size_t, 2> padding{0, 0};
};

namespace detail {

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, oh, ow;
  Conv2dOptions o;
  std::size_t patch() const { return cin * kh * kw; }
  // Kernel spans the whole unpadded input: each sample is one column.
  bool full_cover() const {
    return kh == h && kw == w && o.padding[0] == 0 && o.padding[1] == 0;
  }
  // 1x1 kernel, unit stride, no padding: each sample is already a [Cin, HW] matrix.
  bool pointwise() const {
    return kh == 1 && kw == 1 && o.stride[0] == 1 && o.stride[1] == 1 && o.padding[0] == 0 &&
           o.padding[1] == 0;
  }
};

// Valid output range [lo, hi) along one axis for kernel tap k.
inline std::pair<std::size_t, std::size_t> tap_range(std::size_t out, std::size_t in, std::size_t k,
                                                     std::size_t stride, std::size_t dil,
                                                     std::size_t pad) {
  const long off = long(k * dil) - long(pad);
  const long st = long(stride);
  long lo = off >= 0 ? 0 : (-off + st - 1) / st;
  long hi = long(in) - off <= 0 ? 0 : (long(in) - off + st - 1) / st;
  lo = std::min(lo, long(out));
  hi = std::clamp(hi, lo, long(out));
  return {std::size_t(lo), std::size_t(hi)};
}

// cols[(ci*kh + i)*kw + j, s*oh*ow + p] for samples [n0, n0 + ns).
template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, std::size_t n0, std::size_t ns, Scalar* cols) {
  if (g.full_cover()) {
    const auto K = static_cast<Eigen::Index>(g.patch());
    const auto S = static_cast<Eigen::Index>(ns);
    MatMap<Scalar>(cols, K, S) = ConstMatMap<Scalar>(x + n0 * g.patch(), S, K).transpose();
    return;
  }
  const std::size_t plane = g.oh * g.ow;
  const std::size_t width = ns * plane;
  const std::size_t sx = g.o.stride[1];
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t i = 0; i < g.kh; ++i) {
      const auto [ylo, yhi] = tap_range(g.oh, g.h, i, g.o.stride[0], g.o.dilation[0], g.o.padding[0]);
      for (std::size_t j = 0; j < g.kw; ++j) {
        const auto [xlo, xhi] = tap_range(g.ow, g.w, j, sx, g.o.dilation[1], g.o.padding[1]);
        const long xoff = long(j * g.o.dilation[1]) - long(g.o.padding[1]);
        Scalar* row = cols + ((ci * g.kh + i) * g.kw + j) * width;
        for (std::size_t s = 0; s < ns; ++s) {
          const Scalar* img = x + ((n0 + s) * g.cin + ci) * g.h * g.w;
          Scalar* dst = row + s * plane;
          std::fill_n(dst, ylo * g.ow, Scalar(0));
          for (std::size_t oy = ylo; oy < yhi; ++oy) {
            const long iy = long(oy * g.o.stride[0] + i * g.o.dilation[0]) - long(g.o.padding[0]);
            Scalar* d = dst + oy * g.ow;
            const long base = iy * long(g.w) + xoff;
            std::fill_n(d, xlo, Scalar(0));
            if (sx == 1) std::copy(img + base + long(xlo), img + base + long(xhi), d + xlo);
            else
              for (std::size_t ox = xlo; ox < xhi; ++ox) d[ox] = img[base + long(ox * sx)];
            std::fill(d + xhi, d + g.ow, Scalar(0));
          }
          std::fill(dst + yhi * g.ow, dst + plane, Scalar(0));
        }
      }
    }
}

template <typename Scalar>
void col2im(const Scalar* cols, const ConvGeometry& g, std::size_t n0, std::size_t ns, Scalar* dx) {
  if (g.full_cover()) {
    const auto K = static_cast<Eigen::Index>(g.patch());
    const auto S = static_cast<Eigen::Index>(ns);
    MatMap<Scalar>(dx + n0 * g.patch(), S, K) += ConstMatMap<Scalar>(cols, K, S).transpose();
    return;
  }
  const std::size_t plane = g.oh * g.ow;
  const std::size_t width = ns * plane;
  const std::size_t sx = g.o.stride[1];
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t i = 0; i < g.kh; ++i) {
      const auto [ylo, yhi] = tap_range(g.oh, g.h, i, g.o.stride[0], g.o.dilation[0], g.o.padding[0]);
      for (std::size_t j = 0; j < g.kw; ++j) {
        const auto [xlo, xhi] = tap_range(g.ow, g.w, j, sx, g.o.dilation[1], g.o.padding[1]);
        const long xoff = long(j * g.o.dilation[1]) - long(g.o.padding[1]);
        const Scalar* row = cols + ((ci * g.kh + i) * g.kw + j) * width;
        for (std::size_t s = 0; s < ns; ++s) {
          Scalar* img = dx + ((n0 + s) * g.cin + ci) * g.h * g.w;
          const Scalar* src = row + s * plane;
          for (std::size_t oy = ylo; oy < yhi; ++oy) {
            const long iy = long(oy * g.o.stride[0] + i * g.o.dilation[0]) - long(g.o.padding[0]);
            const long base = iy * long(g.w) + xoff;
            const Scalar* sr = src + oy * g.ow;
            for (std::size_t ox = xlo; ox < xhi; ++ox) img[base + long(ox * sx)] += sr[ox];
          }
        }
      }
    }
}

// Samples per im2col chunk so the column buffer stays near 4M entries.
inline std::size_t conv_chunk(const ConvGeometry& g) {
  const std::size_t per = std::max<std::size_t>(1, g.patch() * g.oh * g.ow);
  return std::clamp<std::size_t>((std::size_t{1} << 22) / per, 1, g.n);
}

}  // namespace detail

// Cross-correlation (no kernel flip) of x[N, Cin, H, W] with
// w[Cout, Cin, KH, KW], zero padding, optional bias[Cout].
// Output size per axis: (H + 2*pad - dil*(K-1) - 1) / stride + 1.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& bias,
                      const Conv2dOptions& opt = {}) {
  if (x.rank() != 4 || w.rank() != 4 || w.dim(1) != x.dim(1))
    throw ShapeError("conv2d: input " + to_string(x.shape()) + " kernel " + to_string(w.shape()));
  if (opt.stride[0] == 0 || opt.stride[1] == 0 || opt.dilation[0] == 0 || opt.dilation[1] == 0)
    throw ShapeError("conv2d: stride and dilation must be >= 1");
  detail::ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3),
                         0,        0,        opt};
  const long eff_h = long(opt.dilation[0] * (g.kh - 1) + 1);
  const long eff_w = long(opt.dilation[1] * (g.kw - 1) + 1);
  const long span_h = long(g.h + 2 * opt.padding[0]) - eff_h;
  const long span_w = long(g.w + 2 * opt.padding[1]) - eff_w;
  if (span_h < 0 || span_w < 0)
    throw ShapeError("conv2d: kernel larger than padded input " + to_string(x.shape()));
  g.oh = std::size_t(span_h) / opt.stride[0] + 1;
  g.ow = std::size_t(span_w) / opt.stride[1] + 1;
  const bool has_bias = bias.defined();
  if (has_bias && bias.size() != g.cout) throw ShapeError("conv2d: bias size must equal Cout");

  const auto K = static_cast<Eigen::Index>(g.patch());
  const auto Co = static_cast<Eigen::Index>(g.cout);
  const std::size_t plane = g.oh * g.ow;
  const std::size_t chunk = detail::conv_chunk(g);
  Buffer<Scalar> out(static_cast<Eigen::Index>(g.n * g.cout * plane));
  RowMatrix<Scalar> cols, prod;
  ConstMatMap<Scalar> W(w.value().data(), Co, K);
  const auto P = static_cast<Eigen::Index>(plane);
  if (g.pointwise())
    for (std::size_t s = 0; s < g.n; ++s) {
      MatMap<Scalar> dst(out.data() + s * g.cout * plane, Co, P);
      dst.noalias() = W * ConstMatMap<Scalar>(x.value().data() + s * g.cin * plane, K, P);
      if (has_bias)
        dst.colwise() += Eigen::Map<const Eigen::Vector<Scalar, Eigen::Dynamic>>(bias.value().data(), Co);
    }
  for (std::size_t n0 = 0; n0 < g.n && !g.pointwise(); n0 += chunk) {
    const std::size_t ns = std::min(chunk, g.n - n0);
    const auto width = static_cast<Eigen::Index>(ns * plane);
    cols.resize(K, width);
    detail::im2col(x.value().data(), g, n0, ns, cols.data());
    prod.noalias() = W * cols;
    for (std::size_t s = 0; s < ns; ++s)
      for (std::size_t co = 0; co < g.cout; ++co) {
        Scalar* dst = out.data() + ((n0 + s) * g.cout + co) * plane;
        const Scalar* src = prod.data() + co * width + s * plane;
        const Scalar b = has_bias ? bias.value()[Eigen::Index(co)] : Scalar(0);
        for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + b;
      }
  }

  // A single chunk is kept for the reverse pass instead of being rebuilt.
  std::shared_ptr<const RowMatrix<Scalar>> saved;
  if (chunk >= g.n && !g.pointwise() && w.requires_grad())
    saved = std::make_shared<const RowMatrix<Scalar>>(std::move(cols));
  auto px = x.node_ptr(), pw = w.node_ptr();
  auto pb = has_bias ? bias.node_ptr() : nullptr;
  std::vector<Tensor<Scalar>> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return make_result<Scalar>(
      {g.n, g.cout, g.oh, g.ow}, std::move(out), "conv2d", inputs,
      [px, pw, pb, g, K, Co, plane, chunk, saved](const Node<Scalar>& self) {
        if (pb && pb->requires_grad) {
          pb->ensure_grad();
          for (std::size_t s = 0; s < g.n; ++s)
            for (std::size_t co = 0; co < g.cout; ++co)
              pb->grad[Eigen::Index(co)] +=
                  Eigen::Map<const Buffer<Scalar>>(self.grad.data() + (s * g.cout + co) * plane,
                                                   Eigen::Index(plane))
                      .sum();
        }
        if (!px->requires_grad && !pw->requires_grad) return;
        if (px->requires_grad) px->ensure_grad();
        if (pw->requires_grad) pw->ensure_grad();
        if (g.pointwise()) {
          const auto P = static_cast<Eigen::Index>(plane);
          for (std::size_t s = 0; s < g.n; ++s) {
            ConstMatMap<Scalar> gs(self.grad.data() + s * g.cout * plane, Co, P);
            if (pw->requires_grad)
              MatMap<Scalar>(pw->grad.data(), Co, K).noalias() +=
                  gs * ConstMatMap<Scalar>(px->value.data() + s * g.cin * plane, K, P).transpose();
            if (px->requires_grad)
              MatMap<Scalar>(px->grad.data() + s * g.cin * plane, K, P).noalias() +=
                  ConstMatMap<Scalar>(pw->value.data(), Co, K).transpose() * gs;
          }
          return;
        }
        RowMatrix<Scalar> cols, gout, dcols;
        for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
          const std::size_t ns = std::min(chunk, g.n - n0);
          const auto width = static_cast<Eigen::Index>(ns * plane);
          gout.resize(Co, width);
          for (std::size_t s = 0; s < ns; ++s)
            for (std::size_t co = 0; co < g.cout; ++co)
              std::copy_n(self.grad.data() + ((n0 + s) * g.cout + co) * plane, plane,
                          gout.data() + co * width + s * plane);
          if (pw->requires_grad) {
            if (!saved) {
              cols.resize(K, width);
              detail::im2col(px->value.data(), g, n0, ns, cols.data());
            }
            MatMap<Scalar>(pw->grad.data(), Co, K).noalias() +=
                gout * (saved ? *saved : cols).transpose();
          }
          if (px->requires_grad) {
            dcols.noalias() = ConstMatMap<Scalar>(pw->value.data(), Co, K).transpose() * gout;
            detail::col2im(dcols.data(), g, n0, ns, px->grad.data());
          }
        }
      });
}

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w,
                      const Conv2dOptions& opt = {}) {
  return conv2d(x, w, Tensor<Scalar>(), opt);
}

}  // namespace lfx::ad
