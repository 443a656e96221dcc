#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "lfx/autodiff/ops.hpp"
#include "lfx/autodiff/parameters.hpp"
#include "lfx/light_field.hpp"
#include "lfx/model/config.hpp"
#include "lfx/model/xmask.hpp"

// Feature tensors are [N, C, U, V, Y, X]: a batch of light fields in the
// canonical order with a leading batch axis.
namespace lfx::model {

using ad::ParameterStore;
using ad::Shape;
using ad::Tensor;

enum class Init { Kaiming, Xavier, Zero, One };

// Deterministic parameter initialization from a seeded 64-bit engine.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed, double slope = 0.1) : rng_(seed), slope_(slope) {}

  template <typename Scalar>
  ad::Buffer<Scalar> make(std::size_t n, Init kind, std::size_t fan_in, std::size_t fan_out) {
    ad::Buffer<Scalar> b(static_cast<Eigen::Index>(n));
    double bound = 0.0;
    switch (kind) {
      case Init::Zero: b.setZero(); return b;
      case Init::One: b.setOnes(); return b;
      case Init::Kaiming:
        // Uniform fan-in scaling with the LeakyReLU gain.
        bound = std::sqrt(3.0) * std::sqrt(2.0 / (1.0 + slope_ * slope_)) /
                std::sqrt(double(std::max<std::size_t>(fan_in, 1)));
        break;
      case Init::Xavier:
        bound = std::sqrt(6.0 / double(std::max<std::size_t>(fan_in + fan_out, 1)));
        break;
    }
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = static_cast<Scalar>(dist(rng_));
    return b;
  }

 private:
  std::mt19937_64 rng_;
  double slope_;
};

template <typename Scalar>
void register_conv(ParameterStore<Scalar>& store, const std::string& name, std::size_t cout,
                   std::size_t cin, std::size_t kh, std::size_t kw, Initializer& init,
                   Init kind = Init::Kaiming) {
  store.add(name + ".w", {cout, cin, kh, kw},
            init.make<Scalar>(cout * cin * kh * kw, kind, cin * kh * kw, cout * kh * kw));
  store.add(name + ".b", {cout}, ad::Buffer<Scalar>::Zero(static_cast<Eigen::Index>(cout)));
}

// Feature-tensor axis of each light-field axis (u=1..x=4 -> 2..5).
inline std::vector<std::size_t> plane_permutation(SubspaceId id) {
  const auto a = axes_of(id);
  return {0, a.batch_outer + 1, a.batch_inner + 1, 1, a.rows + 1, a.cols + 1};
}

// [N, C, U, V, Y, X] -> [N * batch, C, plane_rows, plane_cols].
template <typename Scalar>
Tensor<Scalar> to_planes(const Tensor<Scalar>& f, SubspaceId id) {
  if (f.rank() != 6) throw ShapeError("to_planes: expected [N,C,U,V,Y,X], got " + ad::to_string(f.shape()));
  auto p = ad::permute(f, plane_permutation(id));
  const auto& s = p.shape();
  return ad::reshape(p, {s[0] * s[1] * s[2], s[3], s[4], s[5]});
}

// Inverse of to_planes; `like` supplies N, U, V, Y, X (channels come from p).
template <typename Scalar>
Tensor<Scalar> from_planes(const Tensor<Scalar>& p, SubspaceId id, const Shape& like) {
  const auto perm = plane_permutation(id);
  const Shape viewed = {like[0], like[perm[1]], like[perm[2]], p.dim(1), like[perm[4]],
                        like[perm[5]]};
  auto r = ad::reshape(p, viewed);
  return ad::permute(r, lfx::detail::inverse_permutation(perm));
}

template <typename Scalar>
Tensor<Scalar> pointwise_conv(const Tensor<Scalar>& f, const ParameterStore<Scalar>& store,
                              const std::string& name) {
  const auto& w = store.at(name + ".w");
  Shape flat = {f.dim(0), f.dim(1), ad::numel(f.shape()) / (f.dim(0) * f.dim(1)), 1};
  auto y = ad::conv2d(ad::reshape(f, flat), w, store.at(name + ".b"));
  Shape out = f.shape();
  out[1] = w.dim(0);
  return ad::reshape(y, out);
}

// 3x3 convolution on every sub-aperture image.
template <typename Scalar>
Tensor<Scalar> sai_conv(const Tensor<Scalar>& f, const ParameterStore<Scalar>& store,
                        const std::string& name) {
  const auto& w = store.at(name + ".w");
  ad::Conv2dOptions o;
  o.padding = {w.dim(2) / 2, w.dim(3) / 2};
  auto y = ad::conv2d(to_planes(f, SubspaceId::Sai), w, store.at(name + ".b"), o);
  return from_planes(y, SubspaceId::Sai, f.shape());
}

// Spatial kernel width of the EPI/VSI branches: A rounded up to odd.
inline std::size_t line_kernel_width(std::size_t angular) { return 2 * (angular / 2) + 1; }

inline bool is_line_subspace(SubspaceId id) {
  return id != SubspaceId::Sai && id != SubspaceId::MacPI;
}

inline std::vector<SubspaceId> branch_ids(const C42BlockConfig& cfg) {
  std::vector<SubspaceId> ids = {SubspaceId::Sai, SubspaceId::MacPI, SubspaceId::EpiUX,
                                 SubspaceId::EpiVY};
  if (cfg.use_vsi) {
    ids.push_back(SubspaceId::VsiVX);
    ids.push_back(SubspaceId::VsiUY);
  }
  return ids;
}

template <typename Scalar>
void register_branch(ParameterStore<Scalar>& store, const std::string& prefix, SubspaceId id,
                     const C42BlockConfig& cfg, Initializer& init) {
  const std::size_t C = cfg.channels, A = cfg.angular;
  switch (id) {
    case SubspaceId::Sai: register_conv(store, prefix, C, C, 3, 3, init); break;
    case SubspaceId::MacPI: register_conv(store, prefix, C * A * A, C, A, A, init); break;
    default: register_conv(store, prefix, C * A, C, A, line_kernel_width(A), init); break;
  }
}

// Subspace-specific convolution of one C42 branch, followed by
// channel-to-angle where the kernel consumed an angular axis.
//  SAI:     3x3 on y-x planes.
//  MacPI:   AxA, stride A on u-v planes, C -> C*A*A, then C2A.
//  EPI/VSI: A x w on (angle, space) planes covering the whole angular axis,
//           C -> C*A, then C2A along that angle.
template <typename Scalar>
Tensor<Scalar> branch_forward(const Tensor<Scalar>& f, SubspaceId id,
                              const ParameterStore<Scalar>& store, const std::string& prefix,
                              const C42BlockConfig& cfg) {
  const std::size_t C = f.dim(1);
  if (C != cfg.channels) throw ShapeError("branch_forward: channel count differs from config");
  if (f.dim(2) != cfg.angular || f.dim(3) != cfg.angular)
    throw ShapeError("branch_forward: angular grid must be " + std::to_string(cfg.angular) + "x" +
                     std::to_string(cfg.angular));
  const auto& w = store.at(prefix + ".w");
  const auto& b = store.at(prefix + ".b");
  auto planes = to_planes(f, id);
  ad::Conv2dOptions o;
  switch (id) {
    case SubspaceId::Sai: {
      o.padding = {1, 1};
      return from_planes(ad::conv2d(planes, w, b, o), id, f.shape());
    }
    case SubspaceId::MacPI: {
      o.stride = {cfg.angular, cfg.angular};
      auto y = ad::conv2d(planes, w, b, o);  // [NB, C*A*A, 1, 1]
      auto c2a = ad::reshape(y, {y.dim(0), C, cfg.angular, cfg.angular});
      return from_planes(c2a, id, f.shape());
    }
    default: {
      o.stride = {cfg.angular, 1};
      o.padding = {0, line_kernel_width(cfg.angular) / 2};
      auto y = ad::conv2d(planes, w, b, o);  // [NB, C*A, 1, L]
      auto c2a = ad::reshape(y, {y.dim(0), C, cfg.angular, y.dim(3)});
      return from_planes(c2a, id, f.shape());
    }
  }
}

template <typename Scalar>
void register_c42_block(ParameterStore<Scalar>& store, const std::string& prefix,
                        const C42BlockConfig& cfg, Initializer& init) {
  const std::size_t C = cfg.channels;
  const auto ids = branch_ids(cfg);
  for (auto id : ids) {
    const std::string bp = prefix + "." + std::string(name(id));
    register_branch(store, bp + ".conv", id, cfg, init);
    register_conv(store, bp + ".mix", C, C, 1, 1, init);
  }
  register_conv(store, prefix + ".fuse", C, C * ids.size(), 1, 1, init);
  register_conv(store, prefix + ".out", C, C, 3, 3, init, Init::Zero);
}

// Each branch: subspace conv (+C2A) -> LeakyReLU -> 1x1 -> LeakyReLU. Branch
// outputs are concatenated, fused by 1x1 -> LeakyReLU -> 3x3 and added to the
// block input.
template <typename Scalar>
Tensor<Scalar> c42_block(const Tensor<Scalar>& f, const ParameterStore<Scalar>& store,
                         const std::string& prefix, const C42BlockConfig& cfg) {
  const auto slope = static_cast<Scalar>(cfg.slope);
  std::vector<Tensor<Scalar>> outs;
  for (auto id : branch_ids(cfg)) {
    const std::string bp = prefix + "." + std::string(name(id));
    auto y = ad::leaky_relu(branch_forward(f, id, store, bp + ".conv", cfg), slope);
    y = ad::leaky_relu(pointwise_conv(y, store, bp + ".mix"), slope);
    outs.push_back(y);
  }
  auto fused = ad::leaky_relu(pointwise_conv(ad::concat(outs, 1), store, prefix + ".fuse"), slope);
  return ad::add(sai_conv(fused, store, prefix + ".out"), f);
}

// ---------------------------------------------------------------- attention

template <typename Scalar>
void register_mhxa(ParameterStore<Scalar>& store, const std::string& prefix, std::size_t C,
                   Initializer& init) {
  const auto Ci = static_cast<Eigen::Index>(C);
  store.add(prefix + ".ln.gamma", {C}, ad::Buffer<Scalar>::Ones(Ci));
  store.add(prefix + ".ln.beta", {C}, ad::Buffer<Scalar>::Zero(Ci));
  store.add(prefix + ".wq", {C, C}, init.make<Scalar>(C * C, Init::Xavier, C, C));
  store.add(prefix + ".wk", {C, C}, init.make<Scalar>(C * C, Init::Xavier, C, C));
  store.add(prefix + ".wv", {C, C}, init.make<Scalar>(C * C, Init::Xavier, C, C));
  store.add(prefix + ".wo", {C, C}, init.make<Scalar>(C * C, Init::Zero, C, C));
}

template <typename Scalar>
struct MHXAWeights {
  Tensor<Scalar> gamma, beta, wq, wk, wv, wo;

  static MHXAWeights from(const ParameterStore<Scalar>& store, const std::string& prefix) {
    return {store.at(prefix + ".ln.gamma"), store.at(prefix + ".ln.beta"), store.at(prefix + ".wq"),
            store.at(prefix + ".wk"),       store.at(prefix + ".wv"),      store.at(prefix + ".wo")};
  }
};

// Multi-head masked self-attention over tokens [B, L, C]:
// V = T, Q = K = LayerNorm(T); per head X = softmax(Q Wq (K Wk)^T / sqrt(C/H) + M),
// head = X V Wv; heads are concatenated, projected by Wo and added to T.
template <typename Scalar>
Tensor<Scalar> mhxa(const Tensor<Scalar>& tokens, const AttentionMask& mask,
                    const MHXAWeights<Scalar>& w, std::size_t heads, Scalar eps = Scalar(1e-5)) {
  if (tokens.rank() != 3) throw ShapeError("mhxa: tokens must be [B, L, C]");
  const std::size_t B = tokens.dim(0), L = tokens.dim(1), C = tokens.dim(2);
  if (heads == 0 || C % heads != 0)
    throw ShapeError("mhxa: channels " + std::to_string(C) + " not divisible by heads " +
                     std::to_string(heads));
  if (mask.size() > 0 && (std::size_t(mask.rows()) != L || std::size_t(mask.cols()) != L))
    throw ShapeError("mhxa: mask size differs from sequence length " + std::to_string(L));
  const std::size_t d = C / heads;
  auto split = [&](const Tensor<Scalar>& t) {
    auto r = ad::reshape(t, {B, L, heads, d});
    return ad::reshape(ad::permute(r, {0, 2, 1, 3}), {B * heads, L, d});
  };
  auto normed = ad::layer_norm(tokens, w.gamma, w.beta, eps);
  auto q = split(ad::matmul(normed, w.wq));
  auto k = split(ad::matmul(normed, w.wk));
  auto v = split(ad::matmul(tokens, w.wv));
  auto scores = ad::scale(ad::bmm(q, k, true), Scalar(1) / std::sqrt(static_cast<Scalar>(d)));
  auto attn = ad::softmax_masked(scores, mask_as<Scalar>(mask));
  auto o = ad::bmm(attn, v);
  auto merged = ad::reshape(ad::permute(ad::reshape(o, {B, heads, L, d}), {0, 2, 1, 3}), {B, L, C});
  return ad::add(ad::matmul(merged, w.wo), tokens);
}

enum class EpiPass { UX, VY };

// Sequence axes (angle, same-axis space) and batch axes for each pass.
inline std::vector<std::size_t> epi_token_permutation(EpiPass pass) {
  // UX: [N, V, Y, U, X, C]; VY: [N, U, X, V, Y, C]
  return pass == EpiPass::UX ? std::vector<std::size_t>{0, 3, 4, 2, 5, 1}
                             : std::vector<std::size_t>{0, 2, 5, 3, 4, 1};
}

// One X-masked transformer on the chosen EPI subspace.
template <typename Scalar>
Tensor<Scalar> epi_attention(const Tensor<Scalar>& f, EpiPass pass, const MHXAWeights<Scalar>& w,
                             const MHXAConfig& cfg) {
  const auto perm = epi_token_permutation(pass);
  auto t = ad::permute(f, perm);
  const Shape ts = t.shape();
  const std::size_t S = ts[3], L = ts[4];
  auto tokens = ad::reshape(t, {ts[0] * ts[1] * ts[2], S * L, ts[5]});
  auto y = mhxa(tokens, build_xmask(S, L, cfg.d_max), w, cfg.heads, static_cast<Scalar>(cfg.eps));
  return ad::permute(ad::reshape(y, ts), lfx::detail::inverse_permutation(perm));
}

template <typename Scalar>
void register_epixformer(ParameterStore<Scalar>& store, const std::string& prefix,
                         std::size_t C, bool tied, Initializer& init) {
  if (tied) {
    register_mhxa(store, prefix + ".tied", C, init);
  } else {
    register_mhxa(store, prefix + ".ux", C, init);
    register_mhxa(store, prefix + ".vy", C, init);
  }
}

// u-x pass followed by v-y pass; output keeps the input shape.
template <typename Scalar>
Tensor<Scalar> epixformer(const Tensor<Scalar>& f, const ParameterStore<Scalar>& store,
                          const std::string& prefix, const MHXAConfig& cfg,
                          EpiPass first = EpiPass::UX) {
  const bool tied = store.contains(prefix + ".tied.wq");
  auto weights = [&](EpiPass p) {
    return MHXAWeights<Scalar>::from(store,
                                     prefix + (tied ? ".tied" : (p == EpiPass::UX ? ".ux" : ".vy")));
  };
  const EpiPass second = first == EpiPass::UX ? EpiPass::VY : EpiPass::UX;
  auto y = epi_attention(f, first, weights(first), cfg);
  return epi_attention(y, second, weights(second), cfg);
}

// ---------------------------------------------------------------- heads

template <typename Scalar>
void register_ssr_head(ParameterStore<Scalar>& store, const std::string& prefix, std::size_t C,
                       std::size_t out_channels, std::size_t scale, Initializer& init) {
  register_conv(store, prefix, out_channels * scale * scale, C, 3, 3, init, Init::Zero);
}

// 3x3 conv to C_out * r^2 channels, then sub-pixel shuffle in every view.
// `skip`, when defined, is added to the result.
template <typename Scalar>
Tensor<Scalar> ssr_head(const Tensor<Scalar>& f, const ParameterStore<Scalar>& store,
                        const std::string& prefix, std::size_t scale,
                        const Tensor<Scalar>& skip = {}) {
  const auto& w = store.at(prefix + ".w");
  const std::size_t r = scale;
  if (w.dim(0) % (r * r) != 0) throw ShapeError("ssr_head: output channels not divisible by r^2");
  const std::size_t cout = w.dim(0) / (r * r);
  ad::Conv2dOptions o;
  o.padding = {1, 1};
  auto y = ad::conv2d(to_planes(f, SubspaceId::Sai), w, store.at(prefix + ".b"), o);
  const std::size_t nb = y.dim(0), H = y.dim(2), W = y.dim(3);
  auto shuffled = ad::reshape(
      ad::permute(ad::reshape(y, {nb, cout, r, r, H, W}), {0, 1, 4, 2, 5, 3}), {nb, cout, H * r, W * r});
  Shape like = f.shape();
  like[4] *= r;
  like[5] *= r;
  auto out = from_planes(shuffled, SubspaceId::Sai, like);
  if (skip.defined()) out = ad::add(out, skip);
  return out;
}

template <typename Scalar>
void register_asr_head(ParameterStore<Scalar>& store, const std::string& prefix, std::size_t C,
                       std::size_t out_channels, std::size_t a_in, std::size_t a_out,
                       Initializer& init) {
  register_conv(store, prefix, out_channels * a_out * a_out, C * a_in * a_in, 1, 1, init);
}

// Angular content of every macro-pixel is flattened into channels as
// (c, u, v), mapped by a 1x1 conv to (c', u', v') and unfolded into the
// A_out x A_out grid.
template <typename Scalar>
Tensor<Scalar> asr_head(const Tensor<Scalar>& f, const ParameterStore<Scalar>& store,
                        const std::string& prefix, std::size_t a_out) {
  const auto& w = store.at(prefix + ".w");
  const std::size_t N = f.dim(0), C = f.dim(1), U = f.dim(2), V = f.dim(3), Y = f.dim(4),
                    X = f.dim(5);
  if (w.dim(1) != C * U * V)
    throw ShapeError("asr_head: head expects " + std::to_string(w.dim(1)) + " inputs, features give " +
                     std::to_string(C * U * V));
  if (w.dim(0) % (a_out * a_out) != 0) throw ShapeError("asr_head: output channels mismatch");
  auto y = ad::conv2d(ad::reshape(f, {N, C * U * V, Y, X}), w, store.at(prefix + ".b"));
  return ad::reshape(y, {N, w.dim(0) / (a_out * a_out), a_out, a_out, Y, X});
}

}  // namespace lfx::model
