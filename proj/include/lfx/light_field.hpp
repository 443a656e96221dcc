#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

#include "lfx/detail/permute.hpp"
#include "lfx/error.hpp"

namespace lfx {

// Extents of a light field in canonical [c, u, v, y, x] order.
// Angular u pairs with spatial x and v pairs with y: a scene point at depth z
// shifts along x when u changes and along y when v changes.
struct LfDims {
  std::size_t c = 1;
  std::size_t u = 1;
  std::size_t v = 1;
  std::size_t y = 1;
  std::size_t x = 1;

  std::size_t size() const { return c * u * v * y * x; }
  std::array<std::size_t, 5> as_array() const { return {c, u, v, y, x}; }
  bool valid() const { return c >= 1 && u >= 1 && v >= 1 && y >= 1 && x >= 1; }
  friend bool operator==(const LfDims&, const LfDims&) = default;
};

inline std::string to_string(const LfDims& d) {
  return std::to_string(d.c) + "x" + std::to_string(d.u) + "x" + std::to_string(d.v) + "x" +
         std::to_string(d.y) + "x" + std::to_string(d.x);
}

template <typename Scalar>
using Image = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
class LightField4D {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using ViewMap = Eigen::Map<Image<Scalar>>;
  using ConstViewMap = Eigen::Map<const Image<Scalar>>;

  LightField4D() = default;

  explicit LightField4D(const LfDims& dims) : dims_(dims), data_(Storage::Zero(dims.size())) {
    if (!dims.valid()) throw ShapeError("light field dims must all be >= 1, got " + to_string(dims));
  }

  LightField4D(const LfDims& dims, Storage data) : dims_(dims), data_(std::move(data)) {
    if (!dims.valid()) throw ShapeError("light field dims must all be >= 1, got " + to_string(dims));
    if (static_cast<std::size_t>(data_.size()) != dims.size())
      throw ShapeError("light field data size does not match dims " + to_string(dims));
  }

  const LfDims& dims() const { return dims_; }
  std::size_t size() const { return static_cast<std::size_t>(data_.size()); }

  std::size_t index(std::size_t c, std::size_t u, std::size_t v, std::size_t y,
                    std::size_t x) const {
    return (((c * dims_.u + u) * dims_.v + v) * dims_.y + y) * dims_.x + x;
  }

  Scalar& operator()(std::size_t c, std::size_t u, std::size_t v, std::size_t y, std::size_t x) {
    return data_[static_cast<Eigen::Index>(index(c, u, v, y, x))];
  }
  Scalar operator()(std::size_t c, std::size_t u, std::size_t v, std::size_t y,
                    std::size_t x) const {
    return data_[static_cast<Eigen::Index>(index(c, u, v, y, x))];
  }

  Storage& data() { return data_; }
  const Storage& data() const { return data_; }

  // Sub-aperture image of channel c at angle (u, v).
  ViewMap view(std::size_t c, std::size_t u, std::size_t v) {
    return ViewMap(data_.data() + index(c, u, v, 0, 0), static_cast<Eigen::Index>(dims_.y),
                   static_cast<Eigen::Index>(dims_.x));
  }
  ConstViewMap view(std::size_t c, std::size_t u, std::size_t v) const {
    return ConstViewMap(data_.data() + index(c, u, v, 0, 0), static_cast<Eigen::Index>(dims_.y),
                        static_cast<Eigen::Index>(dims_.x));
  }

  bool all_finite() const { return data_.isFinite().all(); }

  template <typename Other>
  LightField4D<Other> cast() const {
    return LightField4D<Other>(dims_, data_.template cast<Other>());
  }

 private:
  LfDims dims_{};
  Storage data_;
};

// The six coordinate-pair slices of the 4D light field.
enum class SubspaceId { Sai, MacPI, EpiUX, EpiVY, VsiVX, VsiUY };

inline constexpr std::array<SubspaceId, 6> kAllSubspaces = {
    SubspaceId::Sai,   SubspaceId::MacPI, SubspaceId::EpiUX,
    SubspaceId::EpiVY, SubspaceId::VsiVX, SubspaceId::VsiUY};

inline std::string_view name(SubspaceId id) {
  switch (id) {
    case SubspaceId::Sai: return "sai";
    case SubspaceId::MacPI: return "macpi";
    case SubspaceId::EpiUX: return "epi_ux";
    case SubspaceId::EpiVY: return "epi_vy";
    case SubspaceId::VsiVX: return "vsi_vx";
    case SubspaceId::VsiUY: return "vsi_uy";
  }
  return "?";
}

// Axis numbering inside [c, u, v, y, x]: u=1, v=2, y=3, x=4.
struct SubspaceAxes {
  std::size_t batch_outer;
  std::size_t batch_inner;
  std::size_t rows;
  std::size_t cols;
};

inline constexpr SubspaceAxes axes_of(SubspaceId id) {
  switch (id) {
    case SubspaceId::Sai: return {1, 2, 3, 4};    // plane y-x, batch u-v
    case SubspaceId::MacPI: return {3, 4, 1, 2};  // plane u-v, batch y-x
    case SubspaceId::EpiUX: return {2, 3, 1, 4};  // plane u-x, batch v-y
    case SubspaceId::EpiVY: return {1, 4, 2, 3};  // plane v-y, batch u-x
    case SubspaceId::VsiVX: return {1, 3, 2, 4};  // plane v-x, batch u-y
    case SubspaceId::VsiUY: return {2, 4, 1, 3};  // plane u-y, batch v-x
  }
  return {1, 2, 3, 4};
}

// Canonical-order permutation that realizes a subspace view:
// output axes are [c, batch_outer, batch_inner, rows, cols].
inline std::array<std::size_t, 5> view_permutation(SubspaceId id) {
  const auto a = axes_of(id);
  return {0, a.batch_outer, a.batch_inner, a.rows, a.cols};
}

// Array [c, batch, plane_rows, plane_cols]; batch is the row-major flattening
// of the two non-plane axes in the order given by axes_of().
template <typename Scalar>
struct PlaneBatch {
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  std::size_t channels = 0;
  std::size_t batch = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  Storage data;

  std::size_t size() const { return channels * batch * rows * cols; }

  Eigen::Map<const Image<Scalar>> plane(std::size_t c, std::size_t b) const {
    return Eigen::Map<const Image<Scalar>>(data.data() + (c * batch + b) * rows * cols,
                                           static_cast<Eigen::Index>(rows),
                                           static_cast<Eigen::Index>(cols));
  }
  Eigen::Map<Image<Scalar>> plane(std::size_t c, std::size_t b) {
    return Eigen::Map<Image<Scalar>>(data.data() + (c * batch + b) * rows * cols,
                                     static_cast<Eigen::Index>(rows),
                                     static_cast<Eigen::Index>(cols));
  }
};

template <typename Scalar>
PlaneBatch<Scalar> subspace_view(const LightField4D<Scalar>& lf, SubspaceId id) {
  const auto dims = lf.dims().as_array();
  const auto perm = view_permutation(id);
  PlaneBatch<Scalar> pb;
  pb.channels = dims[0];
  pb.batch = dims[perm[1]] * dims[perm[2]];
  pb.rows = dims[perm[3]];
  pb.cols = dims[perm[4]];
  pb.data.resize(static_cast<Eigen::Index>(lf.size()));
  detail::permute_copy(lf.data().data(), pb.data.data(), dims, perm);
  return pb;
}

template <typename Scalar>
LightField4D<Scalar> subspace_unview(const PlaneBatch<Scalar>& pb, SubspaceId id,
                                     const LfDims& dims) {
  const auto d = dims.as_array();
  const auto perm = view_permutation(id);
  if (pb.channels != d[0] || pb.batch != d[perm[1]] * d[perm[2]] || pb.rows != d[perm[3]] ||
      pb.cols != d[perm[4]] || static_cast<std::size_t>(pb.data.size()) != dims.size())
    throw ShapeError(std::string("subspace_unview: plane batch does not match dims ") +
                     to_string(dims) + " for " + std::string(name(id)));
  const std::array<std::size_t, 5> viewed = {d[0], d[perm[1]], d[perm[2]], d[perm[3]], d[perm[4]]};
  const auto inv = detail::inverse_permutation(perm);
  LightField4D<Scalar> out(dims);
  detail::permute_copy(pb.data.data(), out.data().data(), viewed, inv);
  return out;
}

// Macro-pixel image of one channel: element (y*U + u, x*V + v).
template <typename Scalar>
Image<Scalar> to_macpi_image(const LightField4D<Scalar>& lf, std::size_t channel = 0) {
  const auto& d = lf.dims();
  if (channel >= d.c) throw ShapeError("to_macpi_image: channel out of range");
  Image<Scalar> img(static_cast<Eigen::Index>(d.y * d.u), static_cast<Eigen::Index>(d.x * d.v));
  for (std::size_t u = 0; u < d.u; ++u)
    for (std::size_t v = 0; v < d.v; ++v)
      for (std::size_t y = 0; y < d.y; ++y)
        for (std::size_t x = 0; x < d.x; ++x)
          img(static_cast<Eigen::Index>(y * d.u + u), static_cast<Eigen::Index>(x * d.v + v)) =
              lf(channel, u, v, y, x);
  return img;
}

template <typename Scalar>
LightField4D<Scalar> from_macpi_image(const Image<Scalar>& img, std::size_t U, std::size_t V) {
  if (U == 0 || V == 0 || img.rows() % static_cast<Eigen::Index>(U) != 0 ||
      img.cols() % static_cast<Eigen::Index>(V) != 0)
    throw ShapeError("from_macpi_image: image size not divisible by angular size");
  LfDims d{1, U, V, static_cast<std::size_t>(img.rows()) / U,
           static_cast<std::size_t>(img.cols()) / V};
  LightField4D<Scalar> lf(d);
  for (std::size_t u = 0; u < d.u; ++u)
    for (std::size_t v = 0; v < d.v; ++v)
      for (std::size_t y = 0; y < d.y; ++y)
        for (std::size_t x = 0; x < d.x; ++x)
          lf(0, u, v, y, x) =
              img(static_cast<Eigen::Index>(y * d.u + u), static_cast<Eigen::Index>(x * d.v + v));
  return lf;
}

// Sub-pixel rearrangement applied per view:
// out[c, u, v, y*r + i, x*r + j] = in[c*r*r + i*r + j, u, v, y, x].
template <typename Scalar>
LightField4D<Scalar> pixel_shuffle_spatial(const LightField4D<Scalar>& in, std::size_t r) {
  const auto& d = in.dims();
  if (r == 0 || d.c % (r * r) != 0)
    throw ShapeError("pixel_shuffle_spatial: channels " + std::to_string(d.c) +
                     " not divisible by r^2 = " + std::to_string(r * r));
  // [c, i, j, u, v, y, x] -> [c, u, v, y, i, x, j]
  const std::array<std::size_t, 7> src = {d.c / (r * r), r, r, d.u, d.v, d.y, d.x};
  const std::array<std::size_t, 7> perm = {0, 3, 4, 5, 1, 6, 2};
  LightField4D<Scalar> out(LfDims{d.c / (r * r), d.u, d.v, d.y * r, d.x * r});
  detail::permute_copy(in.data().data(), out.data().data(), src, perm);
  return out;
}

template <typename Scalar>
LightField4D<Scalar> pixel_unshuffle_spatial(const LightField4D<Scalar>& in, std::size_t r) {
  const auto& d = in.dims();
  if (r == 0 || d.y % r != 0 || d.x % r != 0)
    throw ShapeError("pixel_unshuffle_spatial: spatial size not divisible by r");
  // [c, u, v, y, i, x, j] -> [c, i, j, u, v, y, x]
  const std::array<std::size_t, 7> src = {d.c, d.u, d.v, d.y / r, r, d.x / r, r};
  const std::array<std::size_t, 7> perm = {0, 4, 6, 1, 2, 3, 5};
  LightField4D<Scalar> out(LfDims{d.c * r * r, d.u, d.v, d.y / r, d.x / r});
  detail::permute_copy(in.data().data(), out.data().data(), src, perm);
  return out;
}

// Channels grouped (c, du, dv) row-major move into angular positions:
// out[c, uu*k + du, vv*k + dv, y, x] = in[c*k*k + du*k + dv, uu, vv, y, x].
template <typename Scalar>
LightField4D<Scalar> channel_to_angle(const LightField4D<Scalar>& in, std::size_t k) {
  const auto& d = in.dims();
  if (k == 0 || d.c % (k * k) != 0)
    throw ShapeError("channel_to_angle: channels " + std::to_string(d.c) +
                     " not divisible by k^2 = " + std::to_string(k * k));
  // [c, du, dv, uu, vv, y, x] -> [c, uu, du, vv, dv, y, x]
  const std::array<std::size_t, 7> src = {d.c / (k * k), k, k, d.u, d.v, d.y, d.x};
  const std::array<std::size_t, 7> perm = {0, 3, 1, 4, 2, 5, 6};
  LightField4D<Scalar> out(LfDims{d.c / (k * k), d.u * k, d.v * k, d.y, d.x});
  detail::permute_copy(in.data().data(), out.data().data(), src, perm);
  return out;
}

template <typename Scalar>
LightField4D<Scalar> angle_to_channel(const LightField4D<Scalar>& in, std::size_t k) {
  const auto& d = in.dims();
  if (k == 0 || d.u % k != 0 || d.v % k != 0)
    throw ShapeError("angle_to_channel: angular size not divisible by k");
  // [c, uu, du, vv, dv, y, x] -> [c, du, dv, uu, vv, y, x]
  const std::array<std::size_t, 7> src = {d.c, d.u / k, k, d.v / k, k, d.y, d.x};
  const std::array<std::size_t, 7> perm = {0, 2, 4, 1, 3, 5, 6};
  LightField4D<Scalar> out(LfDims{d.c * k * k, d.u / k, d.v / k, d.y, d.x});
  detail::permute_copy(in.data().data(), out.data().data(), src, perm);
  return out;
}

// Mirror x together with its paired angular axis u.
template <typename Scalar>
LightField4D<Scalar> flip_h_lf(const LightField4D<Scalar>& in) {
  const auto& d = in.dims();
  LightField4D<Scalar> out(d);
  for (std::size_t c = 0; c < d.c; ++c)
    for (std::size_t u = 0; u < d.u; ++u)
      for (std::size_t v = 0; v < d.v; ++v)
        for (std::size_t y = 0; y < d.y; ++y)
          for (std::size_t x = 0; x < d.x; ++x)
            out(c, u, v, y, x) = in(c, d.u - 1 - u, v, y, d.x - 1 - x);
  return out;
}

// Mirror y together with its paired angular axis v.
template <typename Scalar>
LightField4D<Scalar> flip_v_lf(const LightField4D<Scalar>& in) {
  const auto& d = in.dims();
  LightField4D<Scalar> out(d);
  for (std::size_t c = 0; c < d.c; ++c)
    for (std::size_t u = 0; u < d.u; ++u)
      for (std::size_t v = 0; v < d.v; ++v)
        for (std::size_t y = 0; y < d.y; ++y)
          for (std::size_t x = 0; x < d.x; ++x)
            out(c, u, v, y, x) = in(c, u, d.v - 1 - v, d.y - 1 - y, x);
  return out;
}

// Quarter-turn applied jointly to (x, y) and (u, v) in centered coordinates:
// x' = y, y' = -x and u' = v, v' = -u. Needs a square angular grid.
template <typename Scalar>
LightField4D<Scalar> rot90_lf(const LightField4D<Scalar>& in) {
  const auto& d = in.dims();
  if (d.u != d.v)
    throw ShapeError("rot90_lf: angular grid must be square, got " + std::to_string(d.u) + "x" +
                     std::to_string(d.v));
  const LfDims od{d.c, d.v, d.u, d.x, d.y};
  LightField4D<Scalar> out(od);
  for (std::size_t c = 0; c < od.c; ++c)
    for (std::size_t u = 0; u < od.u; ++u)
      for (std::size_t v = 0; v < od.v; ++v)
        for (std::size_t y = 0; y < od.y; ++y)
          for (std::size_t x = 0; x < od.x; ++x)
            out(c, u, v, y, x) = in(c, d.u - 1 - v, u, x, d.x - 1 - y);
  return out;
}

}  // namespace lfx
