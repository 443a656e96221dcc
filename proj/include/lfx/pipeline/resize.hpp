#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "lfx/light_field.hpp"

namespace lfx::pipeline {

// Keys cubic with a = -0.5.
inline double cubic_kernel(double x) {
  const double t = std::abs(x);
  if (t <= 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
  if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
  return 0.0;
}

// Half-sample symmetric boundary: -1 -> 0, -2 -> 1, n -> n-1.
inline std::size_t reflect_index(long i, std::size_t n) {
  const long period = 2 * long(n);
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < long(n) ? m : period - 1 - m);
}

struct ResampleTap {
  std::size_t index;
  double weight;
};

// One output sample: taps grouped by distance from the sample center. The
// two taps of a group sit at mirrored offsets and are summed together first,
// which keeps the result exactly mirror-symmetric.
struct ResampleRow {
  std::vector<ResampleTap> taps;
  std::vector<std::size_t> group_end;
};

// Output o samples input coordinate (o + 0.5) / scale - 0.5. On downscale the
// kernel is stretched by 1/scale (anti-aliasing). Weights sum to one.
inline std::vector<ResampleRow> resample_weights(std::size_t in, std::size_t out) {
  if (in == 0 || out == 0) throw ShapeError("resample: sizes must be positive");
  const double scale = double(out) / double(in);
  const double stretch = scale < 1.0 ? scale : 1.0;
  const double half_width = 2.0 / stretch;
  std::vector<ResampleRow> rows(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double center = (double(o) + 0.5) / scale - 0.5;
    struct Raw {
      long i;
      double dist;
      double w;
    };
    std::vector<Raw> raw;
    const long lo = long(std::floor(center - half_width));
    const long hi = long(std::ceil(center + half_width));
    for (long i = lo; i <= hi; ++i) {
      const double d = std::abs(center - double(i));
      const double w = stretch * cubic_kernel(stretch * d);
      if (w != 0.0) raw.push_back({i, d, w});
    }
    std::stable_sort(raw.begin(), raw.end(),
                     [](const Raw& a, const Raw& b) { return a.dist < b.dist; });
    auto& row = rows[o];
    double total = 0.0;
    for (std::size_t k = 0; k < raw.size();) {
      std::size_t e = k + 1;
      while (e < raw.size() && raw[e].dist == raw[k].dist) ++e;
      double group = 0.0;
      for (std::size_t j = k; j < e; ++j) group += raw[j].w;
      total += group;
      for (std::size_t j = k; j < e; ++j) row.taps.push_back({reflect_index(raw[j].i, in), raw[j].w});
      row.group_end.push_back(e);
      k = e;
    }
    for (auto& t : row.taps) t.weight /= total;
  }
  return rows;
}

namespace detail {

template <typename Get>
double apply_row(const ResampleRow& row, Get&& get) {
  // taps of a group share one weight; summing the samples first keeps the
  // result mirror-exact even when the compiler contracts to fma
  double acc = 0.0;
  std::size_t k = 0;
  for (auto e : row.group_end) {
    const double w = row.taps[k].weight;
    double group = 0.0;
    for (; k < e; ++k) group += get(row.taps[k].index);
    acc += w * group;
  }
  return acc;
}

// Columns first when cols_first, rows first otherwise.
template <typename Scalar>
Image<double> separable_pass(const Image<Scalar>& img, const std::vector<ResampleRow>& wy,
                             const std::vector<ResampleRow>& wx, bool cols_first) {
  const auto R = Eigen::Index(wy.size()), C = Eigen::Index(wx.size());
  Image<double> out(R, C);
  if (cols_first) {
    Image<double> tmp(img.rows(), C);
    for (Eigen::Index r = 0; r < img.rows(); ++r)
      for (Eigen::Index c = 0; c < C; ++c)
        tmp(r, c) = apply_row(wx[c], [&](std::size_t i) { return double(img(r, Eigen::Index(i))); });
    for (Eigen::Index r = 0; r < R; ++r)
      for (Eigen::Index c = 0; c < C; ++c)
        out(r, c) = apply_row(wy[r], [&](std::size_t i) { return tmp(Eigen::Index(i), c); });
  } else {
    Image<double> tmp(R, img.cols());
    for (Eigen::Index r = 0; r < R; ++r)
      for (Eigen::Index c = 0; c < img.cols(); ++c)
        tmp(r, c) = apply_row(wy[r], [&](std::size_t i) { return double(img(Eigen::Index(i), c)); });
    for (Eigen::Index r = 0; r < R; ++r)
      for (Eigen::Index c = 0; c < C; ++c)
        out(r, c) = apply_row(wx[c], [&](std::size_t i) { return tmp(r, Eigen::Index(i)); });
  }
  return out;
}

}  // namespace detail

// Separable bicubic resize to an explicit size. The two pass orders are
// averaged, so transposing the input transposes the output exactly.
template <typename Scalar>
Image<Scalar> bicubic_resize_to(const Image<Scalar>& img, std::size_t out_rows,
                                std::size_t out_cols) {
  if (img.size() == 0) throw ShapeError("bicubic_resize: empty image");
  const auto wx = resample_weights(static_cast<std::size_t>(img.cols()), out_cols);
  const auto wy = resample_weights(static_cast<std::size_t>(img.rows()), out_rows);
  const Image<double> a = detail::separable_pass(img, wy, wx, true);
  const Image<double> b = detail::separable_pass(img, wy, wx, false);
  return ((a + b) * 0.5).template cast<Scalar>();
}

// The same resampling as an (out x in) matrix; used for reverse passes.
inline Eigen::MatrixXd resample_matrix(std::size_t in, std::size_t out) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(Eigen::Index(out), Eigen::Index(in));
  const auto rows = resample_weights(in, out);
  for (std::size_t o = 0; o < out; ++o)
    for (const auto& t : rows[o].taps) m(Eigen::Index(o), Eigen::Index(t.index)) += t.weight;
  return m;
}

inline std::size_t scaled_size(std::size_t n, double factor) {
  if (!(factor > 0.0)) throw ShapeError("bicubic_resize: factor must be positive");
  const auto m = static_cast<long>(std::lround(double(n) * factor));
  if (m <= 0) throw ShapeError("bicubic_resize: output size would be zero");
  return static_cast<std::size_t>(m);
}

template <typename Scalar>
Image<Scalar> bicubic_resize(const Image<Scalar>& img, double factor) {
  return bicubic_resize_to(img, scaled_size(std::size_t(img.rows()), factor),
                           scaled_size(std::size_t(img.cols()), factor));
}

// Every view of every channel resized independently.
template <typename Scalar>
LightField4D<Scalar> resize_views(const LightField4D<Scalar>& lf, double factor) {
  const auto& d = lf.dims();
  const LfDims od{d.c, d.u, d.v, scaled_size(d.y, factor), scaled_size(d.x, factor)};
  LightField4D<Scalar> out(od);
  for (std::size_t c = 0; c < d.c; ++c)
    for (std::size_t u = 0; u < d.u; ++u)
      for (std::size_t v = 0; v < d.v; ++v)
        out.view(c, u, v) = bicubic_resize_to<Scalar>(Image<Scalar>(lf.view(c, u, v)), od.y, od.x);
  return out;
}

}  // namespace lfx::pipeline
