#include "lfx/pipeline/dataset.hpp"

#include <cmath>
#include <random>

#include "lfx/pipeline/io.hpp"
#include "lfx/pipeline/resize.hpp"

namespace lfx::pipeline {

LfPair make_ssr_pair(const LightField4D<double>& hr, std::size_t alpha) {
  if (alpha == 0) throw ConfigError("make_ssr_pair: alpha must be >= 1");
  const auto& d = hr.dims();
  if (d.y % alpha != 0 || d.x % alpha != 0)
    throw ShapeError("make_ssr_pair: spatial size " + std::to_string(d.y) + "x" + std::to_string(d.x) +
                     " not divisible by " + std::to_string(alpha));
  LightField4D<double> lr(LfDims{d.c, d.u, d.v, d.y / alpha, d.x / alpha});
  for (std::size_t c = 0; c < d.c; ++c)
    for (std::size_t u = 0; u < d.u; ++u)
      for (std::size_t v = 0; v < d.v; ++v)
        lr.view(c, u, v) = bicubic_resize_to(Image<double>(hr.view(c, u, v)), d.y / alpha, d.x / alpha);
  return {std::move(lr), hr};
}

std::vector<LightField4D<double>> crop_patches(const LightField4D<double>& lf, std::size_t size,
                                               std::size_t stride) {
  const auto& d = lf.dims();
  if (size == 0 || stride == 0) throw ConfigError("crop_patches: size and stride must be >= 1");
  if (size > d.y || size > d.x)
    throw ShapeError("crop_patches: patch " + std::to_string(size) + " larger than " + to_string(d));
  std::vector<LightField4D<double>> out;
  for (std::size_t y0 = 0; y0 + size <= d.y; y0 += stride)
    for (std::size_t x0 = 0; x0 + size <= d.x; x0 += stride) {
      LightField4D<double> p(LfDims{d.c, d.u, d.v, size, size});
      for (std::size_t c = 0; c < d.c; ++c)
        for (std::size_t u = 0; u < d.u; ++u)
          for (std::size_t v = 0; v < d.v; ++v)
            p.view(c, u, v) = lf.view(c, u, v).block(Eigen::Index(y0), Eigen::Index(x0),
                                                      Eigen::Index(size), Eigen::Index(size));
      out.push_back(std::move(p));
    }
  return out;
}

std::vector<std::size_t> sparse_angles(std::size_t a_in, std::size_t a_out) {
  if (a_in == 0 || a_out < a_in) throw ConfigError("sparse_angles: need 1 <= a_in <= a_out");
  if (a_in == 1) return {(a_out - 1) / 2};
  if ((a_out - 1) % (a_in - 1) != 0)
    throw ConfigError("sparse_angles: sparse views do not fall on the dense grid");
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < a_in; ++i) pos.push_back(i * (a_out - 1) / (a_in - 1));
  return pos;
}

LfPair make_asr_pair(const LightField4D<double>& dense, std::size_t a_in, std::size_t a_out) {
  const auto& d = dense.dims();
  if (d.u != a_out || d.v != a_out)
    throw ShapeError("make_asr_pair: expected " + std::to_string(a_out) + "x" + std::to_string(a_out) +
                     " views, got " + std::to_string(d.u) + "x" + std::to_string(d.v));
  const auto pos = sparse_angles(a_in, a_out);
  LightField4D<double> sparse(LfDims{d.c, a_in, a_in, d.y, d.x});
  for (std::size_t c = 0; c < d.c; ++c)
    for (std::size_t i = 0; i < a_in; ++i)
      for (std::size_t j = 0; j < a_in; ++j) sparse.view(c, i, j) = dense.view(c, pos[i], pos[j]);
  return {std::move(sparse), dense};
}

Image<double> rgb_to_y(const std::vector<Image<double>>& rgb) {
  if (rgb.size() != 3) throw ShapeError("rgb_to_y: expected 3 channels, got " + std::to_string(rgb.size()));
  return (65.481 * rgb[0] + 128.553 * rgb[1] + 24.966 * rgb[2] + 16.0) / 255.0;
}

LightField4D<double> rgb_to_y(const LightField4D<double>& rgb) {
  const auto& d = rgb.dims();
  if (d.c != 3) throw ShapeError("rgb_to_y: expected 3 channels, got " + std::to_string(d.c));
  LightField4D<double> y(LfDims{1, d.u, d.v, d.y, d.x});
  for (std::size_t u = 0; u < d.u; ++u)
    for (std::size_t v = 0; v < d.v; ++v)
      y.view(0, u, v) = rgb_to_y({Image<double>(rgb.view(0, u, v)), Image<double>(rgb.view(1, u, v)),
                                  Image<double>(rgb.view(2, u, v))});
  return y;
}

LightField4D<double> augment(const LightField4D<double>& lf, AugmentOp op) {
  switch (op) {
    case AugmentOp::None: return lf;
    case AugmentOp::FlipH: return flip_h_lf(lf);
    case AugmentOp::FlipV: return flip_v_lf(lf);
    case AugmentOp::Rot90: return rot90_lf(lf);
  }
  return lf;
}

LfPair augment(const LfPair& pair, AugmentOp op) {
  return {augment(pair.input, op), augment(pair.target, op)};
}

double lr_at_epoch(double lr0, std::size_t epoch, std::size_t period) {
  if (period == 0) throw ConfigError("lr schedule: period must be >= 1");
  return lr0 * std::pow(0.5, double(epoch / period));
}

optics::SceneSpec synthetic_scene(std::uint64_t seed, const optics::OpticsConfig& optics,
                                  const SyntheticSceneOptions& opt) {
  if (!(opt.feature_px > 0.0)) throw ConfigError("synthetic scene: feature_px must be > 0");
  if (!(opt.max_depth > opt.min_depth) || !(opt.min_depth > -1.0))
    throw ConfigError("synthetic scene: need -1 < min_depth < max_depth");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double fov_x = double(optics.X) * optics.pixel_pitch;
  const double fov_y = double(optics.Y) * optics.pixel_pitch;
  const double fov = std::max(fov_x, fov_y);
  const double feature = opt.feature_px * optics.pixel_pitch;
  auto smoothness = [&](double extent, std::size_t texels) {
    return std::max<std::size_t>(1, std::size_t(std::lround(feature * double(texels) / extent)));
  };
  optics::SceneSpec scene;
  scene.background = 0.5;

  optics::LayerSpec back;
  back.depth = opt.max_depth * optics.z0;
  back.texture.width = back.texture.height = 4.0 * fov;
  back.texture.values = noise_texture(rng(), 256, smoothness(back.texture.width, 256));
  back.texture.out_of_bounds = 0.5;
  scene.layers.push_back(std::move(back));

  for (std::size_t i = 0; i < opt.cards; ++i) {
    optics::LayerSpec card;
    card.depth = (opt.min_depth + (opt.max_depth - opt.min_depth) * 0.8 * unit(rng)) * optics.z0;
    const auto tex_seed = rng();
    card.texture.mask = Image<unsigned char>::Ones(64, 64);
    // Round cards read as discs; the rest stay rectangular.
    if (unit(rng) < 0.5)
      for (Eigen::Index r = 0; r < 64; ++r)
        for (Eigen::Index c = 0; c < 64; ++c)
          card.texture.mask(r, c) = (r - 31.5) * (r - 31.5) + (c - 31.5) * (c - 31.5) <= 32.0 * 32.0;
    card.texture.width = fov * (0.2 + 0.3 * unit(rng));
    card.texture.height = fov * (0.2 + 0.3 * unit(rng));
    card.texture.values = noise_texture(tex_seed, 64, smoothness(card.texture.width, 64));
    card.texture.center_x = (unit(rng) - 0.5) * fov_x * 0.8;
    card.texture.center_y = (unit(rng) - 0.5) * fov_y * 0.8;
    scene.layers.push_back(std::move(card));
  }
  return scene;
}

}  // namespace lfx::pipeline
