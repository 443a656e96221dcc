#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lfx/light_field.hpp"
#include "lfx/optics.hpp"

namespace lfx::pipeline {

struct LfPair {
  LightField4D<double> input;
  LightField4D<double> target;
};

// Per-view bicubic downscale by alpha; spatial size must divide by alpha.
LfPair make_ssr_pair(const LightField4D<double>& hr, std::size_t alpha);

// Spatial patches on a regular grid, top-left first, row-major.
std::vector<LightField4D<double>> crop_patches(const LightField4D<double>& lf, std::size_t size,
                                               std::size_t stride);

// Angular positions of a_in sparse views spread over a_out: i*(a_out-1)/(a_in-1).
std::vector<std::size_t> sparse_angles(std::size_t a_in, std::size_t a_out);

// Sparse corner views of a dense a_out x a_out light field (2x2 from 7x7 by
// default); the target is the dense light field unchanged.
LfPair make_asr_pair(const LightField4D<double>& dense, std::size_t a_in = 2, std::size_t a_out = 7);

// ITU-R BT.601 luma of an RGB image in [0, 1]: (65.481R + 128.553G + 24.966B + 16) / 255.
Image<double> rgb_to_y(const std::vector<Image<double>>& rgb);
LightField4D<double> rgb_to_y(const LightField4D<double>& rgb);

enum class AugmentOp { None, FlipH, FlipV, Rot90 };

LightField4D<double> augment(const LightField4D<double>& lf, AugmentOp op);
LfPair augment(const LfPair& pair, AugmentOp op);

// lr0 * 0.5^floor(epoch / period), epochs counted from 0.
double lr_at_epoch(double lr0, std::size_t epoch, std::size_t period = 15);

struct SyntheticSceneOptions {
  double min_depth = -0.3;  // in units of z0
  double max_depth = 0.6;
  std::size_t cards = 3;
  double feature_px = 8.0;  // texture correlation length in focal-plane pixels
};

// Random layered scene: a textured background plane and a few masked
// foreground cards at depths within [min_depth, max_depth] * z0.
optics::SceneSpec synthetic_scene(std::uint64_t seed, const optics::OpticsConfig& optics,
                                  const SyntheticSceneOptions& opt = {});

}  // namespace lfx::pipeline
