#pragma once

#include <functional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "lfx/light_field.hpp"

namespace lfx::pipeline {

// Reported for zero mean-squared error instead of +inf.
inline constexpr double kPsnrCap = 100.0;

// Peak 1: 10 log10(1 / MSE).
double psnr(const Image<double>& a, const Image<double>& b);

// Gaussian-window SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03, L = 1) averaged
// over all valid window positions. Images smaller than the window use the
// largest odd window that fits.
double ssim(const Image<double>& a, const Image<double>& b);

struct ViewMetric {
  std::size_t u = 0;
  std::size_t v = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct SceneMetric {
  std::string name;
  std::vector<ViewMetric> views;
  double psnr = 0.0;  // mean over views
  double ssim = 0.0;
};

// Per-view -> per-scene -> per-dataset averages; excluded views (ASR inputs)
// never enter any average.
struct MetricReport {
  std::vector<SceneMetric> scenes;
  std::set<std::pair<std::size_t, std::size_t>> excluded;
  double psnr = 0.0;  // mean over scenes
  double ssim = 0.0;

  std::string to_csv() const;
};

// Metrics of every non-excluded view of channel 0.
SceneMetric score_scene(const std::string& name, const LightField4D<double>& pred,
                        const LightField4D<double>& truth,
                        const std::set<std::pair<std::size_t, std::size_t>>& excluded = {});

// Recomputes scene and dataset means from the per-view entries.
void aggregate(MetricReport& report);

using LfModel = std::function<LightField4D<double>(const LightField4D<double>&)>;

// Runs `model` over spatial tiles of `tile` input pixels, each extended by
// `pad` pixels taken from the whole image with half-sample reflection at its
// borders; the central part of every output tile (scaled by `scale`) is
// stitched into the result. tile = 0 runs the model on the whole (padded)
// input.
LightField4D<double> run_tiled(const LfModel& model, const LightField4D<double>& input,
                               std::size_t scale, std::size_t tile, std::size_t pad);

struct EvalPair {
  std::string name;
  LightField4D<double> input;
  LightField4D<double> truth;
};

struct EvalOptions {
  std::size_t scale = 1;  // spatial factor between input and output
  std::size_t tile = 0;
  std::size_t pad = 0;
  std::set<std::pair<std::size_t, std::size_t>> excluded;
};

MetricReport evaluate(const LfModel& model, const std::vector<EvalPair>& data,
                      const EvalOptions& options);

}  // namespace lfx::pipeline
