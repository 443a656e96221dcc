#include "lfx/optics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "lfx/detail/parallel.hpp"

namespace lfx::optics {

void OpticsConfig::validate() const {
  if (!(z0 > 0.0) || !std::isfinite(z0)) throw ConfigError("optics: z0 must be > 0");
  if (!(baseline > 0.0) || !std::isfinite(baseline))
    throw ConfigError("optics: baseline must be > 0");
  if (!(pixel_pitch > 0.0) || !std::isfinite(pixel_pitch))
    throw ConfigError("optics: pixel_pitch must be > 0");
  if (U == 0 || V == 0 || Y == 0 || X == 0) throw ConfigError("optics: grid sizes must be >= 1");
}

void SceneSpec::validate(double z0) const {
  if (layers.empty()) throw ConfigError("scene: at least one layer required");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string tag = "scene: layer " + std::to_string(i);
    if (!std::isfinite(l.depth) || !(l.depth > -z0)) throw ConfigError(tag + " depth must be > -z0");
    const auto& t = l.texture;
    if (t.values.size() == 0) throw ConfigError(tag + " texture is empty");
    if (!t.values.isFinite().all() || (t.values < 0.0).any() || (t.values > 1.0).any())
      throw ConfigError(tag + " texture values must be finite and in [0,1]");
    if (!(t.width > 0.0) || !(t.height > 0.0)) throw ConfigError(tag + " extent must be > 0");
    if (t.has_mask() && (t.mask.rows() != t.values.rows() || t.mask.cols() != t.values.cols()))
      throw ConfigError(tag + " mask size differs from texture size");
  }
}

bool Texture::sample(double xw, double yw, double& value) const {
  const auto W = static_cast<double>(values.cols());
  const auto H = static_cast<double>(values.rows());
  const double tx = (xw - (center_x - width / 2.0)) / (width / W) - 0.5;
  const double ty = (yw - (center_y - height / 2.0)) / (height / H) - 0.5;
  const bool inside = tx >= -0.5 && tx <= W - 0.5 && ty >= -0.5 && ty <= H - 0.5;
  if (!inside) {
    if (has_mask()) return false;
    value = out_of_bounds;
    return true;
  }
  const double cx = std::clamp(tx, 0.0, W - 1.0);
  const double cy = std::clamp(ty, 0.0, H - 1.0);
  if (has_mask()) {
    const auto mi = static_cast<Eigen::Index>(std::lround(cy));
    const auto mj = static_cast<Eigen::Index>(std::lround(cx));
    if (mask(mi, mj) == 0) return false;
  }
  const auto x0 = static_cast<Eigen::Index>(std::floor(cx));
  const auto y0 = static_cast<Eigen::Index>(std::floor(cy));
  const auto x1 = std::min<Eigen::Index>(x0 + 1, values.cols() - 1);
  const auto y1 = std::min<Eigen::Index>(y0 + 1, values.rows() - 1);
  const double fx = cx - double(x0);
  const double fy = cy - double(y0);
  value = (1.0 - fy) * ((1.0 - fx) * values(y0, x0) + fx * values(y0, x1)) +
          fy * ((1.0 - fx) * values(y1, x0) + fx * values(y1, x1));
  return true;
}

LightField4D<double> render_lf(const SceneSpec& scene, const OpticsConfig& optics) {
  optics.validate();
  scene.validate(optics.z0);

  std::vector<std::size_t> order(scene.layers.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scene.layers[a].depth < scene.layers[b].depth;
  });

  LightField4D<double> lf(LfDims{1, optics.U, optics.V, optics.Y, optics.X});
  detail::parallel_for(optics.U * optics.V, [&](std::size_t uv) {
    const std::size_t ua = uv / optics.V;
    const std::size_t va = uv % optics.V;
    const double u = optics.u_phys(ua);
    const double v = optics.v_phys(va);
    for (std::size_t iy = 0; iy < optics.Y; ++iy) {
      const double y = optics.y_phys(iy);
      for (std::size_t ix = 0; ix < optics.X; ++ix) {
        const double x = optics.x_phys(ix);
        double value = scene.background;
        for (auto li : order) {
          const auto& layer = scene.layers[li];
          const double s = scale_factor(layer.depth, optics.z0);
          const double k = layer.depth / optics.z0;
          double sampled = 0.0;
          if (layer.texture.sample(s * x - u * k, s * y - v * k, sampled)) {
            value = sampled;
            break;
          }
        }
        lf(0, ua, va, iy, ix) = value;
      }
    }
  });
  return lf;
}

Image<double> render_view_at_scale(const Texture& texture, double scale,
                                   const OpticsConfig& optics) {
  optics.validate();
  Image<double> img(static_cast<Eigen::Index>(optics.Y), static_cast<Eigen::Index>(optics.X));
  for (std::size_t iy = 0; iy < optics.Y; ++iy)
    for (std::size_t ix = 0; ix < optics.X; ++ix) {
      double value = 0.0;
      if (!texture.sample(scale * optics.x_phys(ix), scale * optics.y_phys(iy), value)) value = 0.0;
      img(static_cast<Eigen::Index>(iy), static_cast<Eigen::Index>(ix)) = value;
    }
  return img;
}

double epi_line_slope(double z, double z0) {
  if (z == 0.0) return std::copysign(std::numeric_limits<double>::infinity(), z0);
  return (z + z0) / z;
}

double disparity_pixels(double z, const OpticsConfig& optics) {
  if (z == 0.0) return 0.0;
  return optics.baseline * z / (optics.pixel_pitch * (z + optics.z0));
}

namespace {

constexpr double kPi = 3.14159265358979323846;

double profile_variance(const Image<double>& img, double theta, double bin_width) {
  const double sn = std::sin(theta);
  const double cs = std::cos(theta);
  const auto rows = img.rows();
  const auto cols = img.cols();
  // Projection onto the line normal, bounded by the plane diagonal.
  const double extent = std::abs(sn) * double(cols) + std::abs(cs) * double(rows);
  const auto nbins = static_cast<std::size_t>(std::ceil(2.0 * extent / bin_width)) + 4;
  const double offset = double(nbins / 2);
  std::vector<double> sum(nbins, 0.0);
  std::vector<double> count(nbins, 0.0);
  double total = 0.0;
  double weight = 0.0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double t = (-double(c) * sn + double(r) * cs) / bin_width + offset;
      const double f = std::floor(t);
      const double w1 = t - f;
      const auto b = static_cast<std::size_t>(f);
      const double g = img(r, c);
      sum[b] += (1.0 - w1) * g;
      count[b] += 1.0 - w1;
      sum[b + 1] += w1 * g;
      count[b + 1] += w1;
      total += g;
      weight += 1.0;
    }
  const double mean = total / weight;
  double var = 0.0;
  for (std::size_t b = 0; b < nbins; ++b) {
    if (count[b] <= 0.0) continue;
    const double m = sum[b] / count[b];
    var += count[b] * (m - mean) * (m - mean);
  }
  return var / weight;
}

}  // namespace

double fit_epi_slope(const Image<double>& plane, const SlopeFitOptions& options) {
  if (plane.rows() < 2 || plane.cols() < 2)
    throw ShapeError("fit_epi_slope: plane must be at least 2x2");
  if (!plane.isFinite().all()) throw NumericError("fit_epi_slope: non-finite plane");
  if (plane.maxCoeff() - plane.minCoeff() <= 1e-12)
    throw NumericError("fit_epi_slope: constant plane has no orientation");

  const double deg = kPi / 180.0;
  auto sweep = [&](double lo, double hi, double step) {
    double best_theta = lo;
    double best = -1.0;
    const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
    for (long k = 0; k <= n; ++k) {
      const double th = (lo + double(k) * step) * deg;
      const double v = profile_variance(plane, th, options.bin_width);
      if (v > best) {
        best = v;
        best_theta = lo + double(k) * step;
      }
    }
    return best_theta;
  };
  const double coarse = sweep(options.theta_min_deg, options.theta_max_deg, options.coarse_step_deg);
  const double lo = std::max(options.theta_min_deg, coarse - 2.0 * options.coarse_step_deg);
  const double hi = std::min(options.theta_max_deg, coarse + 2.0 * options.coarse_step_deg);
  const double fine = sweep(lo, hi, options.fine_step_deg);
  return std::tan(fine * deg);
}

}  // namespace lfx::optics
