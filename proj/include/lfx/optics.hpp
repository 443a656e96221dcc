#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "lfx/light_field.hpp"

namespace lfx::optics {

// Camera geometry of the delta-PSF imaging model. Angular index a maps to the
// physical camera-plane offset (a - (U-1)/2) * baseline; pixel index i maps to
// (i - (X-1)/2) * pixel_pitch, both centered on the optical axis.
struct OpticsConfig {
  double z0 = 1.0;
  double baseline = 1.0;
  double pixel_pitch = 1.0;
  std::size_t U = 1;
  std::size_t V = 1;
  std::size_t Y = 1;
  std::size_t X = 1;

  void validate() const;
  double u_phys(std::size_t a) const { return (double(a) - double(U - 1) / 2.0) * baseline; }
  double v_phys(std::size_t a) const { return (double(a) - double(V - 1) / 2.0) * baseline; }
  double x_phys(std::size_t i) const { return (double(i) - double(X - 1) / 2.0) * pixel_pitch; }
  double y_phys(std::size_t i) const { return (double(i) - double(Y - 1) / 2.0) * pixel_pitch; }
};

// A texture spans [center - extent/2, center + extent/2] in world units with
// texel centers at half-pixel offsets. Without a mask the layer is an
// infinite opaque plane that reads `out_of_bounds` outside the extent; with a
// mask only masked-in texels are opaque and the outside is transparent.
struct Texture {
  Image<double> values;
  Image<unsigned char> mask;
  double width = 1.0;
  double height = 1.0;
  double center_x = 0.0;
  double center_y = 0.0;
  double out_of_bounds = 0.0;

  bool has_mask() const { return mask.size() > 0; }
  // Bilinear sample at world coordinate (xw, yw); returns false when the ray
  // passes through a transparent part of the layer.
  bool sample(double xw, double yw, double& value) const;
};

struct LayerSpec {
  double depth = 0.0;
  Texture texture;
};

struct SceneSpec {
  std::vector<LayerSpec> layers;
  double background = 0.0;

  void validate(double z0) const;
};

inline double scale_factor(double z, double z0) { return 1.0 + z / z0; }

// Per ray, the nearest opaque layer wins; no blur, Lambertian.
LightField4D<double> render_lf(const SceneSpec& scene, const OpticsConfig& optics);

// Monocular image of a single texture whose lateral sampling stride is
// `scale` (s(z) for a real plane). Negative scales give the mirrored virtual
// observations that arise for virtual-slit equivalents behind the camera.
Image<double> render_view_at_scale(const Texture& texture, double scale,
                                   const OpticsConfig& optics);

// du/dx of the line traced by a point at depth z in an EPI; +/-inf at z = 0.
double epi_line_slope(double z, double z0);

// Pixel shift per angular step for a point at depth z.
double disparity_pixels(double z, const OpticsConfig& optics);

// Depth at which ordinary imaging matches the virtual-slit sampling rate of a
// plane at z_vsi.
inline double vsi_equivalent_depth(double z_vsi, double z0) { return -z_vsi - z0; }

struct SlopeFitOptions {
  double theta_min_deg = 0.5;
  double theta_max_deg = 179.5;
  double coarse_step_deg = 0.25;
  double fine_step_deg = 0.001;
  double bin_width = 0.5;
};

// Dominant orientation of a 2D plane as d(row)/d(col). Intensities are
// integrated along every candidate direction (binned by their projection on
// its normal); the direction whose profile has the largest between-bin
// variance wins.
// Coarse sweep over [theta_min, theta_max] then a fine sweep around the peak.
double fit_epi_slope(const Image<double>& plane, const SlopeFitOptions& options = {});

}  // namespace lfx::optics
