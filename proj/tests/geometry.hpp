#pragma once

// Ground-truth pixel correspondences of a single-plane scene, enumerated from
// the projection geometry of the renderer, scored against the X-mask.

#include <cmath>

#include "lfx/model/xmask.hpp"
#include "lfx/optics.hpp"

namespace lfx::testing {

struct CaptureCount {
  std::size_t pairs = 0;
  std::size_t admitted = 0;
};

// For every pixel of the central u-view on the central EPI-UX row, the world
// point on the plane at `depth` is projected into every view u; the nearest
// pixel column is its correspondence. Every (view, view) pair of
// correspondences that stays inside the image is looked up in the mask.
inline CaptureCount capture_on_mask(const optics::OpticsConfig& o, double depth,
                                    const model::AttentionMask& mask) {
  const double s = optics::scale_factor(depth, o.z0);
  const double k = depth / o.z0;
  const std::size_t S = o.U, L = o.X;
  CaptureCount out;
  for (std::size_t i = 0; i < L; ++i) {
    const double xw = s * o.x_phys(i) - o.u_phys(S / 2) * k;
    std::vector<long> col(S);
    bool inside = true;
    for (std::size_t a = 0; a < S; ++a) {
      const double xp = (xw + o.u_phys(a) * k) / s;
      col[a] = std::lround(xp / o.pixel_pitch + double(L - 1) / 2.0);
      inside = inside && col[a] >= 0 && col[a] < long(L);
    }
    if (!inside) continue;
    for (std::size_t aq = 0; aq < S; ++aq)
      for (std::size_t ak = 0; ak < S; ++ak) {
        ++out.pairs;
        const auto q = Eigen::Index(aq * L + std::size_t(col[aq]));
        const auto kk = Eigen::Index(ak * L + std::size_t(col[ak]));
        if (mask(q, kk) == 0.0) ++out.admitted;
      }
  }
  return out;
}

}  // namespace lfx::testing
