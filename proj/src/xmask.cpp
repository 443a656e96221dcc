#include "lfx/model/xmask.hpp"

#include <cmath>

#include "lfx/error.hpp"

namespace lfx::model {

AttentionMask build_xmask(std::size_t S, std::size_t L, double d_max) {
  if (S == 0 || L == 0) throw ShapeError("build_xmask: S and L must be >= 1");
  if (!(d_max > 0.0)) throw ConfigError("build_xmask: d_max must be > 0");
  const auto n = static_cast<Eigen::Index>(S * L);
  AttentionMask m(n, n);
  const double blocked = -std::numeric_limits<double>::infinity();
  for (Eigen::Index q = 0; q < n; ++q)
    for (Eigen::Index k = 0; k < n; ++k)
      m(q, k) = xmask_admits(long(q) / long(L), long(q) % long(L), long(k) / long(L),
                             long(k) % long(L), d_max)
                    ? 0.0
                    : blocked;
  return m;
}

std::size_t admitted_count(const AttentionMask& mask) {
  return static_cast<std::size_t>((mask.array() == 0.0).count());
}

}  // namespace lfx::model
