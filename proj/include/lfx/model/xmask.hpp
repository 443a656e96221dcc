#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdlib>
#include <limits>

namespace lfx::model {

// Additive attention mask over tokens indexed a*L + p (angle a, spatial p).
using AttentionMask = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kUnbounded = std::numeric_limits<double>::infinity();

// Key (ak, pk) is visible from query (aq, pq) when |pk - pq| <= d_max*|ak - aq|.
// Within one angle only the query position itself is visible, unless d_max
// is unbounded.
inline bool xmask_admits(long aq, long pq, long ak, long pk, double d_max) {
  if (d_max == kUnbounded) return true;
  const long da = std::labs(ak - aq);
  const long dp = std::labs(pk - pq);
  if (da == 0) return dp == 0;
  return double(dp) <= d_max * double(da);
}

// (S*L) x (S*L) matrix with 0 for admitted pairs and -inf elsewhere.
AttentionMask build_xmask(std::size_t S, std::size_t L, double d_max);

std::size_t admitted_count(const AttentionMask& mask);

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> mask_as(
    const AttentionMask& m) {
  return m.template cast<Scalar>();
}

}  // namespace lfx::model
