#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "lfx/error.hpp"

namespace lfx::detail {

inline std::size_t product(std::span<const std::size_t> dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

inline std::vector<std::size_t> row_major_strides(std::span<const std::size_t> dims) {
  std::vector<std::size_t> s(dims.size(), 1);
  for (std::size_t i = dims.size(); i-- > 1;) s[i - 1] = s[i] * dims[i];
  return s;
}

// Output axis k is input axis perm[k]. Returns the destination shape.
inline std::vector<std::size_t> permuted_shape(std::span<const std::size_t> dims,
                                               std::span<const std::size_t> perm) {
  if (perm.size() != dims.size()) throw ShapeError("permute: rank mismatch");
  std::vector<bool> seen(dims.size(), false);
  std::vector<std::size_t> out(dims.size());
  for (std::size_t k = 0; k < perm.size(); ++k) {
    if (perm[k] >= dims.size() || seen[perm[k]]) throw ShapeError("permute: invalid axis order");
    seen[perm[k]] = true;
    out[k] = dims[perm[k]];
  }
  return out;
}

inline std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k) inv[perm[k]] = k;
  return inv;
}

// dst[i_0..i_{n-1}] = src[j] where j indexes the source at (i mapped through perm).
template <typename T>
void permute_copy(const T* src, T* dst, std::span<const std::size_t> dims,
                  std::span<const std::size_t> perm) {
  const auto out_dims = permuted_shape(dims, perm);
  const auto in_strides = row_major_strides(dims);
  const std::size_t rank = dims.size();
  const std::size_t total = product(dims);
  if (total == 0) return;
  if (rank == 0) {
    dst[0] = src[0];
    return;
  }
  std::vector<std::size_t> step(rank);
  for (std::size_t k = 0; k < rank; ++k) step[k] = in_strides[perm[k]];

  // Odometer over the output index; innermost axis copied in a tight loop.
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src_off = 0;
  const std::size_t inner = out_dims[rank - 1];
  const std::size_t inner_step = step[rank - 1];
  std::size_t o = 0;
  while (o < total) {
    const T* s = src + src_off;
    for (std::size_t i = 0; i < inner; ++i) dst[o + i] = s[i * inner_step];
    o += inner;
    std::size_t k = rank - 1;
    while (k-- > 0) {
      ++idx[k];
      src_off += step[k];
      if (idx[k] < out_dims[k]) break;
      src_off -= step[k] * out_dims[k];
      idx[k] = 0;
    }
  }
}

}  // namespace lfx::detail
