#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace lfx::detail {

// Training allocates and frees the same large activation buffers every step.
// Keeping them in the heap instead of fresh mmaps avoids page-fault storms.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);  // glibc maximum on 64-bit
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 512 << 20);
#endif
}

}  // namespace lfx::detail
