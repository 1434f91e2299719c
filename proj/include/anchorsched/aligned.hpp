#pragma once

#include <Eigen/Core>
#include <vector>

namespace anchorsched {

// Numeric buffers that Eigen kernels read through Maps use this allocator so
// every instance gets the same alignment. Heap-dependent alignment would let
// two identical computations round differently (vector peeling changes the
// reduction order), breaking bit-level reproducibility.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

}  // namespace anchorsched
