#pragma once

#include <cstddef>
#include <functional>

namespace m2cnn {

/// Worker count for intra-op parallelism. Reads M2CNN_THREADS once; defaults
/// to the hardware concurrency.
std::size_t thread_count();

/// Overrides the worker count for the remainder of the process (0 restores
/// the environment default).
void set_thread_count(std::size_t n);

/// Runs body(i) for i in [0, n). Every index is processed exactly once and
/// body must only write state owned by index i, so results do not depend on
/// the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace m2cnn
