#pragma once

#include <cstddef>
#include <functional>

namespace sglab {

/// Worker cap from SGLAB_THREADS, else the hardware core count (at least 1).
std::size_t worker_count();

/// Calls fn(i) for i in [0, n) on up to worker_count() threads. Each index runs
/// exactly once; the first exception thrown is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace sglab
