#pragma once

#include <cstddef>
#include <functional>

namespace kiwiqe {

// Worker count: KIWIQE_THREADS when set (minimum 1), else the hardware
// concurrency.
std::size_t max_threads();

// Runs fn(0) .. fn(n-1) over static contiguous chunks. fn must only write
// to per-index state, so results never depend on the thread count. The
// first exception thrown by any call is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace kiwiqe
