#pragma once

#include <cstddef>
#include <functional>

namespace otsel {

/// Number of worker threads used by parallel_for. Defaults to the hardware
/// concurrency; 1 disables threading.
void set_thread_count(std::size_t n);
std::size_t thread_count();

/// Calls body(i) for i in [0, n). Iterations are split into contiguous
/// chunks, one per worker. Results must be written to per-index slots so the
/// outcome does not depend on scheduling. The first exception thrown by any
/// worker is rethrown on the calling thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace otsel
