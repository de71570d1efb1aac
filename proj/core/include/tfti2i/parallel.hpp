#pragma once

#include <cstddef>
#include <functional>

namespace tfti2i {

/// Worker cap: TFTI2I_THREADS if set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
std::size_t thread_limit();

/// Runs fn(i) for i in [0, n) on up to thread_limit() threads. Callers write
/// results into per-index slots, so the outcome does not depend on scheduling.
/// The first exception thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace tfti2i
