#pragma once

#include <cstddef>
#include <functional>

namespace nvist {

/// Worker count from NVIST_THREADS (default: hardware concurrency, at least 1).
std::size_t thread_count();

/// Runs fn(i) for i in [0, n) over thread_count() workers; rethrows the first
/// exception after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace nvist
