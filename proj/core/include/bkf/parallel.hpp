#pragma once

#include <cstddef>
#include <functional>

namespace bkf {

/// Worker count: BKF_THREADS if set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
std::size_t thread_count();

/// Runs fn(i) for i in [0, n) on up to `threads` threads. Work items are
/// claimed in index order; if any calls throw, the exception of the lowest
/// failing index is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace bkf
