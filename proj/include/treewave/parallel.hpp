#pragma once

#include <cstddef>
#include <functional>

namespace treewave {

/// Worker count from TREEWAVE_THREADS: unset means the hardware concurrency,
/// 0 or 1 means serial.
std::size_t thread_budget();

/// Calls fn(i) for i < n on up to thread_budget() threads. Results must be
/// written to per-index slots. If any call throws, the exception of the
/// lowest failing index is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace treewave
