#pragma once

#include <cstddef>
#include <functional>

namespace distgate {

/// Process-wide worker count used by parallel_for. 1 forces serial execution.
void set_thread_count(int threads);
int thread_count();

/// Runs body(i) for i in [0, n). Each index is handled by exactly one worker,
/// so callers that write per-index results and reduce them afterwards in index
/// order get output independent of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace distgate
