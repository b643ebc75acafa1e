#pragma once

#include <cstdint>
#include <functional>

namespace odil {

/// Worker count for internal loops: ODIL_THREADS if set, otherwise the
/// hardware concurrency. Returns 1 inside a parallel_for body.
int thread_count();

/// Overrides the worker count for the calling process (0 restores default).
void set_thread_count(int n);

/// Splits [0, n) into contiguous chunks and runs `body(begin, end)` on each.
/// Chunks write to disjoint ranges, so results do not depend on the thread
/// count.
void parallel_for(std::int64_t n, std::int64_t min_chunk,
                  const std::function<void(std::int64_t, std::int64_t)>& body);

}  // namespace odil
