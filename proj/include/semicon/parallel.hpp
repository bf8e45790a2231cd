#pragma once

#include <cstddef>
#include <functional>

namespace semicon {

/// Worker count used by parallel_for. Reads SEMICON_THREADS on first use
/// (0 or unset = hardware concurrency).
std::size_t worker_count();

/// Overrides the worker count for the rest of the process (0 = auto).
void set_worker_count(std::size_t n);

/// Runs body(begin, end) over a static partition of [0, n). Each index is
/// visited by exactly one worker, so results equal sequential execution
/// whenever body writes only to index-owned outputs. Small ranges
/// (n * cost_hint below a fixed threshold) run inline.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t cost_hint = 1);

}  // namespace semicon
