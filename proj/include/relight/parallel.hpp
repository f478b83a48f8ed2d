#pragma once

#include <cstdint>
#include <functional>

namespace relight {

// Worker count used by parallel_for. 0 selects hardware concurrency. The
// initial value comes from the RELIGHT_THREADS environment variable.
void set_thread_count(int threads);
int thread_count();

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks; each
// index is handled by exactly one worker, so results never depend on the
// thread count as long as fn(i) only writes outputs owned by i.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn,
                  std::int64_t min_per_thread = 1);

}  // namespace relight
