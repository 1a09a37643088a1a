#pragma once

#include <cstddef>
#include <functional>

namespace ntk {

// Worker count: NTKLAB_THREADS if set, else the hardware concurrency.
unsigned default_threads();

// Runs fn(i) for i in [0, count) on up to `threads` workers. Work items are
// handed out in index order; callers write results to per-index slots so the
// outcome does not depend on scheduling. The first exception is rethrown.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace ntk
