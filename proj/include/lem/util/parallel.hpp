// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace lem {

// Worker count: LEM_NUM_THREADS if set and positive, else hardware threads.
std::size_t num_threads();

// Splits [0, n) into contiguous chunks, one per worker, and calls
// fn(begin, end) on each. Chunk boundaries depend only on n and the worker
// count, so callers that reduce per-chunk results in chunk order get
// reproducible totals. Exceptions from workers are rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace lem
