#pragma once

#include <cstddef>
#include <functional>

namespace bayesmesh {

/// Worker cap: BAYESMESH_WORKERS if set and positive, else the hardware
/// concurrency (at least 1).
std::size_t default_workers();

/// Splits [0, n) into at most `workers` contiguous chunks and runs
/// fn(begin, end) on each, one thread per chunk. Exceptions from any chunk
/// are rethrown after all threads join. workers == 0 means default_workers().
void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace bayesmesh
