#pragma once

#include <cstddef>
#include <functional>

namespace tiltfield {

/// Worker count from TILTFIELD_WORKERS, or 1 when unset or invalid.
int default_workers();

/// Splits [0, n) into `workers` contiguous chunks and runs fn(begin, end, worker)
/// on each, worker 0 on the calling thread. Chunk boundaries depend only on n and
/// the worker count, so position-indexed outputs are deterministic.
void parallel_for(std::size_t n, int workers,
                  const std::function<void(std::size_t begin, std::size_t end, int worker)>& fn);

}  // namespace tiltfield
