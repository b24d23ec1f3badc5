#pragma once

#include <cstddef>
#include <functional>

namespace mvhoi {

// Worker count from MVHOI_THREADS (0 or unset = hardware concurrency).
std::size_t worker_count();

// Runs fn(i) for i in [0, n). Callers must write results into per-index
// slots and reduce them afterwards in index order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace mvhoi
