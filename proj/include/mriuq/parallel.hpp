#pragma once

#include <cstddef>
#include <functional>

namespace mriuq {

// Upper bound on worker threads used by parallel_for (default 1).
std::size_t max_threads() noexcept;
void set_max_threads(std::size_t n) noexcept;

// Calls body(i) for i in [0, n). Work is split into contiguous chunks over at
// most max_threads() threads; the first exception thrown is rethrown after
// all workers finish. Callers write results into per-index slots and reduce
// them afterwards in index order, so results do not depend on thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

} // namespace mriuq
