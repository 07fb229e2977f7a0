#pragma once

#include <cstddef>
#include <functional>

namespace strlab {

/// Worker bound from STR_LAB_THREADS, defaulting to the hardware concurrency.
std::size_t worker_count();

/// Runs body(i) for i in [0, n) across up to worker_count() threads. Each
/// index writes only its own output slot, so results do not depend on the
/// thread count. The first exception thrown is rethrown on the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace strlab
