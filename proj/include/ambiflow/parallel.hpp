#pragma once

#include <cstddef>
#include <functional>

namespace ambiflow {

/// Worker count: AMBIFLOW_THREADS if set to a positive integer, otherwise
/// the hardware concurrency (at least 1).
std::size_t thread_count();

/// Calls fn(i) for every i in [0, n) on up to thread_count() threads. Each
/// index is handled exactly once; the first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace ambiflow
