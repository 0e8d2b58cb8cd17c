#pragma once

#include <cstddef>
#include <functional>

namespace fedlwr {

// Runs body(i) for i in [0, n) on up to `threads` workers. Each index runs
// exactly once; the first exception is rethrown after all workers join.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body);

// FEDLWR_THREADS if set to a positive integer, else 1.
unsigned threads_from_env();

}  // namespace fedlwr
