#pragma once

#include <cstddef>
#include <functional>

namespace jamident {

// Worker count: hardware concurrency, capped by JAMIDENT_THREADS when set to
// a positive integer. Always at least 1.
std::size_t worker_count();

// Calls fn(worker, i) for every i in [0, n). Items are dealt to workers in
// contiguous blocks, so worker w only ever sees its own block. The first
// exception thrown by any worker is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t, std::size_t)>& fn);

} // namespace jamident
