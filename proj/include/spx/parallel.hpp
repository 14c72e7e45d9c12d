#pragma once

#include <cstddef>
#include <functional>

namespace spx {

// Number of worker threads a module may use. 0 means every hardware thread.
struct Parallelism {
    unsigned threads = 1;

    unsigned resolved() const noexcept;
};

// Run fn(i) for i in [0, n). Work is split into contiguous chunks; fn must only
// write to per-index state so results do not depend on the thread count.
void parallel_for(std::size_t n, Parallelism par, const std::function<void(std::size_t)> & fn);

} // namespace spx
