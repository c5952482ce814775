#pragma once

#include <cstdint>
#include <functional>

namespace esr {

// Runs fn(begin, end) over [0, count) split into at most `threads` contiguous
// chunks. threads <= 1 runs inline on the calling thread.
void parallel_for(int64_t count, int threads, const std::function<void(int64_t, int64_t)>& fn);

int hardware_threads();

}  // namespace esr
