#pragma once

#include <cstddef>
#include <functional>

namespace cdp {

/// Runs fn(0..n-1) across up to `threads` workers (0 = hardware default).
/// Work items must be independent and write only to their own output slots,
/// which keeps results identical for every thread count. The first exception
/// thrown by a worker is rethrown on the calling thread.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace cdp
