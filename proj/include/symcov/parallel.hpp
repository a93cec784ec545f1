#pragma once

#include <cstddef>
#include <functional>

namespace symcov {

// Number of workers to use: `requested` if positive, otherwise the hardware
// concurrency (at least 1).
[[nodiscard]] unsigned resolve_threads(int requested) noexcept;

// Calls body(i) for every i in [0, count) using up to `threads` workers.
// Items are claimed dynamically, so bodies must write only to per-item
// storage. The first exception thrown by any body is rethrown here.
void parallel_for(std::size_t count, unsigned threads,
                  const std::function<void(std::size_t)>& body);

}  // namespace symcov
