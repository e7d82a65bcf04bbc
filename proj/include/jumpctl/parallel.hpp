#pragma once

#include <functional>

namespace jumpctl {

/// Calls body(i) for i in [0, n) on up to `jobs` threads (0 = hardware
/// concurrency). The first exception is rethrown after all workers stop.
void parallel_for(int n, int jobs, const std::function<void(int)>& body);

}  // namespace jumpctl
