#pragma once

#include <cstddef>
#include <functional>

namespace dalign {

// Worker cap: DALIGN_THREADS when set and positive, else the hardware count.
std::size_t worker_count();

// Runs fn(i) for i in [0, n) across up to worker_count() threads. Each index
// is processed by exactly one call, so results written per index are
// independent of scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace dalign
