#pragma once

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace dlspf {

// Runs fn over contiguous chunks of [0, n). Results must not depend on the
// chunking; per-item RNG substreams keep that contract for stochastic work.
inline void parallel_for_chunks(std::size_t n, std::size_t workers,
                                const std::function<void(std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    if (workers <= 1 || n == 1) {
        fn(0, n);
        return;
    }
    const std::size_t k = std::min(workers, n);
    const std::size_t chunk = (n + k - 1) / k;
    std::vector<std::thread> threads;
    threads.reserve(k);
    for (std::size_t w = 0; w < k; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(lo + chunk, n);
        if (lo >= hi) break;
        threads.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    for (auto& t : threads) t.join();
}

}  // namespace dlspf
