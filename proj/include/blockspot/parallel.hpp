#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace blockspot {

// Worker cap: BLOCKSPOT_THREADS if set, else hardware concurrency.
inline int max_threads() {
    if (const char* env = std::getenv("BLOCKSPOT_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(i) for i in [0, n). Results must be written to per-index storage;
// callers do any order-sensitive reduction afterwards.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
    int workers = std::min(n, max_threads());
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&fn, w, workers, n]() {
            for (int i = w; i < n; i += workers) fn(i);
        });
    }
    for (std::thread& t : pool) t.join();
}

}  // namespace blockspot
