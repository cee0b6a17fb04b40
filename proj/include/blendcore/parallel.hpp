#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace blendcore {

// Process-wide worker count. BLENDCORE_THREADS overrides whatever was set
// programmatically (e.g. via the CLI --threads flag).
inline int& thread_count_ref() {
    static int count = 1;
    return count;
}

inline void set_thread_count(int n) { thread_count_ref() = n < 1 ? 1 : n; }

inline int thread_count() {
    if (const char* env = std::getenv("BLENDCORE_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return thread_count_ref();
}

// Splits [begin, end) into contiguous per-thread blocks. Each index is handled
// by exactly one thread and the work for one index must only write state owned
// by that index, so results are bit-identical for every thread count.
inline void parallel_for(std::int64_t begin, std::int64_t end,
                         const std::function<void(std::int64_t)>& fn) {
    const std::int64_t count = end - begin;
    int threads = thread_count();
    if (threads > count) threads = static_cast<int>(count);
    if (threads <= 1) {
        for (std::int64_t i = begin; i < end; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    const std::int64_t chunk = (count + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        const std::int64_t lo = begin + t * chunk;
        const std::int64_t hi = lo + chunk < end ? lo + chunk : end;
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace blendcore
