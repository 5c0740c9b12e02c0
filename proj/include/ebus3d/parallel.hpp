#pragma once

// Deterministic work sharing: items are independent and write disjoint
// outputs, so results cannot depend on the worker count. EBUS3D_THREADS
// picks the count; the default of 1 keeps runs fully sequential.

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace ebus3d {

inline int& worker_count_override() {
    static int v = 0;
    return v;
}

inline int worker_count() {
    if (worker_count_override() > 0) return worker_count_override();
    const char* env = std::getenv("EBUS3D_THREADS");
    if (!env) return 1;
    const int n = std::atoi(env);
    if (n < 1) return 1;
    return n > 64 ? 64 : n;
}

inline void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
    const int workers = worker_count();
    if (workers <= 1 || n <= 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            for (std::int64_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace ebus3d
