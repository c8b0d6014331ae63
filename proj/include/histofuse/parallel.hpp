#pragma once

#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace histofuse {

/// Worker cap: HISTOFUSE_THREADS when set (>=1), else hardware concurrency.
inline std::size_t max_workers() {
    if (const char* env = std::getenv("HISTOFUSE_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<std::size_t>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

/// Run fn(0..n-1) on up to max_workers() threads. Indices are striped, each
/// visited exactly once; callers that need ordered results write into
/// index-addressed slots so the outcome matches a serial run.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min(max_workers(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    for (auto& t : pool) t.join();
}

}  // namespace histofuse
