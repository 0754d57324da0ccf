#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace smlab {

/// Runs f(k) for k in [0, n) on up to `threads` workers. Tasks are handed out
/// dynamically; callers write results into per-task slots so the outcome
/// does not depend on scheduling. The first exception (lowest k) is rethrown.
template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& f)
{
    if (threads <= 1 || n <= 1) {
        for (std::size_t k = 0; k < n; ++k) {
            f(k);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::exception_ptr error;
    std::size_t error_k = n;
    auto worker = [&] {
        for (std::size_t k = next++; k < n; k = next++) {
            try {
                f(k);
            } catch (...) {
                std::lock_guard lock(mu);
                if (k < error_k) {
                    error_k = k;
                    error = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    const auto count = std::min<std::size_t>(threads, n);
    pool.reserve(count);
    for (std::size_t t = 0; t < count; ++t) {
        pool.emplace_back(worker);
    }
    for (auto& t : pool) {
        t.join();
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

} // namespace smlab
