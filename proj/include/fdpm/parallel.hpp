#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace fdpm {

// Process-wide worker count used by the parallel maps below.
// 0 means "use hardware_concurrency()".
inline std::size_t& thread_count() {
    static std::size_t n = 0;
    return n;
}

inline std::size_t effective_threads(std::size_t n_items) {
    std::size_t n = thread_count();
    if (n == 0) n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    return std::min(n, n_items);
}

// Static-chunked parallel loop.  Work items must be independent; the body
// writes only to its own slot, so results are deterministic regardless of
// the worker count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& body) {
    std::size_t workers = effective_threads(n);
    if (workers <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex err_mutex;
    auto run = [&]() {
        const std::size_t chunk = std::max<std::size_t>(1, n / (workers * 8));
        for (;;) {
            std::size_t begin = next.fetch_add(chunk);
            if (begin >= n) return;
            std::size_t end = std::min(n, begin + chunk);
            try {
                for (std::size_t i = begin; i < end; ++i) body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(run);
    run();
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace fdpm
