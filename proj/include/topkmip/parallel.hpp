#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <span>
#include <thread>
#include <vector>

namespace topkmip {

/// Resolve a worker-count request; 0 means "all hardware threads".
inline unsigned resolve_workers(unsigned requested) {
    if (requested != 0)
        return requested;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

/**
 * Run fn(i) for every i in [0, n), split into contiguous blocks over
 * `workers` threads. Each index is visited exactly once, so callers that
 * write only to index-owned output get results independent of the worker
 * count.
 */
template <typename Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
    workers = resolve_workers(workers);
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::size_t n_threads = std::min<std::size_t>(workers, n);
    std::vector<std::thread> threads;
    threads.reserve(n_threads);
    std::exception_ptr failure;
    std::mutex failure_mutex;
    for (std::size_t t = 0; t < n_threads; ++t) {
        std::size_t begin = n * t / n_threads;
        std::size_t end = n * (t + 1) / n_threads;
        threads.emplace_back([&, begin, end] {
            try {
                for (std::size_t i = begin; i < end; ++i)
                    fn(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure)
                    failure = std::current_exception();
            }
        });
    }
    for (auto& th : threads)
        th.join();
    if (failure)
        std::rethrow_exception(failure);
}

/// Pairwise (tree) summation; the association order depends only on the length.
inline double pairwise_sum(std::span<const double> xs) {
    if (xs.empty())
        return 0.0;
    if (xs.size() <= 8) {
        double s = 0.0;
        for (double x : xs)
            s += x;
        return s;
    }
    std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

} // namespace topkmip
