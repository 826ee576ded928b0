#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <random>
#include <thread>
#include <vector>

namespace asyncflow {

/// Runs fn(0..count-1) on up to `threads` workers. The first exception thrown
/// by any task is rethrown after all workers stop.
inline void parallel_for(std::size_t count, std::size_t threads,
                         const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (std::size_t i; !failed && (i = next++) < count;) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                failed = true;
            }
        }
    };
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < std::min(threads, count); ++t) pool.emplace_back(worker);
    pool.clear();
    if (error) std::rethrow_exception(error);
}

/// Independent generator for task `index` of a run seeded with `seed`.
inline std::mt19937_64 task_rng(std::uint64_t seed, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return std::mt19937_64(seq);
}

}  // namespace asyncflow
