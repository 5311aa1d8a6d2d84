#pragma once

// Work queue over run indices. Runs are handed out in fixed blocks from an
// atomic counter; each result lands in its own slot, so the output does not
// depend on the worker count or on scheduling.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "pam/error.hpp"

namespace pam {

inline constexpr const char* kWorkersEnv = "PAM_WORKERS";

/// Worker count from PAM_WORKERS, else the hardware concurrency.
inline unsigned default_workers() {
    if (const char* env = std::getenv(kWorkersEnv); env != nullptr && *env != '\0') {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<unsigned>(v);
        } catch (const std::exception&) {
        }
        throw ValidationError(std::string(kWorkersEnv) + ": expected a positive integer, got '" + env + "'");
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Calls body(i) for every i in [0, n) on `workers` threads. The first
/// exception stops the hand-out of further blocks and is rethrown.
inline void parallel_for(std::uint64_t n, unsigned workers, const std::function<void(std::uint64_t)>& body,
                         std::uint64_t block = 16) {
    if (n == 0) return;
    block = std::max<std::uint64_t>(1, block);
    const std::uint64_t blocks = (n + block - 1) / block;
    workers = std::max(1u, static_cast<unsigned>(std::min<std::uint64_t>(workers, blocks)));
    std::atomic<std::uint64_t> next{0};
    std::atomic<bool> stop{false};
    std::exception_ptr failure;
    std::mutex mu;
    auto work = [&] {
        for (std::uint64_t b; !stop.load(std::memory_order_relaxed) && (b = next.fetch_add(1)) < blocks;) {
            try {
                const std::uint64_t end = std::min(n, (b + 1) * block);
                for (std::uint64_t i = b * block; i < end; ++i) body(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
                stop = true;
            }
        }
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    }
    if (failure) std::rethrow_exception(failure);
}

/// results[i] = f(i) for i in [0, n).
template <class F>
auto parallel_map(std::uint64_t n, unsigned workers, F&& f, std::uint64_t block = 16) {
    using R = std::invoke_result_t<F&, std::uint64_t>;
    std::vector<R> out(n);
    parallel_for(n, workers, [&](std::uint64_t i) { out[i] = f(i); }, block);
    return out;
}

}  // namespace pam
