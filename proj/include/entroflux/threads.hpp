#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace entroflux {

// Global worker cap (set from --threads). Shard boundaries never depend on
// this value, so results are identical for any thread count.
inline int& max_threads() {
    static int cap = static_cast<int>(std::thread::hardware_concurrency());
    return cap;
}

// Runs fn(0..nshards-1), possibly in parallel. Each shard must write only to
// its own slot; the caller reduces in shard order afterwards.
inline void parallel_shards(int nshards, const std::function<void(int)>& fn) {
    const int workers = std::min(std::max(1, max_threads()), nshards);
    if (workers <= 1) {
        for (int i = 0; i < nshards; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= nshards) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(err_mu);
                    if (!err) err = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace entroflux
