#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace vosh {

/// Worker count used by pixel-parallel loops; 1 runs inline.
inline std::atomic<unsigned>& thread_count() {
    static std::atomic<unsigned> n{1};
    return n;
}

inline void set_thread_count(unsigned n) { thread_count() = std::max(1u, n); }

/// Calls fn(begin, end) over a static partition of [0, n). Results must not
/// depend on the partition; callers write to disjoint outputs.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const unsigned threads = std::min<std::size_t>(thread_count().load(), std::max<std::size_t>(n, 1));
    if (threads <= 1) {
        fn(std::size_t{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
        const std::size_t b = t * chunk, e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
    for (auto& th : pool) th.join();
}

}  // namespace vosh
