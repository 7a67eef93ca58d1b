#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace vesselseg::nn {

/// Worker count for parallel_for. Defaults to 1; every output element is
/// computed serially by exactly one worker, so results are bitwise identical
/// for any thread count.
int num_threads();
void set_num_threads(int n);

namespace detail {
inline int& thread_count_ref() {
    static int n = 1;
    return n;
}
}  // namespace detail

inline int num_threads() { return detail::thread_count_ref(); }

inline void set_num_threads(int n) { detail::thread_count_ref() = std::max(1, n); }

/// Runs fn over [0,n) split into contiguous chunks, one per worker.
template <class Fn>
void parallel_for(int64_t n, const Fn& fn) {
    const int workers = std::min<int64_t>(num_threads(), n);
    if (workers <= 1) {
        if (n > 0) fn(int64_t{0}, n);
        return;
    }
    const int64_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> threads;
    threads.reserve(static_cast<size_t>(workers));
    for (int t = 0; t < workers; ++t) {
        const int64_t lo = t * chunk;
        const int64_t hi = std::min<int64_t>(n, lo + chunk);
        if (lo >= hi) break;
        threads.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    for (auto& th : threads) th.join();
}

}  // namespace vesselseg::nn
