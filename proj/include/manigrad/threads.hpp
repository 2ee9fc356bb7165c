#pragma once
// Input-level parallelism. MANIGRAD_THREADS caps the worker count (default:
// hardware concurrency). Work items must write disjoint output slots; the
// static index partition below then keeps results byte-identical for any
// thread count.
#include <cstdint>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>
#include <exception>
#include <mutex>

namespace manigrad {

inline int max_threads() {
    if (const char* env = std::getenv("MANIGRAD_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
}

// Calls f(i) for i in [0, n). Deterministic given disjoint writes.
template <class F>
void parallel_for(std::int64_t n, F&& f) {
    const int nt = static_cast<int>(std::min<std::int64_t>(max_threads(), n));
    if (nt <= 1) {
        for (std::int64_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::vector<std::thread> workers;
    std::exception_ptr first_error = nullptr;
    std::mutex err_mu;
    for (int t = 0; t < nt; ++t) {
        workers.emplace_back([&, t] {
            try {
                for (std::int64_t i = t; i < n; i += nt) f(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mu);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& w : workers) w.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace manigrad
