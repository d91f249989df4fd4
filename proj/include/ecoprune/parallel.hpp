#ifndef ECOPRUNE_PARALLEL_HPP
#define ECOPRUNE_PARALLEL_HPP

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace ecoprune {

// ECOPRUNE_THREADS caps worker count; default 1 keeps runs deterministic.
inline int max_threads() {
    const char* env = std::getenv("ECOPRUNE_THREADS");
    if (!env) return 1;
    int n = std::atoi(env);
    return n < 1 ? 1 : n;
}

// static block partition; results must be written to preallocated slots
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    int workers = max_threads();
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) {
        threads.emplace_back([&, w] {
            for (std::size_t i = static_cast<std::size_t>(w); i < n;
                 i += static_cast<std::size_t>(workers))
                body(i);
        });
    }
    for (auto& t : threads) t.join();
}

}  // namespace ecoprune

#endif
