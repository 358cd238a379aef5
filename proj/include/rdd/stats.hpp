#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <thread>
#include <vector>

namespace rdd {

struct Interval {
    double lower = 0.0;
    double upper = 0.0;

    double width() const noexcept { return upper - lower; }
    double center() const noexcept { return 0.5 * (lower + upper); }
    bool contains(double v) const noexcept { return lower <= v && v <= upper; }
};

double normal_cdf(double z) noexcept;
// 2 * (1 - Phi(|z|)); 1 when z == 0, with 0/0 mapped to 1.
double two_sided_normal_p(double estimate, double std_error) noexcept;
double normal_quantile(double p);
// 1.96 at the default 95% level, otherwise the exact normal quantile.
double critical_value(double level);

// SplitMix64 finaliser. Seeds for replication or permutation k are
// mix(master ^ mix(k + 1)), so every stream depends only on (master, k).
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept {
    return splitmix64(master ^ splitmix64(index + 1));
}

inline std::mt19937_64 stream_rng(std::uint64_t master, std::uint64_t index) {
    return std::mt19937_64(derive_seed(master, index));
}

unsigned worker_count() noexcept;

// Calls fn(i) for i in [0, n) across worker threads. fn must only write to
// slot i of whatever it fills, which keeps results independent of threading.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(worker_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace rdd
