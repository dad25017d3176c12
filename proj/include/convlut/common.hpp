#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace convlut {

/// Raised when a file exists but its contents do not parse. Carries the byte
/// offset at which parsing failed.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

/// File could not be opened, read or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

inline int log2_exact(int v) {
    int k = 0;
    while ((1 << k) < v) ++k;
    return k;
}

/// Round half away from zero.
inline double round_half_away(double v) { return v < 0.0 ? -std::floor(-v + 0.5) : std::floor(v + 0.5); }

inline std::uint8_t clamp_u8(double v) {
    const double r = round_half_away(v);
    return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
}

/// Deterministic generator. Distributions are implemented here rather than
/// through <random> adaptors so sequences are identical across standard
/// libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ^ 0x9E3779B97F4A7C15ull) {}

    std::uint64_t next_u64() {
        // splitmix64
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    int uniform_int(int lo, int hi_inclusive) {
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi_inclusive - lo) + 1));
    }

    /// Standard normal via Box-Muller.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

private:
    std::uint64_t state_;
};

inline int resolve_threads(int threads) {
    if (threads > 0) return threads;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs fn(begin, end) over contiguous chunks of [0, count). Chunk
/// boundaries never influence results as long as fn writes disjoint output.
inline void parallel_for(int count, int threads, const std::function<void(int, int)>& fn) {
    const int n = std::min(resolve_threads(threads), std::max(count, 1));
    if (n <= 1 || count <= 1) {
        fn(0, count);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    pool.reserve(static_cast<std::size_t>(n));
    const int chunk = (count + n - 1) / n;
    for (int t = 0; t < n; ++t) {
        const int b = t * chunk;
        const int e = std::min(count, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, &errors, t, b, e] {
            try {
                fn(b, e);
            } catch (...) {
                errors[static_cast<std::size_t>(t)] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& err : errors)
        if (err) std::rethrow_exception(err);
}

}  // namespace convlut
