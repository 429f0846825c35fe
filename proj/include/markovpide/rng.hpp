#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace markovpide {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}
}  // namespace detail

/// One independent random stream per (seed, stream) pair. Streams for distinct
/// path indices are decorrelated by double splitmix64 mixing, so batches of
/// paths can be generated in any order or in parallel and still reproduce
/// bitwise.
class PathRng {
public:
    PathRng(std::uint64_t seed, std::uint64_t stream)
        : engine_(detail::splitmix64(detail::splitmix64(seed) ^
                                     (0x9E3779B97F4A7C15ULL * (stream + 1)))) {}

    /// Uniform on [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller; the second member of each pair is
    /// cached, so draws come in a fixed per-stream order.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    /// Exponential with the given rate.
    double exponential(double rate) {
        return -std::log(1.0 - uniform()) / rate;
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace markovpide
