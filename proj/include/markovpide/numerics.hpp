#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace markovpide {

/// Pairwise (cascade) summation. Deterministic for a fixed element order and
/// accurate to O(log n) rounding errors, which keeps Monte Carlo averages
/// independent of how path batches were scheduled.
inline double pairwise_sum(std::span<const double> xs) {
    const std::size_t n = xs.size();
    if (n <= 32) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(xs.subspan(0, half)) + pairwise_sum(xs.subspan(half));
}

struct MeanStderr {
    double mean = 0.0;
    double std_error = 0.0;
};

/// Two-pass sample mean and standard error of the mean.
inline MeanStderr mean_stderr(std::span<const double> xs) {
    const std::size_t n = xs.size();
    if (n < 2) throw std::invalid_argument("mean_stderr: need at least 2 samples");
    const double mean = pairwise_sum(xs) / static_cast<double>(n);
    std::vector<double> sq(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = xs[i] - mean;
        sq[i] = d * d;
    }
    const double var = pairwise_sum(sq) / static_cast<double>(n - 1);
    return {mean, std::sqrt(var / static_cast<double>(n))};
}

/// Closed intervals [lo1,hi1], [lo2,hi2] intersect.
inline bool intervals_overlap(double lo1, double hi1, double lo2, double hi2) {
    return lo1 <= hi2 && lo2 <= hi1;
}

}  // namespace markovpide
