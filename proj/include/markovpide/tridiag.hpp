#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace markovpide {

/// Thomas algorithm for a tridiagonal system; lower/upper are the sub- and
/// super-diagonals (lower[i] multiplies x[i-1] in row i). No pivoting: the
/// schemes assembled here are diagonally dominant unless the discrete operator
/// degenerates, which is reported as a failure.
class TridiagSolver {
public:
    void resize(std::size_t n) {
        cp_.resize(n);
        dp_.resize(n);
    }

    void solve(const std::vector<double>& lower, const std::vector<double>& diag,
               const std::vector<double>& upper, const std::vector<double>& rhs,
               std::vector<double>& x) {
        const std::size_t n = diag.size();
        resize(n);
        if (std::abs(diag[0]) < kPivotTol) throw std::runtime_error("tridiagonal solve: zero pivot (degenerate discrete operator)");
        cp_[0] = upper[0] / diag[0];
        dp_[0] = rhs[0] / diag[0];
        for (std::size_t i = 1; i < n; ++i) {
            const double denom = diag[i] - lower[i] * cp_[i - 1];
            if (std::abs(denom) < kPivotTol)
                throw std::runtime_error("tridiagonal solve: zero pivot (degenerate discrete operator)");
            cp_[i] = upper[i] / denom;
            dp_[i] = (rhs[i] - lower[i] * dp_[i - 1]) / denom;
        }
        x.resize(n);
        x[n - 1] = dp_[n - 1];
        for (std::size_t i = n - 1; i-- > 0;) x[i] = dp_[i] - cp_[i] * x[i + 1];
    }

private:
    static constexpr double kPivotTol = 1e-300;
    std::vector<double> cp_, dp_;
};

}  // namespace markovpide
