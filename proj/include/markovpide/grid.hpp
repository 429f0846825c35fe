#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "markovpide/model.hpp"

namespace markovpide {

/// Uniform axis with n nodes on [lo, hi].
struct AxisSpec {
    double lo = 0.0, hi = 1.0;
    int n = 2;

    double step() const { return (hi - lo) / (n - 1); }
    double node(int i) const { return lo + i * step(); }

    /// Nearest node index if value sits on a node (within tol), else -1.
    int index_of(double x, double tol = 1e-9) const {
        const double s = (x - lo) / step();
        const int i = static_cast<int>(std::lround(s));
        if (i < 0 || i >= n) return -1;
        return std::abs(node(i) - x) <= tol * std::max(1.0, std::abs(hi - lo)) ? i : -1;
    }

    void validate(const char* name) const {
        if (n < 2) throw std::invalid_argument(std::string(name) + " axis needs at least 2 nodes");
        if (!(hi > lo)) throw std::invalid_argument(std::string(name) + " axis needs hi > lo");
    }
};

/// Solver grid over (t, z, l). Time nodes are t0 + m*dt, m = 0..n_t.  The l
/// axis must leave headroom of jump_cap jumps above (and, for negative jumps,
/// below) the initial l-range; destinations beyond the axis clamp to the
/// boundary value and are counted. The interior margins define the region on
/// which residuals, probes and regularity ladders are reported.
struct GridSpec {
    double t0 = 0.0, T = 1.0;
    int n_t = 100;             // number of time intervals
    std::vector<AxisSpec> z;   // 1 or 2 axes
    AxisSpec l;
    int jump_cap = 20;
    int margin_z = 1;
    int margin_l_lo = 0, margin_l_hi = 1;

    int dim() const { return static_cast<int>(z.size()); }
    double dt() const { return (T - t0) / n_t; }
    double t_node(int m) const { return t0 + m * dt(); }

    std::size_t nz_total() const {
        std::size_t p = 1;
        for (const auto& ax : z) p *= static_cast<std::size_t>(ax.n);
        return p;
    }
    std::size_t slice_size() const { return nz_total() * static_cast<std::size_t>(l.n); }
    std::size_t total_size() const { return slice_size() * static_cast<std::size_t>(n_t + 1); }

    // values layout: ((m * NZ + iz) * NL + il)
    std::size_t flat(int m, std::size_t iz, int il) const {
        return (static_cast<std::size_t>(m) * nz_total() + iz) * static_cast<std::size_t>(l.n) +
               static_cast<std::size_t>(il);
    }
    std::size_t slice_flat(std::size_t iz, int il) const {
        return iz * static_cast<std::size_t>(l.n) + static_cast<std::size_t>(il);
    }

    // flat z index <-> per-axis indices (row-major over z axes)
    void z_indices(std::size_t iz, int* idx) const {
        for (int a = dim() - 1; a >= 0; --a) {
            idx[a] = static_cast<int>(iz % static_cast<std::size_t>(z[a].n));
            iz /= static_cast<std::size_t>(z[a].n);
        }
    }
    std::size_t z_flat(const int* idx) const {
        std::size_t f = 0;
        for (int a = 0; a < dim(); ++a) f = f * static_cast<std::size_t>(z[a].n) + static_cast<std::size_t>(idx[a]);
        return f;
    }
    void z_coords(std::size_t iz, Vec& out) const {
        int idx[2] = {0, 0};
        z_indices(iz, idx);
        out.resize(z.size());
        for (int a = 0; a < dim(); ++a) out[static_cast<std::size_t>(a)] = z[static_cast<std::size_t>(a)].node(idx[a]);
    }

    bool interior_z(const int* idx) const {
        for (int a = 0; a < dim(); ++a)
            if (idx[a] < margin_z || idx[a] >= z[a].n - margin_z) return false;
        return true;
    }
    bool interior_l(int il) const { return il >= margin_l_lo && il < l.n - margin_l_hi; }

    void validate() const {
        if (z.empty() || z.size() > 2)
            throw std::invalid_argument("GridSpec: solver supports 1 or 2 z dimensions");
        for (const auto& ax : z) ax.validate("z");
        l.validate("l");
        if (n_t < 1) throw std::invalid_argument("GridSpec: n_t >= 1 required");
        if (!(T > t0)) throw std::invalid_argument("GridSpec: T > t0 required");
    }

    /// Checks the l axis spans the initial l-range plus jump_cap jumps of the
    /// model's (state-independent bound on) jump sizes, evaluated over marks
    /// at the box center.
    void validate_l_span(const ModelSpec& model, double l_init_lo, double l_init_hi) const {
        Vec zc(z.size());
        for (std::size_t a = 0; a < z.size(); ++a) zc[a] = 0.5 * (z[a].lo + z[a].hi);
        const double lc = 0.5 * (l.lo + l.hi);
        double gmin = 0.0, gmax = 0.0;
        for (std::size_t k = 0; k < model.mark_measure.size(); ++k) {
            const double gl = model.jump_l(t0, zc, lc, model.mark_measure.nodes[k]);
            gmin = std::min(gmin, gl);
            gmax = std::max(gmax, gl);
        }
        const double need_lo = l_init_lo + jump_cap * gmin;
        const double need_hi = l_init_hi + jump_cap * gmax;
        const double tol = 1e-9 * std::max(1.0, std::abs(need_hi - need_lo));
        if (l.lo > need_lo + tol || l.hi < need_hi - tol)
            throw std::invalid_argument(
                "GridSpec: l axis [" + std::to_string(l.lo) + "," + std::to_string(l.hi) +
                "] does not cover the initial range plus " + std::to_string(jump_cap) +
                " jumps (needs [" + std::to_string(need_lo) + "," + std::to_string(need_hi) + "])");
    }
};

namespace detail {

struct AxisWeight {
    int i0 = 0;
    double w = 0.0;  // value = (1-w)*phi[i0] + w*phi[i0+1]
    bool clamped = false;
};

inline AxisWeight axis_weight(const AxisSpec& ax, double x) {
    AxisWeight aw;
    const double slack = 1e-12 * std::max(1.0, std::abs(ax.hi - ax.lo));
    if (x <= ax.lo) {
        aw.i0 = 0;
        aw.w = 0.0;
        aw.clamped = x < ax.lo - slack;
        return aw;
    }
    if (x >= ax.hi) {
        aw.i0 = ax.n - 2;
        aw.w = 1.0;
        aw.clamped = x > ax.hi + slack;
        return aw;
    }
    const double s = (x - ax.lo) / ax.step();
    int i0 = static_cast<int>(s);
    if (i0 > ax.n - 2) i0 = ax.n - 2;
    aw.i0 = i0;
    aw.w = s - i0;
    return aw;
}

}  // namespace detail

}  // namespace markovpide
