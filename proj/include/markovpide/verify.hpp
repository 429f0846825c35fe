#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "markovpide/estimators.hpp"
#include "markovpide/generator.hpp"
#include "markovpide/pide.hpp"
#include "markovpide/rng.hpp"

namespace markovpide {

struct ProbePoint {
    double t = 0.0;
    Vec z;
    double l = 0.0;
};

struct ProbeResult {
    ProbePoint point;
    double pide_value = 0.0;
    EstimatorResult mc_physical;
    EstimatorResult mc_weighted;
    bool pass_physical = false;
    bool pass_weighted = false;
    bool pass = false;
    // empty, or which side of the dual route broke: a grid inconsistency fails
    // both estimators, a Girsanov inconsistency fails exactly one
    std::string flag;
};

struct ComparisonReport {
    std::vector<ProbeResult> probes;
    bool all_pass = true;
    double worst_abs = 0.0;       // max |PIDE - MC mean|
    double worst_ci_norm = 0.0;   // max |PIDE - MC mean| / (3 SE + budget)
    double grid_error_budget = 0.0;
    long n_paths = 0;
    std::uint64_t seed = 0;
};

struct CompareOptions {
    long n_paths = 10000;
    double dt_max = 1e-3;
    std::uint64_t seed = 1;
    double grid_error_budget = -1.0;  // < 0: derive as 10 x mean residual x horizon
};

/// Default grid error budget: ten times the residual-based error estimate
/// (mean interior residual integrated over the horizon).
inline double default_grid_error_budget(const PIDESolution& sol, const ModelSpec& model) {
    const ResidualStats rs = pide_residual(sol, model);
    return 10.0 * rs.mean_abs * (sol.grid.T - sol.grid.t0);
}

/// Runs both Monte Carlo routes at each probe (grid nodes only, nothing is
/// interpolated) and compares them against the PIDE solution. A probe passes
/// when |PIDE - MC| <= 3 SE + budget for both routes.
inline ComparisonReport compare_mc_pide(const ModelSpec& model, const PIDESolution& sol,
                                        const std::vector<ProbePoint>& probes,
                                        const CompareOptions& opts) {
    const GridSpec& grid = sol.grid;
    ComparisonReport rep;
    rep.n_paths = opts.n_paths;
    rep.seed = opts.seed;
    rep.grid_error_budget = opts.grid_error_budget >= 0.0
                                ? opts.grid_error_budget
                                : default_grid_error_budget(sol, model);

    for (std::size_t p = 0; p < probes.size(); ++p) {
        const auto& pt = probes[p];
        // locate on-grid indices; off-grid probes are rejected
        const double dt = grid.dt();
        const double ms = (pt.t - grid.t0) / dt;
        const int m = static_cast<int>(std::lround(ms));
        if (m < 0 || m > grid.n_t || std::abs(grid.t_node(m) - pt.t) > 1e-9 * std::max(1.0, grid.T))
            throw std::invalid_argument("compare_mc_pide: probe time off the grid");
        if (static_cast<int>(pt.z.size()) != grid.dim())
            throw std::invalid_argument("compare_mc_pide: probe z dimension mismatch");
        int zidx[2] = {0, 0};
        for (int a = 0; a < grid.dim(); ++a) {
            zidx[a] = grid.z[static_cast<std::size_t>(a)].index_of(pt.z[static_cast<std::size_t>(a)]);
            if (zidx[a] < 0) throw std::invalid_argument("compare_mc_pide: probe z off the grid");
        }
        const int il = grid.l.index_of(pt.l);
        if (il < 0) throw std::invalid_argument("compare_mc_pide: probe l off the grid");

        ProbeResult pr;
        pr.point = pt;
        pr.pide_value = sol.value(m, grid.z_flat(zidx), il);

        const std::uint64_t seed_phys = detail::splitmix64(opts.seed ^ (2 * p + 1));
        const std::uint64_t seed_weighted = detail::splitmix64(opts.seed ^ (2 * p + 2));
        pr.mc_physical = estimate_v_physical(model, pt.t, pt.z, pt.l, grid.T, opts.n_paths,
                                             opts.dt_max, seed_phys);
        pr.mc_weighted = estimate_v_weighted(model, pt.t, pt.z, pt.l, grid.T, 1.0, opts.n_paths,
                                             opts.dt_max, seed_weighted, WeightedForm::terminal);

        auto judge = [&](const EstimatorResult& mc, bool& pass_flag) {
            const double diff = std::abs(pr.pide_value - mc.mean);
            const double allowance = 3.0 * mc.std_error + rep.grid_error_budget;
            pass_flag = diff <= allowance;
            rep.worst_abs = std::max(rep.worst_abs, diff);
            if (allowance > 0.0) rep.worst_ci_norm = std::max(rep.worst_ci_norm, diff / allowance);
        };
        judge(pr.mc_physical, pr.pass_physical);
        judge(pr.mc_weighted, pr.pass_weighted);
        pr.pass = pr.pass_physical && pr.pass_weighted;
        if (!pr.pass)
            pr.flag = (pr.pass_physical != pr.pass_weighted) ? "girsanov_inconsistency"
                                                             : "grid_inconsistency";
        rep.all_pass = rep.all_pass && pr.pass;
        rep.probes.push_back(std::move(pr));
    }
    return rep;
}

// ---------------------------------------------------------------------------
// regularity ladder
// ---------------------------------------------------------------------------

/// Discrete restatements of the solution's regularity: the l-Lipschitz
/// quotient must stabilize across a refinement ladder (no smoothing happens in
/// l), while second z-differences and first t-differences must settle
/// (evidence of C^2 in z and C^1 in t). Stabilization of a discrete quotient
/// is what can literally be asserted; smoothness itself is not decidable from
/// finitely many grids.
struct RegularityReport {
    std::vector<double> lip_l;                       // per ladder grid
    std::vector<std::vector<double>> second_z;       // [grid][probe]
    std::vector<std::vector<double>> first_t;        // [grid][probe]
    std::vector<std::vector<double>> cauchy_second_z;  // [grid-1][probe]
    bool lip_l_stable = false;
    bool second_z_converges = false;
};

/// Probes are (t, z, l) points that must be nodes of every ladder grid.
inline RegularityReport regularity_probe(const ModelSpec& model,
                                         const std::vector<GridSpec>& ladder,
                                         const std::vector<ProbePoint>& probes,
                                         const SolverOptions& opts) {
    if (ladder.size() < 3) throw std::invalid_argument("regularity_probe: ladder needs >= 3 grids");
    RegularityReport rep;

    for (const auto& grid : ladder) {
        const PIDESolution sol = solve_pide(model, grid, opts);
        const std::size_t nz = grid.nz_total();

        // global interior l-Lipschitz quotient
        double lip = 0.0;
        const double dl = grid.l.step();
        int zidx[2];
        for (int m = 0; m <= grid.n_t; ++m)
            for (std::size_t iz = 0; iz < nz; ++iz) {
                grid.z_indices(iz, zidx);
                if (!grid.interior_z(zidx)) continue;
                for (int il = grid.margin_l_lo; il < grid.l.n - grid.margin_l_hi - 1; ++il)
                    lip = std::max(lip, std::abs(sol.value(m, iz, il + 1) - sol.value(m, iz, il)) / dl);
            }
        rep.lip_l.push_back(lip);

        std::vector<double> d2(probes.size()), dt1(probes.size());
        for (std::size_t p = 0; p < probes.size(); ++p) {
            const auto& pt = probes[p];
            const int m = static_cast<int>(std::lround((pt.t - grid.t0) / grid.dt()));
            int zi[2] = {0, 0};
            for (int a = 0; a < grid.dim(); ++a) {
                zi[a] = grid.z[static_cast<std::size_t>(a)].index_of(pt.z[static_cast<std::size_t>(a)]);
                if (zi[a] <= 0 || zi[a] >= grid.z[static_cast<std::size_t>(a)].n - 1)
                    throw std::invalid_argument("regularity_probe: probe not interior on some ladder grid");
            }
            const int il = grid.l.index_of(pt.l);
            if (il < 0 || m < 0 || m >= grid.n_t)
                throw std::invalid_argument("regularity_probe: probe off some ladder grid");
            const std::size_t iz = grid.z_flat(zi);
            const double dz = grid.z[0].step();
            const std::size_t stride = grid.dim() == 1 ? 1 : static_cast<std::size_t>(grid.z[1].n);
            d2[p] = (sol.value(m, iz + stride, il) - 2.0 * sol.value(m, iz, il) +
                     sol.value(m, iz - stride, il)) /
                    (dz * dz);
            dt1[p] = (sol.value(m + 1, iz, il) - sol.value(m, iz, il)) / grid.dt();
        }
        rep.second_z.push_back(std::move(d2));
        rep.first_t.push_back(std::move(dt1));
    }

    for (std::size_t k = 0; k + 1 < ladder.size(); ++k) {
        std::vector<double> c(probes.size());
        for (std::size_t p = 0; p < probes.size(); ++p)
            c[p] = std::abs(rep.second_z[k + 1][p] - rep.second_z[k][p]);
        rep.cauchy_second_z.push_back(std::move(c));
    }

    // pinned stabilization verdicts
    const std::size_t last = rep.lip_l.size() - 1;
    const double rel_change =
        std::abs(rep.lip_l[last] - rep.lip_l[last - 1]) / std::max(1e-12, std::abs(rep.lip_l[last - 1]));
    rep.lip_l_stable = rel_change <= 0.05;
    rep.second_z_converges = true;
    for (std::size_t p = 0; p < probes.size(); ++p)
        for (std::size_t k = 0; k + 1 < rep.cauchy_second_z.size(); ++k) {
            const double c0 = rep.cauchy_second_z[k][p];
            const double c1 = rep.cauchy_second_z[k + 1][p];
            if (c0 < 1e-12 && c1 < 1e-12) continue;  // already at the floor
            if (!(c1 <= 0.5 * c0)) rep.second_z_converges = false;
        }
    return rep;
}

// ---------------------------------------------------------------------------
// generator / Dynkin check
// ---------------------------------------------------------------------------

struct DynkinReport {
    double mc_rate = 0.0;       // (E[phi(X_{t+h})] - phi(x)) / h
    double generator_value = 0.0;
    double std_error_rate = 0.0;  // SE of the mean, divided by h
    double h = 0.0;
    bool pass = false;
};

/// Short-horizon rate of change of E[phi] against the generator applied at the
/// starting point; pass when the gap is within the curvature budget
/// c_phi * h plus Monte Carlo noise.
inline DynkinReport generator_dynkin_check(const ModelSpec& model, const TestFunction& phi,
                                           double t, const Vec& z0, double l0, double h,
                                           long n_paths, std::uint64_t seed, double c_phi) {
    if (!(h > 0.0) || h > 0.05)
        throw std::invalid_argument("generator_dynkin_check: h must lie in (0, 0.05]");
    const double dt_max = h / 32.0;
    std::vector<double> values(static_cast<std::size_t>(n_paths));
    parallel_chunks(static_cast<std::size_t>(n_paths), [&](std::size_t b, std::size_t e) {
        Trajectory traj;
        Vec z;
        for (std::size_t i = b; i < e; ++i) {
            detail::simulate_core(model, t, z0, l0, t + h, dt_max, seed, i, MeasureTag::physical, traj);
            const auto zr = traj.z_row(traj.n_rows() - 1);
            z.assign(zr.begin(), zr.end());
            values[i] = phi.value(z, traj.l_path[traj.n_rows() - 1]);
        }
    });
    const auto ms = mean_stderr(values);
    DynkinReport rep;
    rep.h = h;
    rep.mc_rate = (ms.mean - phi.value(z0, l0)) / h;
    rep.std_error_rate = ms.std_error / h;
    rep.generator_value = apply_generator(model, phi, t, z0, l0);
    rep.pass = std::abs(rep.mc_rate - rep.generator_value) <= c_phi * h + 3.0 * rep.std_error_rate;
    return rep;
}

// ---------------------------------------------------------------------------
// boundary influence (domain doubling)
// ---------------------------------------------------------------------------

/// Widens every z axis by half its width on each side (same spacing, original
/// nodes preserved), re-solves, and returns the largest change on the original
/// grid's interior region. Quantifies how much the artificial z boundary leaks
/// into reported values.
inline double measure_boundary_influence(const ModelSpec& model, const GridSpec& grid,
                                         const SolverOptions& opts) {
    GridSpec wide = grid;
    std::vector<int> offsets(grid.z.size());
    for (std::size_t a = 0; a < grid.z.size(); ++a) {
        const auto& ax = grid.z[a];
        const int extra = (ax.n - 1) / 2;  // nodes added per side
        offsets[a] = extra;
        wide.z[a].lo = ax.lo - extra * ax.step();
        wide.z[a].hi = ax.hi + extra * ax.step();
        wide.z[a].n = ax.n + 2 * extra;
    }
    const PIDESolution base = solve_pide(model, grid, opts);
    const PIDESolution big = solve_pide(model, wide, opts);

    double worst = 0.0;
    int zidx[2];
    int widx[2] = {0, 0};
    for (int m = 0; m <= grid.n_t; ++m)
        for (std::size_t iz = 0; iz < grid.nz_total(); ++iz) {
            grid.z_indices(iz, zidx);
            if (!grid.interior_z(zidx)) continue;
            for (int a = 0; a < grid.dim(); ++a) widx[a] = zidx[a] + offsets[static_cast<std::size_t>(a)];
            const std::size_t wiz = wide.z_flat(widx);
            for (int il = grid.margin_l_lo; il < grid.l.n - grid.margin_l_hi; ++il)
                worst = std::max(worst, std::abs(base.value(m, iz, il) - big.value(m, wiz, il)));
        }
    return worst;
}

}  // namespace markovpide
