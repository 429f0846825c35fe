#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "markovpide/model.hpp"
#include "markovpide/numerics.hpp"
#include "markovpide/parallel.hpp"
#include "markovpide/simulate.hpp"

namespace markovpide {

enum class EstimatorTag { physical, weighted_terminal, weighted_running };

inline const char* to_string(EstimatorTag t) {
    switch (t) {
        case EstimatorTag::physical: return "physical";
        case EstimatorTag::weighted_terminal: return "weighted_terminal";
        case EstimatorTag::weighted_running: return "weighted_running";
    }
    return "?";
}

struct EstimatorResult {
    double mean = 0.0;
    double std_error = 0.0;
    double ci_lo = 0.0, ci_hi = 0.0;  // mean +- 1.96 * std_error
    std::int64_t n_paths = 0;
    std::uint64_t seed = 0;
    EstimatorTag tag = EstimatorTag::physical;
    std::int64_t n_flagged = 0;  // paths whose xi hit zero (kept, not dropped)

    void finalize_interval() {
        ci_lo = mean - 1.96 * std_error;
        ci_hi = mean + 1.96 * std_error;
    }
    bool ci_overlaps(const EstimatorResult& other) const {
        return intervals_overlap(ci_lo, ci_hi, other.ci_lo, other.ci_hi);
    }
};

namespace detail {

/// Discount, running-cost and terminal pieces accumulated along one path.
/// All time integrals use the left-point rule on the simulation grid (the
/// predictable convention); duplicate event rows contribute zero step length.
/// The xi factors are taken from the trajectory, so the physical measure
/// (xi == 1) and the reference measure share the identical arithmetic and a
/// nu == 1 model reproduces the physical estimate bitwise.
struct PathPieces {
    double terminal = 0.0;    // xi_T * D_T * g(X_T)
    double f_plain = 0.0;     // sum D_s f ds           (for the terminal form)
    double f_weighted = 0.0;  // sum xi_s D_s f ds      (for the running form)
    double xi_T = 1.0;
};

inline PathPieces accumulate_path(const ModelSpec& model, const Trajectory& traj) {
    PathPieces out;
    double int_c = 0.0;
    Vec z;
    const std::size_t n = traj.n_rows();
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const double h = traj.grid_times[i + 1] - traj.grid_times[i];
        if (h <= 0.0) continue;
        const auto zr = traj.z_row(i);
        z.assign(zr.begin(), zr.end());
        const double t = traj.grid_times[i];
        const double l = traj.l_path[i];
        const double disc = std::exp(-int_c);
        const double f = model.running_cost(t, z, l);
        out.f_plain += disc * f * h;
        out.f_weighted += traj.xi_path[i] * disc * f * h;
        int_c += model.discount(t, z, l) * h;
    }
    const auto z_last = traj.z_row(n - 1);
    z.assign(z_last.begin(), z_last.end());
    out.xi_T = traj.xi_path[n - 1];
    out.terminal = out.xi_T * std::exp(-int_c) * model.terminal(z, traj.l_path[n - 1]);
    return out;
}

struct BatchStats {
    std::vector<double> values;
    std::int64_t n_flagged = 0;
};

template <typename PathValue>
BatchStats run_batch(const ModelSpec& model, double t, const Vec& z0, double l0, double T,
                     long n_paths, double dt_max, std::uint64_t seed, MeasureTag mode,
                     PathValue&& path_value) {
    BatchStats stats;
    stats.values.resize(static_cast<std::size_t>(n_paths));
    std::vector<std::uint8_t> flagged(static_cast<std::size_t>(n_paths), 0);
    parallel_chunks(static_cast<std::size_t>(n_paths), [&](std::size_t b, std::size_t e) {
        Trajectory traj;
        for (std::size_t i = b; i < e; ++i) {
            simulate_core(model, t, z0, l0, T, dt_max, seed, i, mode, traj);
            stats.values[i] = path_value(accumulate_path(model, traj));
            flagged[i] = traj.xi_hit_zero ? 1 : 0;
        }
    });
    for (auto f : flagged) stats.n_flagged += f;
    return stats;
}

inline EstimatorResult summarize(BatchStats&& stats, std::uint64_t seed, EstimatorTag tag) {
    const auto ms = mean_stderr(stats.values);
    EstimatorResult r;
    r.mean = ms.mean;
    r.std_error = ms.std_error;
    r.n_paths = static_cast<std::int64_t>(stats.values.size());
    r.seed = seed;
    r.tag = tag;
    r.n_flagged = stats.n_flagged;
    r.finalize_interval();
    return r;
}

}  // namespace detail

/// Monte Carlo estimate of the value function under the physical measure:
/// averages  int_t^T e^{-int c} f ds + e^{-int c} g(X_T)  over thinned paths.
inline EstimatorResult estimate_v_physical(const ModelSpec& model, double t, const Vec& z0,
                                           double l0, double T, long n_paths, double dt_max,
                                           std::uint64_t seed) {
    if (n_paths < 2) throw std::invalid_argument("estimate_v_physical: n_paths >= 2 required");
    auto stats = detail::run_batch(model, t, z0, l0, T, n_paths, dt_max, seed, MeasureTag::physical,
                                   [](const detail::PathPieces& p) { return p.terminal + p.f_weighted; });
    return detail::summarize(std::move(stats), seed, EstimatorTag::physical);
}

enum class WeightedForm { terminal, running };

/// Reference-measure estimate of the density-weighted value started from
/// xi_t = xi0. Since xi enters each path multiplicatively, the estimate with
/// general xi0 equals xi0 times the unit estimate exactly; xi0 must lie in the
/// admissible set 0 < xi0 <= e^{lambda_tilde * t}.
///
/// terminal form:  xi_T * ( e^{-int c} g + int e^{-int c} f ds )
/// running form:   xi_T * e^{-int c} g + int xi_s e^{-int c} f ds
/// The two coincide in expectation; with f == 0 they are the same expression
/// and agree bitwise path by path.
inline EstimatorResult estimate_v_weighted(const ModelSpec& model, double t, const Vec& z0,
                                           double l0, double T, double xi0, long n_paths,
                                           double dt_max, std::uint64_t seed, WeightedForm form) {
    if (n_paths < 2) throw std::invalid_argument("estimate_v_weighted: n_paths >= 2 required");
    const double xi_cap = std::exp(model.mark_measure.total_mass * t);
    if (!(xi0 > 0.0) || xi0 > xi_cap * (1.0 + 1e-12))
        throw std::invalid_argument("estimate_v_weighted: xi0 outside the admissible set (0, e^{lambda_tilde t}]");

    auto stats = detail::run_batch(
        model, t, z0, l0, T, n_paths, dt_max, seed, MeasureTag::reference,
        [form](const detail::PathPieces& p) {
            return form == WeightedForm::terminal ? p.terminal + p.xi_T * p.f_plain
                                                  : p.terminal + p.f_weighted;
        });
    auto r = detail::summarize(std::move(stats), seed,
                               form == WeightedForm::terminal ? EstimatorTag::weighted_terminal
                                                              : EstimatorTag::weighted_running);
    r.mean *= xi0;
    r.std_error *= xi0;
    r.finalize_interval();
    return r;
}

/// All three estimators of v at one point with independent seeds: the Bayes
/// identity v = v_weighted / xi makes them estimate the same number, so the
/// check passes when every pairwise 95% CI overlaps.
struct BayesReport {
    EstimatorResult physical, terminal, running;
    bool pass = false;
};

inline BayesReport bayes_consistency(const ModelSpec& model, double t, const Vec& z0, double l0,
                                     double T, long n_paths, double dt_max,
                                     std::uint64_t seed_physical, std::uint64_t seed_weighted) {
    BayesReport rep;
    rep.physical = estimate_v_physical(model, t, z0, l0, T, n_paths, dt_max, seed_physical);
    rep.terminal = estimate_v_weighted(model, t, z0, l0, T, 1.0, n_paths, dt_max, seed_weighted,
                                       WeightedForm::terminal);
    rep.running = estimate_v_weighted(model, t, z0, l0, T, 1.0, n_paths, dt_max, seed_weighted,
                                      WeightedForm::running);
    rep.pass = rep.physical.ci_overlaps(rep.terminal) && rep.physical.ci_overlaps(rep.running) &&
               rep.terminal.ci_overlaps(rep.running);
    return rep;
}

}  // namespace markovpide
