#pragma once

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>

#include "markovpide/model.hpp"
#include "markovpide/rng.hpp"
#include "markovpide/trajectory.hpp"

namespace markovpide {

/// Non-finite state or another unrecoverable condition during path generation.
class SimulationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void check_sim_preconditions(const ModelSpec& model, double t0, const Vec& z0, double T,
                                    double dt_max) {
    if (!(t0 < T)) throw std::invalid_argument("simulate: t0 < T required");
    if (!(dt_max > 0.0)) throw std::invalid_argument("simulate: dt_max > 0 required");
    if (static_cast<int>(z0.size()) != model.dim_z)
        throw std::invalid_argument("simulate: z0 dimension mismatch");
}

[[noreturn]] inline void abort_nonfinite(const char* what, double t, const Vec& z, double l) {
    std::ostringstream os;
    os << "simulate: non-finite " << what << " at t=" << t << " z=(";
    for (std::size_t i = 0; i < z.size(); ++i) os << (i ? "," : "") << z[i];
    os << ") l=" << l;
    throw SimulationError(os.str());
}

/// Shared path generator for both measures.
///
/// Event times are exact exponential gaps at the reference rate lambda_tilde;
/// the diffusion is Euler-Maruyama between events with steps <= dt_max and
/// exact landing on event times and the horizon. Under the reference tag every
/// proposal is an event and xi follows the product formula
///   xi_t = prod_{T_n<=t} nu(T_n, X_{T_n-}, U_n)
///          * exp( int_0^t sum_k w_k (1 - nu(s, X_s, u_k)) ds ),
/// with the compensator integral evaluated at Euler-step left endpoints (the
/// predictable convention). Under the physical tag each proposal is accepted
/// with probability nu(T_n, X_{T_n-}, U_n) (thinning, valid because nu <= 1)
/// and xi stays 1.
///
/// Both modes consume randomness in the identical order
///   [gap][step normals...][mark uniform][acceptance uniform]
/// so that a model with nu == 1 produces bitwise-identical (Z, L) paths under
/// either measure for the same (seed, path_index).
inline void simulate_core(const ModelSpec& model, double t0, const Vec& z0, double l0, double T,
                          double dt_max, std::uint64_t seed, std::uint64_t path_index,
                          MeasureTag mode, Trajectory& out) {
    check_sim_preconditions(model, t0, z0, T, dt_max);
    const int d = model.dim_z;
    const auto& marks = model.mark_measure;
    const double lambda_tilde = marks.total_mass;
    const bool reference = (mode == MeasureTag::reference);

    out.clear();
    out.measure_tag = mode;
    out.dim_z = d;
    out.seed = seed;
    out.path_index = path_index;
    out.dt_max = dt_max;

    PathRng rng(seed, path_index);
    Vec z = z0;
    double l = l0;
    double t = t0;
    double prod_nu = 1.0;  // product of event densities (reference measure)
    double comp = 0.0;     // int (1 - nu) against the mark measure and time

    Vec a_buf(static_cast<std::size_t>(d));
    Vec b_buf(static_cast<std::size_t>(d) * d);
    Vec n_buf(static_cast<std::size_t>(d));
    Vec gz_buf(static_cast<std::size_t>(d));

    auto push_row = [&](double time, std::int8_t event_flag, int mark, std::int8_t accepted) {
        out.grid_times.push_back(time);
        out.z_flat.insert(out.z_flat.end(), z.begin(), z.end());
        out.l_path.push_back(l);
        out.xi_path.push_back(reference ? prod_nu * std::exp(comp) : 1.0);
        out.row_event.push_back(event_flag);
        out.row_mark.push_back(mark);
        out.row_accepted.push_back(accepted);
    };

    push_row(t0, 0, -1, 0);

    while (true) {
        const double gap = rng.exponential(lambda_tilde);
        const double t_event = t + gap;
        const double seg_end = std::min(t_event, T);

        if (seg_end > t) {
            const int n_steps = std::max(1, static_cast<int>(std::ceil((seg_end - t) / dt_max)));
            const double h = (seg_end - t) / n_steps;
            const double sqrt_h = std::sqrt(h);
            for (int s = 0; s < n_steps; ++s) {
                const double t_left = t + s * h;
                if (reference) {
                    double rate = 0.0;
                    for (std::size_t k = 0; k < marks.size(); ++k)
                        rate += marks.weights[k] * (1.0 - model.nu_density(t_left, z, l, marks.nodes[k]));
                    comp += h * rate;
                }
                model.drift(t_left, z, l, a_buf);
                model.dispersion(t_left, z, l, b_buf);
                for (int j = 0; j < d; ++j) n_buf[static_cast<std::size_t>(j)] = rng.normal();
                for (int i = 0; i < d; ++i) {
                    double dz = a_buf[static_cast<std::size_t>(i)] * h;
                    for (int j = 0; j < d; ++j)
                        dz += b_buf[static_cast<std::size_t>(i) * d + j] * sqrt_h * n_buf[static_cast<std::size_t>(j)];
                    z[static_cast<std::size_t>(i)] += dz;
                    if (!std::isfinite(z[static_cast<std::size_t>(i)]))
                        abort_nonfinite("state Z", t_left + h, z, l);
                }
                const double t_right = (s + 1 == n_steps) ? seg_end : t + (s + 1) * h;
                push_row(t_right, 0, -1, 0);
            }
        }

        if (t_event >= T) break;
        t = t_event;

        // Proposal: mark draw, then one acceptance uniform (consumed by both
        // modes to keep the streams aligned).
        const std::size_t k = marks.sample_index(rng.uniform());
        const double u_accept = rng.uniform();
        const double u = marks.nodes[k];
        const double nu_here = model.nu_density(t, z, l, u);
        if (!std::isfinite(nu_here)) abort_nonfinite("jump density", t, z, l);

        bool accepted;
        if (reference) {
            accepted = true;
            prod_nu *= nu_here;
            if (nu_here == 0.0) out.xi_hit_zero = true;
        } else {
            accepted = u_accept < nu_here;
        }
        if (accepted) {
            model.jump_z(t, z, l, u, gz_buf);
            const double dl = model.jump_l(t, z, l, u);
            for (int i = 0; i < d; ++i) {
                z[static_cast<std::size_t>(i)] += gz_buf[static_cast<std::size_t>(i)];
                if (!std::isfinite(z[static_cast<std::size_t>(i)])) abort_nonfinite("state Z", t, z, l);
            }
            l += dl;
            if (!std::isfinite(l)) abort_nonfinite("state L", t, z, l);
        }
        out.events.push_back({t, static_cast<int>(k), accepted});
        push_row(t, 1, static_cast<int>(k), accepted ? 1 : 0);
    }
}

}  // namespace detail

/// Path under the reference measure: exogenous Poisson proposals all count as
/// events; xi carries the Girsanov density along the path.
inline void simulate_reference_path_into(const ModelSpec& model, double t0, const Vec& z0, double l0,
                                         double T, double dt_max, std::uint64_t seed,
                                         std::uint64_t path_index, Trajectory& out) {
    detail::simulate_core(model, t0, z0, l0, T, dt_max, seed, path_index, MeasureTag::reference, out);
}

inline Trajectory simulate_reference_path(const ModelSpec& model, double t0, const Vec& z0, double l0,
                                          double T, double dt_max, std::uint64_t seed,
                                          std::uint64_t path_index = 0) {
    Trajectory out;
    simulate_reference_path_into(model, t0, z0, l0, T, dt_max, seed, path_index, out);
    return out;
}

/// Path under the physical measure via thinning; xi is identically 1.
inline void simulate_physical_path_into(const ModelSpec& model, double t0, const Vec& z0, double l0,
                                        double T, double dt_max, std::uint64_t seed,
                                        std::uint64_t path_index, Trajectory& out) {
    detail::simulate_core(model, t0, z0, l0, T, dt_max, seed, path_index, MeasureTag::physical, out);
}

inline Trajectory simulate_physical_path(const ModelSpec& model, double t0, const Vec& z0, double l0,
                                         double T, double dt_max, std::uint64_t seed,
                                         std::uint64_t path_index = 0) {
    Trajectory out;
    simulate_physical_path_into(model, t0, z0, l0, T, dt_max, seed, path_index, out);
    return out;
}

/// Cross-check of the stored product-formula xi against a left-point Euler
/// re-integration of its SDE form
///   d xi = xi_{s-} int (nu - 1) (N(ds,du) - w ds),
/// i.e. multiplicative jumps at events and linear growth between them.
/// Returns the maximum absolute deviation over rows.
inline double xi_sde_check(const Trajectory& traj, const ModelSpec& model) {
    if (traj.measure_tag != MeasureTag::reference)
        throw std::invalid_argument("xi_sde_check: reference-measure trajectory required");
    const auto& marks = model.mark_measure;
    double xi_e = 1.0;
    double max_dev = std::abs(xi_e - traj.xi_path[0]);
    Vec z_left;
    for (std::size_t i = 0; i + 1 < traj.n_rows(); ++i) {
        const double h = traj.grid_times[i + 1] - traj.grid_times[i];
        const auto zr = traj.z_row(i);
        z_left.assign(zr.begin(), zr.end());
        const double l_left = traj.l_path[i];
        if (traj.row_event[i + 1]) {
            // jump factor uses the pre-jump state (row i shares the event time)
            const double u = marks.nodes[static_cast<std::size_t>(traj.row_mark[i + 1])];
            xi_e *= model.nu_density(traj.grid_times[i + 1], z_left, l_left, u);
        }
        if (h > 0.0) {
            double rate = 0.0;
            for (std::size_t k = 0; k < marks.size(); ++k)
                rate += marks.weights[k] * (1.0 - model.nu_density(traj.grid_times[i], z_left, l_left, marks.nodes[k]));
            xi_e += xi_e * h * rate;
        }
        max_dev = std::max(max_dev, std::abs(xi_e - traj.xi_path[i + 1]));
    }
    return max_dev;
}

}  // namespace markovpide
