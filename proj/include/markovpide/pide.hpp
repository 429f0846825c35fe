#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "markovpide/grid.hpp"
#include "markovpide/model.hpp"
#include "markovpide/parallel.hpp"
#include "markovpide/tridiag.hpp"

namespace markovpide {

enum class PideMode { fixed_point, imex };

inline const char* to_string(PideMode m) {
    return m == PideMode::fixed_point ? "fixed_point" : "imex";
}

struct SolverOptions {
    PideMode mode = PideMode::fixed_point;
    double theta = 0.5;  // 0.5 = Crank-Nicolson, 1 = implicit Euler
    double tol = 1e-8;   // fixed-point sup-norm tolerance
    int max_iter = 60;
};

struct ResidualStats {
    double max_abs = 0.0;
    double mean_abs = 0.0;
    std::size_t n_nodes = 0;
};

/// Explicit jump-term step bound was violated.
class StabilityError : public std::runtime_error {
public:
    StabilityError(const std::string& msg, double required_dt_)
        : std::runtime_error(msg), required_dt(required_dt_) {}
    double required_dt;
};

/// Value array over the full (t, z, l) grid plus solver diagnostics.
/// Normalization used throughout: the equation is stored as
///   v_t + L v - c v - f = 0,  v(T) = g,
/// i.e. running cost and discount are moved to the left-hand side, so the
/// frozen-source problems receive F = F_[v] - f as their additive source.
struct PIDESolution {
    GridSpec grid;
    PideMode mode = PideMode::fixed_point;
    double theta = 0.5;
    std::vector<double> values;  // (n_t+1) x NZ x NL, layout grid.flat()
    int iterations = 0;
    std::vector<double> sup_norm_deltas;  // per-iteration contraction record
    bool converged = true;
    long clamp_count = 0;  // off-grid jump destinations clamped to the boundary

    double value(int m, std::size_t iz, int il) const { return values[grid.flat(m, iz, il)]; }
};

// ---------------------------------------------------------------------------
// integral operator
// ---------------------------------------------------------------------------

/// F_[phi](t, z, l) = sum_k w_k nu(t,z,l,u_k) [phi(z + gamma^Z, l + gamma^L) - phi(z,l)]
/// on one (z,l) slice; off-grid destinations are interpolated multilinearly
/// and clamped to the box (clamp events counted).
inline void apply_integral_operator(const ModelSpec& model, const GridSpec& grid, double t,
                                    std::span<const double> phi, std::span<double> out,
                                    long& clamp_count) {
    const int d = grid.dim();
    const auto& marks = model.mark_measure;
    const std::size_t nz = grid.nz_total();
    const int nl = grid.l.n;
    Vec zc, gz(static_cast<std::size_t>(d));
    detail::AxisWeight aw[3];  // z axes then l

    for (std::size_t iz = 0; iz < nz; ++iz) {
        grid.z_coords(iz, zc);
        for (int il = 0; il < nl; ++il) {
            const double lv = grid.l.node(il);
            const double phi_here = phi[grid.slice_flat(iz, il)];
            double acc = 0.0;
            for (std::size_t k = 0; k < marks.size(); ++k) {
                const double u = marks.nodes[k];
                const double nu = model.nu_density(t, zc, lv, u);
                if (nu == 0.0) continue;
                model.jump_z(t, zc, lv, u, gz);
                bool clamped = false;
                for (int a = 0; a < d; ++a) {
                    aw[a] = detail::axis_weight(grid.z[static_cast<std::size_t>(a)],
                                                zc[static_cast<std::size_t>(a)] + gz[static_cast<std::size_t>(a)]);
                    clamped = clamped || aw[a].clamped;
                }
                aw[d] = detail::axis_weight(grid.l, lv + model.jump_l(t, zc, lv, u));
                clamped = clamped || aw[d].clamped;
                if (clamped) ++clamp_count;

                double dest = 0.0;
                const int n_axes = d + 1;
                for (int corner = 0; corner < (1 << n_axes); ++corner) {
                    double w = 1.0;
                    int zidx[2] = {0, 0};
                    int lidx = 0;
                    for (int a = 0; a < n_axes; ++a) {
                        const bool hi = (corner >> a) & 1;
                        w *= hi ? aw[a].w : (1.0 - aw[a].w);
                        const int node = aw[a].i0 + (hi ? 1 : 0);
                        if (a < d)
                            zidx[a] = node;
                        else
                            lidx = node;
                    }
                    if (w == 0.0) continue;
                    dest += w * phi[grid.slice_flat(grid.z_flat(zidx), lidx)];
                }
                acc += marks.weights[k] * nu * (dest - phi_here);
            }
            out[grid.slice_flat(iz, il)] = acc;
        }
    }
}

// ---------------------------------------------------------------------------
// frozen-source theta-scheme march (one l level)
// ---------------------------------------------------------------------------

namespace detail {

// Spatial operator Lc = L* - c discretized with second-order central
// differences for the diffusion terms and first-order upwinding for the drift
// (off-diagonal entries stay nonnegative, so the implicit matrix is an
// M-matrix away from the faces). Boundary rows eliminate a ghost node with
// zero second normal derivative (linear extrapolation).
class FrozenStepper1D {
public:
    FrozenStepper1D(const ModelSpec& model, const GridSpec& grid, double l_value, double theta)
        : model_(model), grid_(grid), l_value_(l_value), theta_(theta), nz_(grid.z[0].n) {
        lo_m_.resize(nz_);
        mid_m_.resize(nz_);
        up_m_.resize(nz_);
        lo_p_.resize(nz_);
        mid_p_.resize(nz_);
        up_p_.resize(nz_);
        sub_.resize(nz_);
        diag_.resize(nz_);
        sup_.resize(nz_);
        rhs_.resize(nz_);
        if (model.time_homogeneous) {
            fill_coeffs(grid.t0, lo_m_, mid_m_, up_m_);
            lo_p_ = lo_m_;
            mid_p_ = mid_m_;
            up_p_ = up_m_;
        }
    }

    /// One backward step t_{m+1} -> t_m:
    ///   (I - dt*theta*Lc_m) psi_m = psi_{m+1} + dt*(1-theta)*Lc_{m+1} psi_{m+1} + dt*src
    void step(int m, const std::vector<double>& psi_next, const double* src,
              std::vector<double>& psi_out) {
        const double dt = grid_.dt();
        if (!model_.time_homogeneous) {
            fill_coeffs(grid_.t_node(m), lo_m_, mid_m_, up_m_);
            fill_coeffs(grid_.t_node(m + 1), lo_p_, mid_p_, up_p_);
        }
        const double w_ex = dt * (1.0 - theta_);
        for (int i = 0; i < nz_; ++i) {
            double lc = mid_p_[i] * psi_next[i];
            if (i > 0) lc += lo_p_[i] * psi_next[i - 1];
            if (i < nz_ - 1) lc += up_p_[i] * psi_next[i + 1];
            rhs_[i] = psi_next[i] + w_ex * lc + dt * src[i];
            sub_[i] = -dt * theta_ * lo_m_[i];
            diag_[i] = 1.0 - dt * theta_ * mid_m_[i];
            sup_[i] = -dt * theta_ * up_m_[i];
        }
        tri_.solve(sub_, diag_, sup_, rhs_, psi_out);
    }

private:
    void fill_coeffs(double t, std::vector<double>& lo, std::vector<double>& mid,
                     std::vector<double>& up) {
        const auto& ax = grid_.z[0];
        const double dz = ax.step();
        Vec z(1), a(1), b(1);
        for (int i = 0; i < nz_; ++i) {
            z[0] = ax.node(i);
            model_.drift(t, z, l_value_, a);
            model_.dispersion(t, z, l_value_, b);
            const double c = model_.discount(t, z, l_value_);
            const double diff = 0.5 * b[0] * b[0];
            if (i == 0) {
                lo[i] = 0.0;
                up[i] = a[0] / dz;
                mid[i] = -a[0] / dz - c;
            } else if (i == nz_ - 1) {
                lo[i] = -a[0] / dz;
                up[i] = 0.0;
                mid[i] = a[0] / dz - c;
            } else {
                const double ap = std::max(a[0], 0.0);
                const double am = std::max(-a[0], 0.0);
                lo[i] = diff / (dz * dz) + am / dz;
                up[i] = diff / (dz * dz) + ap / dz;
                mid[i] = -2.0 * diff / (dz * dz) - (ap + am) / dz - c;
            }
        }
    }

    const ModelSpec& model_;
    const GridSpec& grid_;
    double l_value_;
    double theta_;
    int nz_;
    std::vector<double> lo_m_, mid_m_, up_m_, lo_p_, mid_p_, up_p_;
    std::vector<double> sub_, diag_, sup_, rhs_;
    TridiagSolver tri_;
};

// Two z dimensions: five-point implicit stencil (axis diffusion, upwind drift,
// discount); the cross-derivative term, when Sigma_12 != 0, is evaluated
// explicitly at the already-known time level and dropped on faces. The
// implicit system is solved by sparse LU, factored once when coefficients are
// time-independent.
class FrozenStepper2D {
public:
    FrozenStepper2D(const ModelSpec& model, const GridSpec& grid, double l_value, double theta)
        : model_(model), grid_(grid), l_value_(l_value), theta_(theta),
          n1_(grid.z[0].n), n2_(grid.z[1].n), n_(static_cast<std::size_t>(n1_) * n2_) {
        a1_.resize(n_);
        a2_.resize(n_);
        d1_.resize(n_);
        d2_.resize(n_);
        cross_.resize(n_);
        cval_.resize(n_);
        rhs_.resize(n_);
        if (model.time_homogeneous) {
            fill_coeffs(grid.t0);
            coeffs_m_ready_ = true;
            build_implicit();
        }
    }

    void step(int m, const std::vector<double>& psi_next, const double* src,
              std::vector<double>& psi_out) {
        const double dt = grid_.dt();
        if (!model_.time_homogeneous) {
            fill_coeffs(grid_.t_node(m + 1));  // explicit side
        }
        const double w_ex = dt * (1.0 - theta_);
        for (std::size_t i = 0; i < n_; ++i)
            rhs_[i] = psi_next[i] + w_ex * apply_lc(psi_next, i) + dt * cross_term(psi_next, i) +
                      dt * src[i];
        if (!model_.time_homogeneous) {
            fill_coeffs(grid_.t_node(m));  // implicit side
            build_implicit();
        }
        Eigen::Map<const Eigen::VectorXd> b(rhs_.data(), static_cast<Eigen::Index>(n_));
        Eigen::VectorXd x = lu_->solve(b);
        if (lu_->info() != Eigen::Success)
            throw std::runtime_error("2d frozen solve: sparse LU failed (degenerate discrete operator)");
        psi_out.assign(x.data(), x.data() + n_);
    }

private:
    struct Stencil {
        double mid, l1, u1, l2, u2;  // neighbors along axis 1 (stride n2) and axis 2 (stride 1)
    };

    std::size_t idx(int i1, int i2) const { return static_cast<std::size_t>(i1) * n2_ + i2; }

    Stencil stencil_at(std::size_t i) const {
        const int i1 = static_cast<int>(i) / n2_;
        const int i2 = static_cast<int>(i) % n2_;
        const double dz1 = grid_.z[0].step(), dz2 = grid_.z[1].step();
        Stencil s{0, 0, 0, 0, 0};
        const double a1 = a1_[i], a2 = a2_[i];
        // axis 1
        if (i1 == 0) {
            s.u1 = a1 / dz1;
            s.mid += -a1 / dz1;
        } else if (i1 == n1_ - 1) {
            s.l1 = -a1 / dz1;
            s.mid += a1 / dz1;
        } else {
            const double ap = std::max(a1, 0.0), am = std::max(-a1, 0.0);
            s.l1 = d1_[i] / (dz1 * dz1) + am / dz1;
            s.u1 = d1_[i] / (dz1 * dz1) + ap / dz1;
            s.mid += -2.0 * d1_[i] / (dz1 * dz1) - (ap + am) / dz1;
        }
        // axis 2
        if (i2 == 0) {
            s.u2 = a2 / dz2;
            s.mid += -a2 / dz2;
        } else if (i2 == n2_ - 1) {
            s.l2 = -a2 / dz2;
            s.mid += a2 / dz2;
        } else {
            const double ap = std::max(a2, 0.0), am = std::max(-a2, 0.0);
            s.l2 = d2_[i] / (dz2 * dz2) + am / dz2;
            s.u2 = d2_[i] / (dz2 * dz2) + ap / dz2;
            s.mid += -2.0 * d2_[i] / (dz2 * dz2) - (ap + am) / dz2;
        }
        s.mid -= cval_[i];
        return s;
    }

    double apply_lc(const std::vector<double>& psi, std::size_t i) const {
        const Stencil s = stencil_at(i);
        double v = s.mid * psi[i];
        if (s.l1 != 0.0) v += s.l1 * psi[i - static_cast<std::size_t>(n2_)];
        if (s.u1 != 0.0) v += s.u1 * psi[i + static_cast<std::size_t>(n2_)];
        if (s.l2 != 0.0) v += s.l2 * psi[i - 1];
        if (s.u2 != 0.0) v += s.u2 * psi[i + 1];
        return v;
    }

    double cross_term(const std::vector<double>& psi, std::size_t i) const {
        if (cross_[i] == 0.0) return 0.0;
        const int i1 = static_cast<int>(i) / n2_;
        const int i2 = static_cast<int>(i) % n2_;
        if (i1 == 0 || i1 == n1_ - 1 || i2 == 0 || i2 == n2_ - 1) return 0.0;
        const double dz1 = grid_.z[0].step(), dz2 = grid_.z[1].step();
        const double mixed = (psi[idx(i1 + 1, i2 + 1)] - psi[idx(i1 + 1, i2 - 1)] -
                              psi[idx(i1 - 1, i2 + 1)] + psi[idx(i1 - 1, i2 - 1)]) /
                             (4.0 * dz1 * dz2);
        return cross_[i] * mixed;
    }

    void fill_coeffs(double t) {
        Vec z(2), a(2), b_buf, sig;
        for (int i1 = 0; i1 < n1_; ++i1)
            for (int i2 = 0; i2 < n2_; ++i2) {
                const std::size_t i = idx(i1, i2);
                z[0] = grid_.z[0].node(i1);
                z[1] = grid_.z[1].node(i2);
                model_.drift(t, z, l_value_, a);
                model_.sigma(t, z, l_value_, b_buf, sig);
                a1_[i] = a[0];
                a2_[i] = a[1];
                d1_[i] = 0.5 * sig[0];
                d2_[i] = 0.5 * sig[3];
                cross_[i] = sig[1];  // Sigma symmetric: full mixed-term coefficient
                cval_[i] = model_.discount(t, z, l_value_);
            }
    }

    void build_implicit() {
        const double dt = grid_.dt();
        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(5 * n_);
        for (std::size_t i = 0; i < n_; ++i) {
            const Stencil s = stencil_at(i);
            const auto I = static_cast<int>(i);
            trips.emplace_back(I, I, 1.0 - dt * theta_ * s.mid);
            if (s.l1 != 0.0) trips.emplace_back(I, I - n2_, -dt * theta_ * s.l1);
            if (s.u1 != 0.0) trips.emplace_back(I, I + n2_, -dt * theta_ * s.u1);
            if (s.l2 != 0.0) trips.emplace_back(I, I - 1, -dt * theta_ * s.l2);
            if (s.u2 != 0.0) trips.emplace_back(I, I + 1, -dt * theta_ * s.u2);
        }
        mat_.resize(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_));
        mat_.setFromTriplets(trips.begin(), trips.end());
        lu_ = std::make_unique<Eigen::SparseLU<Eigen::SparseMatrix<double>>>();
        lu_->compute(mat_);
        if (lu_->info() != Eigen::Success)
            throw std::runtime_error("2d frozen solve: sparse factorization failed");
    }

    const ModelSpec& model_;
    const GridSpec& grid_;
    double l_value_;
    double theta_;
    int n1_, n2_;
    std::size_t n_;
    bool coeffs_m_ready_ = false;
    std::vector<double> a1_, a2_, d1_, d2_, cross_, cval_, rhs_;
    Eigen::SparseMatrix<double> mat_;
    std::unique_ptr<Eigen::SparseLU<Eigen::SparseMatrix<double>>> lu_;
};

}  // namespace detail

/// Backward theta-scheme march for the frozen-source Cauchy problem
///   psi_t + L* psi + F = c psi,  psi(T, z) = g(z, l_value)
/// at a fixed l level. `source_tz` holds F on all (t,z) nodes,
/// (n_t+1) x NZ with time-major layout; the step uses the theta-mix
/// theta*F(t_m) + (1-theta)*F(t_{m+1}).
inline std::vector<double> solve_frozen_pde(const ModelSpec& model, double l_value,
                                            const GridSpec& grid,
                                            std::span<const double> source_tz, double theta) {
    grid.validate();
    if (!(theta >= 0.5 && theta <= 1.0))
        throw std::invalid_argument("solve_frozen_pde: theta must lie in [0.5, 1]");
    const std::size_t nz = grid.nz_total();
    if (source_tz.size() != nz * static_cast<std::size_t>(grid.n_t + 1))
        throw std::invalid_argument("solve_frozen_pde: source size mismatch");

    std::vector<double> psi(nz * static_cast<std::size_t>(grid.n_t + 1));
    std::vector<double> psi_next(nz), psi_cur(nz), src(nz);
    Vec zc;
    for (std::size_t iz = 0; iz < nz; ++iz) {
        grid.z_coords(iz, zc);
        psi_next[iz] = model.terminal(zc, l_value);
    }
    std::copy(psi_next.begin(), psi_next.end(), psi.begin() + static_cast<std::ptrdiff_t>(nz) * grid.n_t);

    auto march = [&](auto& stepper) {
        for (int m = grid.n_t - 1; m >= 0; --m) {
            const double* s_m = source_tz.data() + static_cast<std::size_t>(m) * nz;
            const double* s_p = s_m + nz;
            for (std::size_t i = 0; i < nz; ++i) src[i] = theta * s_m[i] + (1.0 - theta) * s_p[i];
            stepper.step(m, psi_next, src.data(), psi_cur);
            std::copy(psi_cur.begin(), psi_cur.end(), psi.begin() + static_cast<std::ptrdiff_t>(nz) * m);
            std::swap(psi_next, psi_cur);
        }
    };
    if (grid.dim() == 1) {
        detail::FrozenStepper1D stepper(model, grid, l_value, theta);
        march(stepper);
    } else {
        detail::FrozenStepper2D stepper(model, grid, l_value, theta);
        march(stepper);
    }
    return psi;
}

// ---------------------------------------------------------------------------
// full PIDE solvers
// ---------------------------------------------------------------------------

namespace detail {

inline void terminal_slice(const ModelSpec& model, const GridSpec& grid, std::vector<double>& out) {
    out.resize(grid.slice_size());
    Vec zc;
    for (std::size_t iz = 0; iz < grid.nz_total(); ++iz) {
        grid.z_coords(iz, zc);
        for (int il = 0; il < grid.l.n; ++il)
            out[grid.slice_flat(iz, il)] = model.terminal(zc, grid.l.node(il));
    }
}

}  // namespace detail

/// Paper-mirroring global fixed point: iterate full-horizon frozen-source
/// solves, where iteration n+1 solves, for every l node, the linear Cauchy
/// problem with source F_[v_n] - f (f moved to the source with a minus sign
/// under the v_t + Lv - cv - f = 0 normalization). Starts from v_0 = g
/// extended constant in time; stops when the sup-norm delta falls below tol.
inline PIDESolution solve_pide_fixed_point(const ModelSpec& model, const GridSpec& grid,
                                           double tol, int max_iter, double theta) {
    grid.validate();
    if (!(tol > 0.0)) throw std::invalid_argument("solve_pide_fixed_point: tol > 0 required");
    if (max_iter < 1) throw std::invalid_argument("solve_pide_fixed_point: max_iter >= 1 required");

    PIDESolution sol;
    sol.grid = grid;
    sol.mode = PideMode::fixed_point;
    sol.theta = theta;

    const std::size_t nz = grid.nz_total();
    const int nl = grid.l.n;
    const int nt = grid.n_t;
    const std::size_t slice = grid.slice_size();

    std::vector<double> g_slice;
    detail::terminal_slice(model, grid, g_slice);

    std::vector<double> v_old(grid.total_size());
    for (int m = 0; m <= nt; ++m)
        std::copy(g_slice.begin(), g_slice.end(), v_old.begin() + static_cast<std::ptrdiff_t>(slice) * m);
    std::vector<double> v_new = v_old;

    // source in l-major layout: ((il * (n_t+1) + m) * NZ + iz)
    std::vector<double> source(static_cast<std::size_t>(nl) * (nt + 1) * nz);
    std::vector<double> islice(slice);
    Vec zc;

    for (int iter = 0; iter < max_iter; ++iter) {
        long clamps = 0;
        for (int m = 0; m <= nt; ++m) {
            const double tm = grid.t_node(m);
            std::span<const double> vm(v_old.data() + static_cast<std::size_t>(m) * slice, slice);
            apply_integral_operator(model, grid, tm, vm, islice, clamps);
            for (std::size_t iz = 0; iz < nz; ++iz) {
                grid.z_coords(iz, zc);
                for (int il = 0; il < nl; ++il) {
                    const double f = model.running_cost(tm, zc, grid.l.node(il));
                    source[(static_cast<std::size_t>(il) * (nt + 1) + static_cast<std::size_t>(m)) * nz + iz] =
                        islice[grid.slice_flat(iz, il)] - f;
                }
            }
        }
        sol.clamp_count += clamps;

        parallel_chunks(static_cast<std::size_t>(nl), [&](std::size_t lb, std::size_t le) {
            for (std::size_t il = lb; il < le; ++il) {
                std::span<const double> src(source.data() + il * (nt + 1) * nz, (nt + 1) * nz);
                const auto psi = solve_frozen_pde(model, grid.l.node(static_cast<int>(il)), grid, src, theta);
                for (int m = 0; m <= nt; ++m)
                    for (std::size_t iz = 0; iz < nz; ++iz)
                        v_new[grid.flat(m, iz, static_cast<int>(il))] =
                            psi[static_cast<std::size_t>(m) * nz + iz];
            }
        });

        double delta = 0.0;
        for (std::size_t i = 0; i < v_new.size(); ++i)
            delta = std::max(delta, std::abs(v_new[i] - v_old[i]));
        sol.sup_norm_deltas.push_back(delta);
        sol.iterations = iter + 1;
        v_old = v_new;
        if (delta <= tol) {
            sol.converged = true;
            sol.values = std::move(v_new);
            return sol;
        }
    }
    sol.converged = false;  // best iterate, flagged
    sol.values = std::move(v_new);
    return sol;
}

/// Largest jump density on the grid, sampled at t in {t0, mid, T}; enters the
/// explicit-integral stability bound dt * lambda_tilde * max_nu <= 1.
inline double max_nu_on_grid(const ModelSpec& model, const GridSpec& grid) {
    double mx = 0.0;
    Vec zc;
    const double times[3] = {grid.t0, 0.5 * (grid.t0 + grid.T), grid.T};
    for (double t : times)
        for (std::size_t iz = 0; iz < grid.nz_total(); ++iz) {
            grid.z_coords(iz, zc);
            for (int il = 0; il < grid.l.n; ++il)
                for (std::size_t k = 0; k < model.mark_measure.size(); ++k)
                    mx = std::max(mx, model.nu_density(t, zc, grid.l.node(il), model.mark_measure.nodes[k]));
        }
    return mx;
}

/// Single backward sweep: implicit local terms, integral term explicit at the
/// already-computed later time level. Asymptotically equal to the fixed-point
/// mode as the grid refines; requires dt * lambda_tilde * max_nu <= 1.
inline PIDESolution solve_pide_imex(const ModelSpec& model, const GridSpec& grid, double theta) {
    grid.validate();
    if (!(theta >= 0.5 && theta <= 1.0))
        throw std::invalid_argument("solve_pide_imex: theta must lie in [0.5, 1]");

    const double max_nu = max_nu_on_grid(model, grid);
    const double gate = grid.dt() * model.mark_measure.total_mass * max_nu;
    if (gate > 1.0 + 1e-12) {
        const double required = 1.0 / (model.mark_measure.total_mass * max_nu);
        std::ostringstream os;
        os << "imex: dt = " << grid.dt() << " violates the explicit jump-term stability bound "
           << "dt * lambda_tilde * max_nu <= 1; need dt <= " << required;
        throw StabilityError(os.str(), required);
    }

    PIDESolution sol;
    sol.grid = grid;
    sol.mode = PideMode::imex;
    sol.theta = theta;
    sol.iterations = 1;

    const std::size_t nz = grid.nz_total();
    const int nl = grid.l.n;
    const std::size_t slice = grid.slice_size();
    sol.values.resize(grid.total_size());

    std::vector<double> g_slice;
    detail::terminal_slice(model, grid, g_slice);
    std::copy(g_slice.begin(), g_slice.end(), sol.values.begin() + static_cast<std::ptrdiff_t>(slice) * grid.n_t);

    // one stepper per l level, reused across the march
    std::vector<std::unique_ptr<detail::FrozenStepper1D>> steppers1;
    std::vector<std::unique_ptr<detail::FrozenStepper2D>> steppers2;
    if (grid.dim() == 1)
        for (int il = 0; il < nl; ++il)
            steppers1.push_back(std::make_unique<detail::FrozenStepper1D>(model, grid, grid.l.node(il), theta));
    else
        for (int il = 0; il < nl; ++il)
            steppers2.push_back(std::make_unique<detail::FrozenStepper2D>(model, grid, grid.l.node(il), theta));

    std::vector<double> islice(slice);
    std::vector<std::vector<double>> psi_next(static_cast<std::size_t>(nl), std::vector<double>(nz));
    std::vector<std::vector<double>> psi_cur(static_cast<std::size_t>(nl), std::vector<double>(nz));
    std::vector<std::vector<double>> src(static_cast<std::size_t>(nl), std::vector<double>(nz));
    for (int il = 0; il < nl; ++il)
        for (std::size_t iz = 0; iz < nz; ++iz) psi_next[static_cast<std::size_t>(il)][iz] = g_slice[grid.slice_flat(iz, il)];

    Vec zc;
    long clamps = 0;
    for (int m = grid.n_t - 1; m >= 0; --m) {
        const double tm = grid.t_node(m);
        const double tp = grid.t_node(m + 1);
        std::span<const double> v_next(sol.values.data() + static_cast<std::size_t>(m + 1) * slice, slice);
        apply_integral_operator(model, grid, tp, v_next, islice, clamps);
        for (std::size_t iz = 0; iz < nz; ++iz) {
            grid.z_coords(iz, zc);
            for (int il = 0; il < nl; ++il) {
                const double f_mix = theta * model.running_cost(tm, zc, grid.l.node(il)) +
                                     (1.0 - theta) * model.running_cost(tp, zc, grid.l.node(il));
                src[static_cast<std::size_t>(il)][iz] = islice[grid.slice_flat(iz, il)] - f_mix;
            }
        }
        parallel_chunks(static_cast<std::size_t>(nl), [&](std::size_t lb, std::size_t le) {
            for (std::size_t il = lb; il < le; ++il) {
                if (grid.dim() == 1)
                    steppers1[il]->step(m, psi_next[il], src[il].data(), psi_cur[il]);
                else
                    steppers2[il]->step(m, psi_next[il], src[il].data(), psi_cur[il]);
            }
        });
        for (int il = 0; il < nl; ++il) {
            for (std::size_t iz = 0; iz < nz; ++iz)
                sol.values[grid.flat(m, iz, il)] = psi_cur[static_cast<std::size_t>(il)][iz];
            std::swap(psi_next[static_cast<std::size_t>(il)], psi_cur[static_cast<std::size_t>(il)]);
        }
    }
    sol.clamp_count = clamps;
    return sol;
}

inline PIDESolution solve_pide(const ModelSpec& model, const GridSpec& grid, const SolverOptions& opts) {
    return opts.mode == PideMode::fixed_point
               ? solve_pide_fixed_point(model, grid, opts.tol, opts.max_iter, opts.theta)
               : solve_pide_imex(model, grid, opts.theta);
}

// ---------------------------------------------------------------------------
// residual diagnostics
// ---------------------------------------------------------------------------

/// Interior PIDE residual v_t + L v - c v - f of a computed solution, all
/// derivatives by centered differences, the nonlocal term by the same mark
/// quadrature the solver uses. Reported over interior nodes only (time nodes
/// 1..n_t-1 and the grid's interior margins).
inline ResidualStats pide_residual(const PIDESolution& sol, const ModelSpec& model) {
    const GridSpec& grid = sol.grid;
    const int d = grid.dim();
    if (grid.n_t < 3) throw std::invalid_argument("pide_residual: need at least 3 interior time nodes");
    const std::size_t nz = grid.nz_total();
    const int nl = grid.l.n;
    const std::size_t slice = grid.slice_size();
    const double dt = grid.dt();

    ResidualStats stats;
    double sum = 0.0;
    std::vector<double> islice(slice);
    Vec zc, a(static_cast<std::size_t>(d)), b_buf, sig;
    long clamps = 0;
    int zidx[2];

    const int mz = std::max(1, grid.margin_z);
    for (int m = 1; m < grid.n_t; ++m) {
        const double tm = grid.t_node(m);
        std::span<const double> vm(sol.values.data() + static_cast<std::size_t>(m) * slice, slice);
        apply_integral_operator(model, grid, tm, vm, islice, clamps);
        for (std::size_t iz = 0; iz < nz; ++iz) {
            grid.z_indices(iz, zidx);
            bool interior = true;
            for (int ax = 0; ax < d; ++ax)
                if (zidx[ax] < mz || zidx[ax] >= grid.z[static_cast<std::size_t>(ax)].n - mz) interior = false;
            if (!interior) continue;
            grid.z_coords(iz, zc);
            for (int il = grid.margin_l_lo; il < nl - grid.margin_l_hi; ++il) {
                const double lv = grid.l.node(il);
                const double v = sol.value(m, iz, il);
                const double vt = (sol.value(m + 1, iz, il) - sol.value(m - 1, iz, il)) / (2.0 * dt);

                model.drift(tm, zc, lv, a);
                model.sigma(tm, zc, lv, b_buf, sig);
                double local = 0.0;
                for (int ax = 0; ax < d; ++ax) {
                    const double dz = grid.z[static_cast<std::size_t>(ax)].step();
                    const std::size_t stride =
                        (ax == d - 1) ? 1 : static_cast<std::size_t>(grid.z[static_cast<std::size_t>(d - 1)].n);
                    const double vp = sol.value(m, iz + stride, il);
                    const double vm_ = sol.value(m, iz - stride, il);
                    local += a[static_cast<std::size_t>(ax)] * (vp - vm_) / (2.0 * dz);
                    local += 0.5 * sig[static_cast<std::size_t>(ax) * d + ax] * (vp - 2.0 * v + vm_) / (dz * dz);
                }
                if (d == 2 && sig[1] != 0.0) {
                    const double dz1 = grid.z[0].step(), dz2 = grid.z[1].step();
                    const std::size_t s1 = static_cast<std::size_t>(grid.z[1].n);
                    const double mixed = (sol.value(m, iz + s1 + 1, il) - sol.value(m, iz + s1 - 1, il) -
                                          sol.value(m, iz - s1 + 1, il) + sol.value(m, iz - s1 - 1, il)) /
                                         (4.0 * dz1 * dz2);
                    local += sig[1] * mixed;
                }

                const double res = vt + local + islice[grid.slice_flat(iz, il)] -
                                   model.discount(tm, zc, lv) * v - model.running_cost(tm, zc, lv);
                stats.max_abs = std::max(stats.max_abs, std::abs(res));
                sum += std::abs(res);
                ++stats.n_nodes;
            }
        }
    }
    if (stats.n_nodes) stats.mean_abs = sum / static_cast<double>(stats.n_nodes);
    return stats;
}

enum class RefineAxis { time, space_z, space_l, all };

/// One-level refinement: halves dt and/or the spatial steps (node counts
/// n -> 2n-1 keep existing nodes in place; interior margins scale with them).
inline GridSpec refine(const GridSpec& g, RefineAxis axis) {
    GridSpec r = g;
    if (axis == RefineAxis::time || axis == RefineAxis::all) r.n_t *= 2;
    if (axis == RefineAxis::space_z || axis == RefineAxis::all) {
        for (auto& ax : r.z) ax.n = 2 * ax.n - 1;
        r.margin_z *= 2;
    }
    if (axis == RefineAxis::space_l || axis == RefineAxis::all) {
        r.l.n = 2 * r.l.n - 1;
        r.margin_l_lo *= 2;
        r.margin_l_hi *= 2;
    }
    return r;
}

struct ResidualDecay {
    ResidualStats coarse, fine;
    double rate_max = 0.0;   // log2(coarse/fine)
    double rate_mean = 0.0;
};

/// Measured residual decay across one refinement of the chosen axis.
inline ResidualDecay residual_decay(const ModelSpec& model, const GridSpec& grid,
                                    const SolverOptions& opts, RefineAxis axis) {
    ResidualDecay out;
    const PIDESolution sc = solve_pide(model, grid, opts);
    const PIDESolution sf = solve_pide(model, refine(grid, axis), opts);
    out.coarse = pide_residual(sc, model);
    out.fine = pide_residual(sf, model);
    out.rate_max = std::log2(out.coarse.max_abs / out.fine.max_abs);
    out.rate_mean = std::log2(out.coarse.mean_abs / out.fine.mean_abs);
    return out;
}

/// Data-driven two-sided comparison bound. With D = e^{+-T||c||} the discount
/// factor range, v must lie in
///   [ min(g_min D, g_min / D) - T ||f|| D,  max(g_max D, g_max / D) + T ||f|| D ].
/// Infinite declared bounds make the corresponding side unbounded.
struct ValueBounds {
    double lo, hi;
};

inline ValueBounds comparison_value_bounds(const ModelSpec& model, const GridSpec& grid) {
    double gmin = std::numeric_limits<double>::infinity();
    double gmax = -gmin;
    Vec zc;
    for (std::size_t iz = 0; iz < grid.nz_total(); ++iz) {
        grid.z_coords(iz, zc);
        for (int il = 0; il < grid.l.n; ++il) {
            const double g = model.terminal(zc, grid.l.node(il));
            gmin = std::min(gmin, g);
            gmax = std::max(gmax, g);
        }
    }
    const double horizon = grid.T - grid.t0;
    const double grow = std::exp(horizon * model.bounds.sup_c);
    const double shrink = std::exp(-horizon * model.bounds.sup_c);
    ValueBounds vb;
    vb.lo = std::min(gmin * grow, gmin * shrink) - horizon * model.bounds.sup_f * grow;
    vb.hi = std::max(gmax * grow, gmax * shrink) + horizon * model.bounds.sup_f * grow;
    return vb;
}

}  // namespace markovpide
