#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>

#include "markovpide/estimators.hpp"
#include "markovpide/pide.hpp"
#include "markovpide/trajectory.hpp"
#include "markovpide/validate.hpp"
#include "markovpide/verify.hpp"

namespace markovpide {

/// Shortest round-trip decimal form; keeps artifacts bitwise stable across
/// runs on the same platform.
inline std::string csv_num(double x) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

inline std::string csv_num(std::int64_t x) { return std::to_string(x); }

/// Metadata block every artifact starts with.
inline void write_metadata(std::ostream& os, const std::string& kind, std::uint64_t config_hash,
                           std::uint64_t seed) {
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(config_hash));
    os << "# markov-pide " << kind << "\n";
    os << "# config_hash=" << hex << "\n";
    os << "# seed=" << seed << "\n";
}

/// One row per grid time; events carry their own rows (post-jump state at the
/// same timestamp, event_flag = 1).
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
    os << "time";
    for (int i = 1; i <= traj.dim_z; ++i) os << ",z_" << i;
    os << ",l,xi,event_flag,mark_index,accepted\n";
    for (std::size_t r = 0; r < traj.n_rows(); ++r) {
        os << csv_num(traj.grid_times[r]);
        const auto z = traj.z_row(r);
        for (double v : z) os << "," << csv_num(v);
        os << "," << csv_num(traj.l_path[r]) << "," << csv_num(traj.xi_path[r]) << ","
           << static_cast<int>(traj.row_event[r]) << "," << traj.row_mark[r] << ","
           << static_cast<int>(traj.row_accepted[r]) << "\n";
    }
}

inline void write_estimator_header(std::ostream& os, int dim_z) {
    os << "estimator_tag,t";
    for (int i = 1; i <= dim_z; ++i) os << ",z_" << i;
    os << ",l,mean,std_error,ci_lo,ci_hi,n_paths,seed\n";
}

inline void write_estimator_row(std::ostream& os, const EstimatorResult& r, double t, const Vec& z,
                                double l) {
    os << to_string(r.tag) << "," << csv_num(t);
    for (double v : z) os << "," << csv_num(v);
    os << "," << csv_num(l) << "," << csv_num(r.mean) << "," << csv_num(r.std_error) << ","
       << csv_num(r.ci_lo) << "," << csv_num(r.ci_hi) << "," << r.n_paths << "," << r.seed << "\n";
}

inline void write_validation_csv(std::ostream& os, const ValidationReport& rep) {
    os << "check,status,worst_value,at_t,at_z,at_l,at_u\n";
    for (const auto& c : rep.checks) {
        os << c.id << "," << to_string(c.status) << "," << csv_num(c.worst_value) << ","
           << csv_num(c.where.t) << ",";
        for (std::size_t i = 0; i < c.where.z.size(); ++i) os << (i ? " " : "") << csv_num(c.where.z[i]);
        os << "," << csv_num(c.where.l) << "," << csv_num(c.where.u) << "\n";
    }
    for (const auto& [name, value] : rep.sampled_lipschitz)
        os << "lipschitz_" << name << ",info," << csv_num(value) << ",,,,\n";
    os << "min_eig_sigma,info," << csv_num(rep.ellipticity_min_eig) << ",,,,\n";
}

/// Solution export: metadata block then t,z_1[,z_2],l,value rows.
inline void write_solution_csv(std::ostream& os, const PIDESolution& sol) {
    const GridSpec& g = sol.grid;
    os << "# mode=" << to_string(sol.mode) << " theta=" << csv_num(sol.theta)
       << " iterations=" << sol.iterations << " converged=" << (sol.converged ? 1 : 0)
       << " clamped_destinations=" << sol.clamp_count << "\n";
    os << "# grid: t0=" << csv_num(g.t0) << " T=" << csv_num(g.T) << " n_t=" << g.n_t;
    for (std::size_t a = 0; a < g.z.size(); ++a)
        os << " z" << (a + 1) << "=[" << csv_num(g.z[a].lo) << "," << csv_num(g.z[a].hi) << ";"
           << g.z[a].n << "]";
    os << " l=[" << csv_num(g.l.lo) << "," << csv_num(g.l.hi) << ";" << g.l.n << "]\n";
    if (!sol.sup_norm_deltas.empty()) {
        os << "# sup_norm_deltas=";
        for (std::size_t i = 0; i < sol.sup_norm_deltas.size(); ++i)
            os << (i ? ";" : "") << csv_num(sol.sup_norm_deltas[i]);
        os << "\n";
    }
    os << "t";
    for (std::size_t a = 0; a < g.z.size(); ++a) os << ",z_" << (a + 1);
    os << ",l,value\n";
    Vec zc;
    for (int m = 0; m <= g.n_t; ++m)
        for (std::size_t iz = 0; iz < g.nz_total(); ++iz) {
            g.z_coords(iz, zc);
            for (int il = 0; il < g.l.n; ++il) {
                os << csv_num(g.t_node(m));
                for (double v : zc) os << "," << csv_num(v);
                os << "," << csv_num(g.l.node(il)) << "," << csv_num(sol.value(m, iz, il)) << "\n";
            }
        }
}

inline void write_comparison_csv(std::ostream& os, const ComparisonReport& rep) {
    os << "t,z,l,pide,mc_physical,se_physical,mc_weighted,se_weighted,pass,flag\n";
    for (const auto& p : rep.probes) {
        os << csv_num(p.point.t) << ",";
        for (std::size_t i = 0; i < p.point.z.size(); ++i) os << (i ? " " : "") << csv_num(p.point.z[i]);
        os << "," << csv_num(p.point.l) << "," << csv_num(p.pide_value) << ","
           << csv_num(p.mc_physical.mean) << "," << csv_num(p.mc_physical.std_error) << ","
           << csv_num(p.mc_weighted.mean) << "," << csv_num(p.mc_weighted.std_error) << ","
           << (p.pass ? 1 : 0) << "," << p.flag << "\n";
    }
}

inline void write_regularity_csv(std::ostream& os, const RegularityReport& rep) {
    os << "grid,lip_l";
    for (std::size_t p = 0; p < (rep.second_z.empty() ? 0 : rep.second_z[0].size()); ++p)
        os << ",d2z_probe" << p << ",dt1_probe" << p;
    os << "\n";
    for (std::size_t k = 0; k < rep.lip_l.size(); ++k) {
        os << k << "," << csv_num(rep.lip_l[k]);
        for (std::size_t p = 0; p < rep.second_z[k].size(); ++p)
            os << "," << csv_num(rep.second_z[k][p]) << "," << csv_num(rep.first_t[k][p]);
        os << "\n";
    }
}

}  // namespace markovpide
