#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "markovpide/model.hpp"
#include "markovpide/rng.hpp"

namespace markovpide {

enum class CheckStatus { pass, warn, fail };

inline const char* to_string(CheckStatus s) {
    switch (s) {
        case CheckStatus::pass: return "pass";
        case CheckStatus::warn: return "warn";
        case CheckStatus::fail: return "fail";
    }
    return "?";
}

/// Bounded box in (t, z, l) from which validation samples are drawn.
struct SampleBox {
    double t_min = 0.0, t_max = 1.0;
    Vec z_min, z_max;
    double l_min = 0.0, l_max = 1.0;
};

struct CheckLocation {
    double t = 0.0;
    Vec z;
    double l = 0.0;
    double u = std::numeric_limits<double>::quiet_NaN();  // mark payload if relevant
};

struct CheckResult {
    std::string id;  // A0..A5 or ELLIPTICITY
    CheckStatus status = CheckStatus::pass;
    double worst_value = 0.0;
    CheckLocation where;
    std::string note;
};

/// Sampling-based report on the model's standing assumptions. A report, not a
/// proof: Lipschitz constants are max difference quotients over sampled pairs,
/// sup norms are maxima over samples. Gross violations (non-finite values,
/// density above 1) fail; declared-bound violations and degenerate dispersion
/// only warn.
struct ValidationReport {
    std::vector<CheckResult> checks;
    std::map<std::string, double> sampled_lipschitz;  // a, b, jumps, nu, f, g
    double ellipticity_min_eig = 0.0;

    bool ok() const {
        for (const auto& c : checks)
            if (c.status == CheckStatus::fail) return false;
        return true;
    }
    const CheckResult* find(const std::string& id) const {
        for (const auto& c : checks)
            if (c.id == id) return &c;
        return nullptr;
    }
};

namespace detail {

struct SamplePoint {
    double t;
    Vec z;
    double l;
};

inline double norm2(const Vec& a, const Vec& b, double la, double lb) {
    double s = (la - lb) * (la - lb);
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

inline double min_eig_sym(const Vec& sig, int d) {
    if (d == 1) return sig[0];
    Eigen::MatrixXd m(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) m(i, j) = sig[static_cast<std::size_t>(i) * d + j];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

}  // namespace detail

inline ValidationReport validate_assumptions(const ModelSpec& model, const SampleBox& box,
                                             int n_samples, std::uint64_t seed) {
    if (n_samples < 2) throw std::invalid_argument("validate_assumptions: n_samples >= 2 required");
    const int d = model.dim_z;
    if (static_cast<int>(box.z_min.size()) != d || static_cast<int>(box.z_max.size()) != d)
        throw std::invalid_argument("validate_assumptions: sample box dimension mismatch");

    PathRng rng(seed, 0);
    std::vector<detail::SamplePoint> pts(static_cast<std::size_t>(n_samples));
    for (auto& p : pts) {
        p.t = box.t_min + (box.t_max - box.t_min) * rng.uniform();
        p.z.resize(static_cast<std::size_t>(d));
        for (int i = 0; i < d; ++i)
            p.z[static_cast<std::size_t>(i)] =
                box.z_min[static_cast<std::size_t>(i)] +
                (box.z_max[static_cast<std::size_t>(i)] - box.z_min[static_cast<std::size_t>(i)]) * rng.uniform();
        p.l = box.l_min + (box.l_max - box.l_min) * rng.uniform();
    }

    ValidationReport report;
    bool nonfinite = false;
    CheckLocation nonfinite_at;
    std::string nonfinite_what;
    double a0_worst = 0.0;

    Vec a(static_cast<std::size_t>(d)), b(static_cast<std::size_t>(d) * d);
    Vec b_buf, sig, gz(static_cast<std::size_t>(d));

    auto record_nonfinite = [&](const char* what, const detail::SamplePoint& p, double u) {
        if (nonfinite) return;
        nonfinite = true;
        nonfinite_what = what;
        nonfinite_at = {p.t, p.z, p.l, u};
    };

    // --- pointwise scans: finiteness, density bound, sup norms, ellipticity
    double nu_max = -std::numeric_limits<double>::infinity();
    double nu_min = std::numeric_limits<double>::infinity();
    CheckLocation nu_max_at;
    double sup_c = 0.0, sup_f = 0.0, sup_g = 0.0, sup_b_seen = 0.0;
    double min_eig = std::numeric_limits<double>::infinity();
    CheckLocation min_eig_at;
    double gamma_over_rho = 0.0;
    CheckLocation gamma_at;

    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const auto& p : pts) {
        model.drift(p.t, p.z, p.l, a);
        model.dispersion(p.t, p.z, p.l, b);
        for (double v : a)
            if (!std::isfinite(v)) record_nonfinite("drift", p, nan);
        for (double v : b) {
            if (!std::isfinite(v)) record_nonfinite("dispersion", p, nan);
            sup_b_seen = std::max(sup_b_seen, std::abs(v));
            a0_worst = std::max(a0_worst, std::abs(v));
        }
        for (double v : a) a0_worst = std::max(a0_worst, std::abs(v));

        const double c = model.discount(p.t, p.z, p.l);
        const double f = model.running_cost(p.t, p.z, p.l);
        const double g = model.terminal(p.z, p.l);
        if (!std::isfinite(c)) record_nonfinite("discount", p, nan);
        if (!std::isfinite(f)) record_nonfinite("running_cost", p, nan);
        if (!std::isfinite(g)) record_nonfinite("terminal", p, nan);
        sup_c = std::max(sup_c, std::abs(c));
        sup_f = std::max(sup_f, std::abs(f));
        sup_g = std::max(sup_g, std::abs(g));
        a0_worst = std::max({a0_worst, std::abs(c), std::abs(f), std::abs(g)});

        model.sigma(p.t, p.z, p.l, b_buf, sig);
        const double eig = detail::min_eig_sym(sig, d);
        if (eig < min_eig) {
            min_eig = eig;
            min_eig_at = {p.t, p.z, p.l, nan};
        }

        for (std::size_t k = 0; k < model.mark_measure.size(); ++k) {
            const double u = model.mark_measure.nodes[k];
            const double nu = model.nu_density(p.t, p.z, p.l, u);
            if (!std::isfinite(nu)) record_nonfinite("nu_density", p, u);
            if (nu > nu_max) {
                nu_max = nu;
                nu_max_at = {p.t, p.z, p.l, u};
            }
            nu_min = std::min(nu_min, nu);
            model.jump_z(p.t, p.z, p.l, u, gz);
            double gabs = std::abs(model.jump_l(p.t, p.z, p.l, u));
            for (double v : gz) {
                if (!std::isfinite(v)) record_nonfinite("jump_z", p, u);
                gabs += std::abs(v);
            }
            a0_worst = std::max({a0_worst, gabs, std::abs(nu)});
            if (model.rho) {
                const double rho_k = (*model.rho)[k];
                const double ratio = rho_k > 0.0 ? gabs / rho_k : (gabs > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
                if (ratio > gamma_over_rho) {
                    gamma_over_rho = ratio;
                    gamma_at = {p.t, p.z, p.l, u};
                }
            }
        }
    }

    // --- pairwise scans: Lipschitz difference quotients.
    // Axis-aligned pairs recover exact constants for affine coefficients;
    // random same-t pairs probe the joint behavior.
    double lip_a = 0.0, lip_b = 0.0, lip_nu = 0.0, lip_gz = 0.0, lip_gl = 0.0;
    double lip_f = 0.0, lip_g = 0.0, rho_quot = 0.0;
    Vec a2(static_cast<std::size_t>(d)), b2(static_cast<std::size_t>(d) * d), gz2(static_cast<std::size_t>(d));

    auto pair_scan = [&](const detail::SamplePoint& p, const detail::SamplePoint& q) {
        const double dist = detail::norm2(p.z, q.z, p.l, q.l);
        if (dist < 1e-14) return;
        model.drift(p.t, p.z, p.l, a);
        model.drift(p.t, q.z, q.l, a2);
        model.dispersion(p.t, p.z, p.l, b);
        model.dispersion(p.t, q.z, q.l, b2);
        double da = 0.0, db = 0.0;
        for (int i = 0; i < d; ++i) da += (a[i] - a2[i]) * (a[i] - a2[i]);
        for (std::size_t i = 0; i < b.size(); ++i) db += (b[i] - b2[i]) * (b[i] - b2[i]);
        lip_a = std::max(lip_a, std::sqrt(da) / dist);
        lip_b = std::max(lip_b, std::sqrt(db) / dist);

        for (std::size_t k = 0; k < model.mark_measure.size(); ++k) {
            const double u = model.mark_measure.nodes[k];
            const double dnu = std::abs(model.nu_density(p.t, p.z, p.l, u) - model.nu_density(p.t, q.z, q.l, u));
            model.jump_z(p.t, p.z, p.l, u, gz);
            model.jump_z(p.t, q.z, q.l, u, gz2);
            double dgz = 0.0;
            for (int i = 0; i < d; ++i) dgz += (gz[i] - gz2[i]) * (gz[i] - gz2[i]);
            dgz = std::sqrt(dgz);
            const double dgl = std::abs(model.jump_l(p.t, p.z, p.l, u) - model.jump_l(p.t, q.z, q.l, u));
            lip_nu = std::max(lip_nu, dnu / dist);
            lip_gz = std::max(lip_gz, dgz / dist);
            lip_gl = std::max(lip_gl, dgl / dist);
            if (model.rho) {
                const double rho_k = (*model.rho)[k];
                const double combined = (dgz + dgl + dnu) / dist;
                rho_quot = std::max(rho_quot, rho_k > 0.0 ? combined / rho_k : (combined > 0.0 ? std::numeric_limits<double>::infinity() : 0.0));
            }
        }
    };
    auto pair_scan_tx = [&](const detail::SamplePoint& p, const detail::SamplePoint& q) {
        const double dist = std::abs(p.t - q.t) + detail::norm2(p.z, q.z, p.l, q.l);
        if (dist < 1e-14) return;
        const double df = std::abs(model.running_cost(p.t, p.z, p.l) - model.running_cost(q.t, q.z, q.l));
        const double dg = std::abs(model.terminal(p.z, p.l) - model.terminal(q.z, q.l));
        lip_f = std::max(lip_f, df / dist);
        lip_g = std::max(lip_g, dg / dist);
    };

    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        detail::SamplePoint q = pts[i + 1];
        q.t = pts[i].t;  // A1/A3 quotients are in x at fixed t
        pair_scan(pts[i], q);
        pair_scan_tx(pts[i], pts[i + 1]);
    }
    for (const auto& p : pts) {
        for (int axis = 0; axis <= d; ++axis) {
            detail::SamplePoint q = p;
            const double step = 0.25 * (axis < d ? (box.z_max[axis] - box.z_min[axis]) : (box.l_max - box.l_min));
            if (step <= 0.0) continue;
            if (axis < d)
                q.z[axis] = std::min(box.z_max[axis], q.z[axis] + step);
            else
                q.l = std::min(box.l_max, q.l + step);
            pair_scan(p, q);
            pair_scan_tx(p, q);
        }
    }

    report.sampled_lipschitz = {{"a", lip_a},       {"b", lip_b}, {"gamma_z", lip_gz},
                                {"gamma_l", lip_gl}, {"nu", lip_nu}, {"f", lip_f},
                                {"g", lip_g}};
    report.ellipticity_min_eig = min_eig;

    // --- assemble per-assumption verdicts
    auto add = [&](std::string id, CheckStatus st, double worst, CheckLocation where, std::string note) {
        report.checks.push_back({std::move(id), st, worst, std::move(where), std::move(note)});
    };
    const double slack = 1.05;

    if (nonfinite)
        add("A0", CheckStatus::fail, std::numeric_limits<double>::quiet_NaN(), nonfinite_at,
            "non-finite " + nonfinite_what);
    else
        add("A0", CheckStatus::pass, a0_worst, {}, "all sampled coefficient values finite");

    {
        CheckStatus st = CheckStatus::pass;
        std::string note = "max difference quotient for (a,b)";
        if (std::isfinite(model.bounds.lip_a) && lip_a > model.bounds.lip_a * slack + 1e-12) {
            st = CheckStatus::warn;
            note = "drift quotient exceeds declared Lipschitz constant";
        }
        if (std::isfinite(model.bounds.lip_b) && lip_b > model.bounds.lip_b * slack + 1e-12) {
            st = CheckStatus::warn;
            note = "dispersion quotient exceeds declared Lipschitz constant";
        }
        add("A1", st, std::max(lip_a, lip_b), {}, note);
    }

    if (nu_max > 1.0 + 1e-12 || nu_min < -1e-12)
        add("A2", CheckStatus::fail, nu_max, nu_max_at, "jump density nu outside [0,1]");
    else
        add("A2", CheckStatus::pass, nu_max, nu_max_at, "nu within [0,1]; total mass finite");

    if (model.rho) {
        const double worst = std::max(gamma_over_rho, rho_quot);
        add("A3", worst > slack ? CheckStatus::warn : CheckStatus::pass, worst, gamma_at,
            "jump size / modulus ratio (<=1 expected)");
    } else {
        add("A3", CheckStatus::pass, std::max(lip_gz + lip_gl, 0.0), {},
            "no modulus declared; reporting sampled jump quotients");
    }

    add("A4",
        (std::isfinite(model.bounds.sup_c) && sup_c > model.bounds.sup_c * slack + 1e-12)
            ? CheckStatus::warn
            : CheckStatus::pass,
        sup_c, {}, "sampled sup |c|");

    {
        CheckStatus st = CheckStatus::pass;
        std::string note = "sampled sup and Lipschitz quotients for (f,g)";
        if (std::isfinite(model.bounds.sup_f) && sup_f > model.bounds.sup_f * slack + 1e-12) st = CheckStatus::warn;
        if (std::isfinite(model.bounds.sup_g) && sup_g > model.bounds.sup_g * slack + 1e-12) st = CheckStatus::warn;
        if (std::isfinite(model.bounds.lip_f) && lip_f > model.bounds.lip_f * slack + 1e-12) st = CheckStatus::warn;
        if (std::isfinite(model.bounds.lip_g) && lip_g > model.bounds.lip_g * slack + 1e-12) st = CheckStatus::warn;
        if (st == CheckStatus::warn) note = "sampled value exceeds a declared bound";
        add("A5", st, std::max(sup_f, sup_g), {}, note);
    }

    add("ELLIPTICITY", min_eig < 1e-12 ? CheckStatus::warn : CheckStatus::pass, min_eig, min_eig_at,
        min_eig < 1e-12 ? "dispersion degenerate in some z-direction" : "min eigenvalue of Sigma over samples");

    return report;
}

}  // namespace markovpide
