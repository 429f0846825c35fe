#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "markovpide/model.hpp"

namespace markovpide {

/// Flat string-keyed parameter map with typed accessors. Reads are tracked so
/// a misspelled key can be reported instead of silently ignored.
class Params {
public:
    Params() = default;

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    void set(const std::string& key, double value) {
        std::ostringstream os;
        os.precision(17);
        os << value;
        kv_[key] = os.str();
    }
    void set(const std::string& key, const std::vector<double>& values) {
        std::ostringstream os;
        os.precision(17);
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (i) os << ",";
            os << values[i];
        }
        kv_[key] = os.str();
    }

    bool has(const std::string& key) const { return kv_.count(key) != 0; }

    double get_number(const std::string& key) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) throw std::invalid_argument("missing model parameter '" + key + "'");
        return parse_number(key, it->second);
    }
    double get_number_or(const std::string& key, double fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        return parse_number(key, it->second);
    }
    std::vector<double> get_list(const std::string& key) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) throw std::invalid_argument("missing model parameter '" + key + "'");
        touched_.insert(key);
        std::vector<double> out;
        std::string item;
        std::istringstream is(it->second);
        while (std::getline(is, item, ',')) out.push_back(parse_raw(key, item));
        if (out.empty()) throw std::invalid_argument("empty list for model parameter '" + key + "'");
        return out;
    }
    std::string get_string_or(const std::string& key, const std::string& fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        touched_.insert(key);
        return it->second;
    }

    /// Keys never read by the consumer (typo protection).
    std::vector<std::string> unused() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : kv_)
            if (!touched_.count(k)) out.push_back(k);
        return out;
    }

    const std::map<std::string, std::string>& raw() const { return kv_; }

private:
    double parse_number(const std::string& key, const std::string& text) const {
        touched_.insert(key);
        return parse_raw(key, text);
    }
    static double parse_raw(const std::string& key, const std::string& text) {
        char* end = nullptr;
        const double v = std::strtod(text.c_str(), &end);
        if (end == text.c_str() || (end && *end != '\0'))
            throw std::invalid_argument("parameter '" + key + "': cannot parse number '" + text + "'");
        return v;
    }

    std::map<std::string, std::string> kv_;
    mutable std::set<std::string> touched_;
};

namespace detail {

// Bounded intensity family lambda(z) = lambda0 + (l1*z^2 + l2)/(1+z^2),
// evaluated on the first z component. sup over z is lambda0 + max(l1,l2).
struct IntensityFamily {
    double lambda0 = 0.0, lambda1 = 0.0, lambda2 = 0.0;
    double operator()(const Vec& z) const {
        const double s = z.empty() ? 0.0 : z[0] * z[0];
        return lambda0 + (lambda1 * s + lambda2) / (1.0 + s);
    }
    double sup() const { return lambda0 + std::max(lambda1, lambda2); }
    // max_z |d lambda / d z| = 0.6495 |l1 - l2| (extremum of 2z/(1+z^2)^2 at z^2 = 1/3)
    double lip() const {
        return 0.649519052838329 * std::abs(lambda1 - lambda2);
    }
};

inline IntensityFamily read_intensity(const Params& p) {
    IntensityFamily lam;
    lam.lambda0 = p.get_number("lambda0");
    lam.lambda1 = p.get_number_or("lambda1", 0.0);
    lam.lambda2 = p.get_number_or("lambda2", 0.0);
    if (lam.lambda0 < 0.0 || lam.lambda1 < 0.0 || lam.lambda2 < 0.0)
        throw std::invalid_argument("intensity parameters lambda0/lambda1/lambda2 must be >= 0");
    return lam;
}

struct Payoffs {
    ScalarFieldFn c, f;
    TerminalFn g;
    double sup_g, lip_g;
};

inline Payoffs read_payoffs(const Params& p) {
    Payoffs out;
    const double c0 = p.get_number_or("c0", 0.0);
    const double f0 = p.get_number_or("f0", 0.0);
    out.c = [c0](double, const Vec&, double) { return c0; };
    out.f = [f0](double, const Vec&, double) { return f0; };
    const std::string form = p.get_string_or("g", "linear_l");
    const double inf = std::numeric_limits<double>::infinity();
    if (form == "const") {
        const double g0 = p.get_number_or("g0", 0.0);
        out.g = [g0](const Vec&, double) { return g0; };
        out.sup_g = std::abs(g0);
        out.lip_g = 0.0;
    } else if (form == "linear_l") {
        out.g = [](const Vec&, double l) { return l; };
        out.sup_g = inf;
        out.lip_g = 1.0;
    } else if (form == "kink_l") {
        const double strike = p.get_number("strike");
        out.g = [strike](const Vec&, double l) { return std::abs(l - strike); };
        out.sup_g = inf;
        out.lip_g = 1.0;
    } else if (form == "quad_z") {
        out.g = [](const Vec& z, double) { return z.empty() ? 0.0 : z[0] * z[0]; };
        out.sup_g = inf;
        out.lip_g = inf;
    } else {
        throw std::invalid_argument("unknown terminal payoff form '" + form +
                                    "' (expected const|linear_l|kink_l|quad_z)");
    }
    return out;
}

inline void finish(ModelSpec& m, const Params& p) {
    const auto leftovers = p.unused();
    if (!leftovers.empty()) {
        std::string msg = "unknown model parameter(s) for '" + m.name + "':";
        for (const auto& k : leftovers) msg += " " + k;
        throw std::invalid_argument(msg);
    }
    m.mark_measure.validate();
}

}  // namespace detail

/// Builds one of the registered parametric models.
///
/// cox               Cox process: L jumps by 1 at state-dependent rate
///                   lambda(z) <= lambda_bar; Z a scalar diffusion with
///                   constant drift a0 and dispersion sigma.
/// compound_cox      jump sizes drawn from the discrete distribution mu
///                   (mu_nodes / mu_weights) instead of unit jumps.
/// ou_modulated_cox  Z is Ornstein-Uhlenbeck, drift kappa*(theta - z).
/// joint_jump        half the marks also kick Z by eta (self-excitation when
///                   the intensity increases with z).
///
/// The reference mark measure always carries total mass lambda_bar and the
/// jump density is lambda(z)/lambda_bar, so the density stays in [0,1]; a
/// parameter set with sup lambda > lambda_bar is rejected because it would
/// violate assumption A2 (density bound nu <= 1).
inline ModelSpec build_catalog_model(const std::string& name, const Params& params) {
    if (name != "cox" && name != "compound_cox" && name != "ou_modulated_cox" && name != "joint_jump")
        throw std::invalid_argument("unknown catalog model '" + name + "'");

    ModelSpec m;
    m.name = name;
    m.dim_z = 1;
    m.time_homogeneous = true;

    const auto lam = detail::read_intensity(params);
    const double lambda_bar = params.get_number("lambda_bar");
    if (!(lambda_bar > 0.0) || !std::isfinite(lambda_bar))
        throw std::invalid_argument("lambda_bar must be finite and > 0");
    if (lam.sup() > lambda_bar * (1.0 + 1e-12))
        throw std::invalid_argument(
            "sup lambda(z) = " + std::to_string(lam.sup()) + " exceeds lambda_bar = " +
            std::to_string(lambda_bar) + ": violates assumption A2 (jump density nu <= 1)");

    const double sigma = params.get_number_or("sigma", 1.0);
    if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be > 0");
    m.dispersion = [sigma](double, const Vec&, double, Vec& out) { out[0] = sigma; };
    m.bounds.sup_b = sigma;
    m.bounds.lip_b = 0.0;

    if (name == "ou_modulated_cox") {
        const double kappa = params.get_number("kappa");
        const double theta = params.get_number("theta");
        if (kappa < 0.0) throw std::invalid_argument("kappa must be >= 0");
        m.drift = [kappa, theta](double, const Vec& z, double, Vec& out) { out[0] = kappa * (theta - z[0]); };
        m.bounds.lip_a = kappa;
    } else {
        const double a0 = params.get_number_or("a0", 0.0);
        m.drift = [a0](double, const Vec&, double, Vec& out) { out[0] = a0; };
        m.bounds.lip_a = 0.0;
    }

    // Mark set and jump maps.
    const double nu_lip = lam.lip() / lambda_bar;
    if (name == "compound_cox") {
        const auto mu_nodes = params.get_list("mu_nodes");
        std::vector<double> mu_weights;
        if (params.has("mu_weights")) {
            mu_weights = params.get_list("mu_weights");
            if (mu_weights.size() != mu_nodes.size())
                throw std::invalid_argument("mu_weights must match mu_nodes in length");
        } else {
            mu_weights.assign(mu_nodes.size(), 1.0);
        }
        double wsum = 0.0;
        for (double w : mu_weights) {
            if (!(w > 0.0)) throw std::invalid_argument("mu_weights must be > 0");
            wsum += w;
        }
        std::vector<double> weights(mu_nodes.size());
        std::vector<double> rho(mu_nodes.size());
        for (std::size_t k = 0; k < mu_nodes.size(); ++k) {
            weights[k] = lambda_bar * mu_weights[k] / wsum;  // lambda_bar * mu({u_k})
            rho[k] = std::max(std::abs(mu_nodes[k]), nu_lip);
        }
        m.mark_measure = MarkMeasure::make(mu_nodes, weights);
        m.jump_l = [](double, const Vec&, double, double u) { return u; };
        m.jump_z = [](double, const Vec&, double, double, Vec& out) { out[0] = 0.0; };
        m.rho = rho;
    } else if (name == "joint_jump") {
        const double eta = params.get_number("eta");
        // payload 0: pure L jump; payload 1: joint jump moving Z by eta
        m.mark_measure = MarkMeasure::make({0.0, 1.0}, {lambda_bar / 2.0, lambda_bar / 2.0});
        m.jump_l = [](double, const Vec&, double, double) { return 1.0; };
        m.jump_z = [eta](double, const Vec&, double, double u, Vec& out) { out[0] = u * eta; };
        m.rho = std::vector<double>{std::max(1.0, nu_lip), std::max(1.0 + std::abs(eta), nu_lip)};
    } else {  // cox, ou_modulated_cox: unit L jumps, single mark
        m.mark_measure = MarkMeasure::make({1.0}, {lambda_bar});
        m.jump_l = [](double, const Vec&, double, double) { return 1.0; };
        m.jump_z = [](double, const Vec&, double, double, Vec& out) { out[0] = 0.0; };
        m.rho = std::vector<double>{std::max(1.0, nu_lip)};
    }

    m.nu_density = [lam, lambda_bar](double, const Vec& z, double, double) {
        return lam(z) / lambda_bar;
    };

    auto payoffs = detail::read_payoffs(params);
    m.discount = std::move(payoffs.c);
    m.running_cost = std::move(payoffs.f);
    m.terminal = std::move(payoffs.g);
    m.bounds.sup_c = std::abs(params.get_number_or("c0", 0.0));
    m.bounds.sup_f = std::abs(params.get_number_or("f0", 0.0));
    m.bounds.lip_f = 0.0;
    m.bounds.sup_g = payoffs.sup_g;
    m.bounds.lip_g = payoffs.lip_g;

    detail::finish(m, params);
    return m;
}

}  // namespace markovpide
