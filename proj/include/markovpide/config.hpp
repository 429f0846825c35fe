#pragma once

#include <charconv>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "markovpide/catalog.hpp"
#include "markovpide/pide.hpp"
#include "markovpide/verify.hpp"

namespace markovpide {

/// Config file problem; the message carries the line number when known.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Full run description parsed from a flat `key = value` file. Documented
/// schema (one key per line, '#' comments, lists comma-separated):
///
///   model.name        catalog model id (cox|compound_cox|ou_modulated_cox|joint_jump)
///   model.<param>     numeric/string parameters forwarded to the catalog
///   horizon.T         terminal time
///   initial.t0/.z0/.l0   start point (z0 is a list for d > 1)
///   sim.dt_max/.n_paths/.seed/.dump_paths
///   grid.n_t, grid.z_min, grid.z_max, grid.n_z (lists per z axis),
///   grid.l_min, grid.l_max, grid.n_l, grid.jump_cap
///   solver.mode (fixed_point|imex), solver.tol, solver.max_iter, solver.theta
///   probes            semicolon-separated "t z... l" node coordinates
///   compare.n_paths   Monte Carlo budget for `compare` (0 = sim.n_paths)
///   compare.budget    grid error budget (auto when omitted)
///   output.dir        artifact directory
///
/// Unknown keys are hard errors.
struct RunConfig {
    std::string model_name = "cox";
    Params model_params;

    double T = 1.0;
    double t0 = 0.0;
    Vec z0 = {0.0};
    double l0 = 0.0;

    double dt_max = 1e-3;
    long n_paths = 10000;
    std::uint64_t seed = 12345;
    int dump_paths = 1;

    int n_t = 200;
    Vec z_min = {-3.0}, z_max = {3.0};
    std::vector<int> n_z = {151};
    double l_min = 0.0, l_max = 20.0;
    int n_l = 21;
    int jump_cap = 20;

    PideMode mode = PideMode::fixed_point;
    double tol = 1e-8;
    int max_iter = 60;
    double theta = 0.5;

    std::vector<ProbePoint> probes;

    long compare_n_paths = 0;
    double budget = -1.0;  // < 0 = derive from the residual
    std::string out_dir = "out";
};

namespace detail {

inline double parse_double_tok(const std::string& tok, int line) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || (end && *end != '\0'))
        throw ConfigError("line " + std::to_string(line) + ": cannot parse number '" + tok + "'");
    return v;
}

inline long parse_long_tok(const std::string& tok, int line) {
    const double v = parse_double_tok(tok, line);
    return static_cast<long>(v);
}

inline Vec parse_list_tok(const std::string& tok, int line) {
    Vec out;
    std::string item;
    std::istringstream is(tok);
    while (std::getline(is, item, ',')) out.push_back(parse_double_tok(item, line));
    if (out.empty()) throw ConfigError("line " + std::to_string(line) + ": empty list");
    return out;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<ProbePoint> parse_probes(const std::string& text, int line) {
    std::vector<ProbePoint> out;
    std::string group;
    std::istringstream is(text);
    while (std::getline(is, group, ';')) {
        group = trim(group);
        if (group.empty()) continue;
        std::istringstream gs(group);
        std::vector<double> nums;
        std::string tok;
        while (gs >> tok) nums.push_back(parse_double_tok(tok, line));
        if (nums.size() < 3)
            throw ConfigError("line " + std::to_string(line) + ": probe needs at least 't z l'");
        ProbePoint p;
        p.t = nums.front();
        p.l = nums.back();
        p.z.assign(nums.begin() + 1, nums.end() - 1);
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace detail

inline RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    cfg.model_params = Params();
    std::istringstream is(text);
    std::string raw;
    int line = 0;
    bool saw_z_axes = false;
    while (std::getline(is, raw)) {
        ++line;
        const auto hash = raw.find('#');
        std::string s = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (s.empty()) continue;
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line) + ": expected 'key = value'");
        const std::string key = detail::trim(s.substr(0, eq));
        const std::string value = detail::trim(s.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError("line " + std::to_string(line) + ": empty key or value");

        if (key.rfind("model.", 0) == 0) {
            const std::string sub = key.substr(6);
            if (sub == "name")
                cfg.model_name = value;
            else
                cfg.model_params.set(sub, value);
        } else if (key == "horizon.T") {
            cfg.T = detail::parse_double_tok(value, line);
        } else if (key == "initial.t0") {
            cfg.t0 = detail::parse_double_tok(value, line);
        } else if (key == "initial.z0") {
            cfg.z0 = detail::parse_list_tok(value, line);
        } else if (key == "initial.l0") {
            cfg.l0 = detail::parse_double_tok(value, line);
        } else if (key == "sim.dt_max") {
            cfg.dt_max = detail::parse_double_tok(value, line);
        } else if (key == "sim.n_paths") {
            cfg.n_paths = detail::parse_long_tok(value, line);
        } else if (key == "sim.seed") {
            cfg.seed = static_cast<std::uint64_t>(detail::parse_long_tok(value, line));
        } else if (key == "sim.dump_paths") {
            cfg.dump_paths = static_cast<int>(detail::parse_long_tok(value, line));
        } else if (key == "grid.n_t") {
            cfg.n_t = static_cast<int>(detail::parse_long_tok(value, line));
        } else if (key == "grid.z_min") {
            cfg.z_min = detail::parse_list_tok(value, line);
            saw_z_axes = true;
        } else if (key == "grid.z_max") {
            cfg.z_max = detail::parse_list_tok(value, line);
            saw_z_axes = true;
        } else if (key == "grid.n_z") {
            const Vec v = detail::parse_list_tok(value, line);
            cfg.n_z.clear();
            for (double x : v) cfg.n_z.push_back(static_cast<int>(x));
            saw_z_axes = true;
        } else if (key == "grid.l_min") {
            cfg.l_min = detail::parse_double_tok(value, line);
        } else if (key == "grid.l_max") {
            cfg.l_max = detail::parse_double_tok(value, line);
        } else if (key == "grid.n_l") {
            cfg.n_l = static_cast<int>(detail::parse_long_tok(value, line));
        } else if (key == "grid.jump_cap") {
            cfg.jump_cap = static_cast<int>(detail::parse_long_tok(value, line));
        } else if (key == "solver.mode") {
            if (value == "fixed_point")
                cfg.mode = PideMode::fixed_point;
            else if (value == "imex")
                cfg.mode = PideMode::imex;
            else
                throw ConfigError("line " + std::to_string(line) +
                                  ": solver.mode must be fixed_point or imex");
        } else if (key == "solver.tol") {
            cfg.tol = detail::parse_double_tok(value, line);
        } else if (key == "solver.max_iter") {
            cfg.max_iter = static_cast<int>(detail::parse_long_tok(value, line));
        } else if (key == "solver.theta") {
            cfg.theta = detail::parse_double_tok(value, line);
        } else if (key == "probes") {
            cfg.probes = detail::parse_probes(value, line);
        } else if (key == "compare.n_paths") {
            cfg.compare_n_paths = detail::parse_long_tok(value, line);
        } else if (key == "compare.budget") {
            cfg.budget = detail::parse_double_tok(value, line);
        } else if (key == "output.dir") {
            cfg.out_dir = value;
        } else {
            throw ConfigError("line " + std::to_string(line) + ": unknown key '" + key + "'");
        }
    }
    if (saw_z_axes &&
        (cfg.z_min.size() != cfg.z_max.size() || cfg.z_min.size() != cfg.n_z.size()))
        throw ConfigError("grid.z_min/z_max/n_z must have matching lengths");
    return cfg;
}

namespace detail {

inline std::string num_str(double x) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}
inline std::string list_str(const Vec& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + num_str(v[i]);
    return s;
}

}  // namespace detail

/// Canonical text form; parse(serialize(parse(x))) == parse(x).
inline std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream os;
    os << "model.name = " << cfg.model_name << "\n";
    for (const auto& [k, v] : cfg.model_params.raw()) os << "model." << k << " = " << v << "\n";
    os << "horizon.T = " << detail::num_str(cfg.T) << "\n";
    os << "initial.t0 = " << detail::num_str(cfg.t0) << "\n";
    os << "initial.z0 = " << detail::list_str(cfg.z0) << "\n";
    os << "initial.l0 = " << detail::num_str(cfg.l0) << "\n";
    os << "sim.dt_max = " << detail::num_str(cfg.dt_max) << "\n";
    os << "sim.n_paths = " << cfg.n_paths << "\n";
    os << "sim.seed = " << cfg.seed << "\n";
    os << "sim.dump_paths = " << cfg.dump_paths << "\n";
    os << "grid.n_t = " << cfg.n_t << "\n";
    os << "grid.z_min = " << detail::list_str(cfg.z_min) << "\n";
    os << "grid.z_max = " << detail::list_str(cfg.z_max) << "\n";
    {
        std::string s;
        for (std::size_t i = 0; i < cfg.n_z.size(); ++i) s += (i ? "," : "") + std::to_string(cfg.n_z[i]);
        os << "grid.n_z = " << s << "\n";
    }
    os << "grid.l_min = " << detail::num_str(cfg.l_min) << "\n";
    os << "grid.l_max = " << detail::num_str(cfg.l_max) << "\n";
    os << "grid.n_l = " << cfg.n_l << "\n";
    os << "grid.jump_cap = " << cfg.jump_cap << "\n";
    os << "solver.mode = " << to_string(cfg.mode) << "\n";
    os << "solver.tol = " << detail::num_str(cfg.tol) << "\n";
    os << "solver.max_iter = " << cfg.max_iter << "\n";
    os << "solver.theta = " << detail::num_str(cfg.theta) << "\n";
    if (!cfg.probes.empty()) {
        os << "probes = ";
        for (std::size_t p = 0; p < cfg.probes.size(); ++p) {
            if (p) os << "; ";
            os << detail::num_str(cfg.probes[p].t);
            for (double zv : cfg.probes[p].z) os << " " << detail::num_str(zv);
            os << " " << detail::num_str(cfg.probes[p].l);
        }
        os << "\n";
    }
    os << "compare.n_paths = " << cfg.compare_n_paths << "\n";
    if (cfg.budget >= 0.0) os << "compare.budget = " << detail::num_str(cfg.budget) << "\n";
    os << "output.dir = " << cfg.out_dir << "\n";
    return os.str();
}

/// FNV-1a over the canonical serialization; embedded in artifact headers.
inline std::uint64_t config_hash(const RunConfig& cfg) {
    const std::string s = serialize_config(cfg);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace markovpide
