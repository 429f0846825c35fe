#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "markovpide/catalog.hpp"
#include "markovpide/config.hpp"
#include "markovpide/csv.hpp"
#include "markovpide/estimators.hpp"
#include "markovpide/pide.hpp"
#include "markovpide/simulate.hpp"
#include "markovpide/validate.hpp"
#include "markovpide/verify.hpp"

namespace markovpide {

namespace runner_detail {

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
    return detail::splitmix64(base ^ salt);
}

struct RunContext {
    RunConfig cfg;
    ModelSpec model;
    std::uint64_t hash = 0;
    std::filesystem::path out;
};

/// Everything that can be rejected before computation starts: config parse,
/// catalog construction (including the nu <= 1 gate), grid consistency, output
/// directory. Throws ConfigError.
inline RunContext make_context(const RunConfig& cfg_in) {
    RunContext ctx;
    ctx.cfg = cfg_in;
    try {
        ctx.model = build_catalog_model(ctx.cfg.model_name, ctx.cfg.model_params);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
    if (static_cast<int>(ctx.cfg.z0.size()) != ctx.model.dim_z)
        throw ConfigError("initial.z0 dimension does not match the model");
    ctx.hash = config_hash(ctx.cfg);
    ctx.out = ctx.cfg.out_dir;
    std::error_code ec;
    std::filesystem::create_directories(ctx.out, ec);
    if (ec) throw ConfigError("cannot create output directory '" + ctx.cfg.out_dir + "'");
    return ctx;
}

inline GridSpec grid_from_config(const RunContext& ctx) {
    const RunConfig& cfg = ctx.cfg;
    GridSpec g;
    g.t0 = cfg.t0;
    g.T = cfg.T;
    g.n_t = cfg.n_t;
    if (cfg.z_min.size() != cfg.z_max.size() || cfg.z_min.size() != cfg.n_z.size())
        throw ConfigError("grid.z_min/z_max/n_z must have matching lengths");
    for (std::size_t a = 0; a < cfg.z_min.size(); ++a)
        g.z.push_back({cfg.z_min[a], cfg.z_max[a], cfg.n_z[a]});
    g.l = {cfg.l_min, cfg.l_max, cfg.n_l};
    g.jump_cap = cfg.jump_cap;
    g.margin_z = std::max(1, cfg.n_z[0] / 10);
    g.margin_l_lo = 0;
    g.margin_l_hi = std::max(1, cfg.n_l / 5);
    try {
        g.validate();
        g.validate_l_span(ctx.model, cfg.l0, cfg.l0);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return g;
}

inline std::ofstream open_artifact(const RunContext& ctx, const std::string& name,
                                   const std::string& kind) {
    std::ofstream os(ctx.out / name);
    if (!os) throw ConfigError("cannot open artifact file '" + name + "'");
    write_metadata(os, kind, ctx.hash, ctx.cfg.seed);
    return os;
}

// ---------------------------------------------------------------------------

inline int cmd_validate(const RunContext& ctx) {
    SampleBox box;
    box.t_min = ctx.cfg.t0;
    box.t_max = ctx.cfg.T;
    box.z_min = ctx.cfg.z_min;
    box.z_max = ctx.cfg.z_max;
    box.l_min = ctx.cfg.l_min;
    box.l_max = ctx.cfg.l_max;
    const ValidationReport rep = validate_assumptions(ctx.model, box, 4000, ctx.cfg.seed);
    auto os = open_artifact(ctx, "validation.csv", "validation report");
    write_validation_csv(os, rep);
    for (const auto& c : rep.checks)
        std::cout << c.id << ": " << to_string(c.status) << " (worst " << c.worst_value << ") "
                  << c.note << "\n";
    return rep.ok() ? 0 : 1;
}

inline int cmd_simulate(const RunContext& ctx) {
    const RunConfig& cfg = ctx.cfg;
    for (int i = 0; i < std::max(1, cfg.dump_paths); ++i) {
        const auto ref = simulate_reference_path(ctx.model, cfg.t0, cfg.z0, cfg.l0, cfg.T,
                                                 cfg.dt_max, cfg.seed, static_cast<std::uint64_t>(i));
        auto os = open_artifact(ctx, "trajectory_reference_" + std::to_string(i) + ".csv", "trajectory");
        write_trajectory_csv(os, ref);
        const auto phys = simulate_physical_path(ctx.model, cfg.t0, cfg.z0, cfg.l0, cfg.T,
                                                 cfg.dt_max, cfg.seed, static_cast<std::uint64_t>(i));
        auto os2 = open_artifact(ctx, "trajectory_physical_" + std::to_string(i) + ".csv", "trajectory");
        write_trajectory_csv(os2, phys);
    }
    std::cout << "wrote " << 2 * std::max(1, cfg.dump_paths) << " trajectory files to "
              << ctx.out.string() << "\n";
    return 0;
}

inline int cmd_estimate(const RunContext& ctx) {
    const RunConfig& cfg = ctx.cfg;
    const auto phys = estimate_v_physical(ctx.model, cfg.t0, cfg.z0, cfg.l0, cfg.T, cfg.n_paths,
                                          cfg.dt_max, derive_seed(cfg.seed, 1));
    const auto wt = estimate_v_weighted(ctx.model, cfg.t0, cfg.z0, cfg.l0, cfg.T, 1.0, cfg.n_paths,
                                        cfg.dt_max, derive_seed(cfg.seed, 2), WeightedForm::terminal);
    const auto wr = estimate_v_weighted(ctx.model, cfg.t0, cfg.z0, cfg.l0, cfg.T, 1.0, cfg.n_paths,
                                        cfg.dt_max, derive_seed(cfg.seed, 2), WeightedForm::running);
    auto os = open_artifact(ctx, "estimates.csv", "estimator results");
    write_estimator_header(os, ctx.model.dim_z);
    for (const auto& r : {phys, wt, wr}) {
        write_estimator_row(os, r, cfg.t0, cfg.z0, cfg.l0);
        std::cout << to_string(r.tag) << ": " << r.mean << " +- " << r.std_error << " (n=" << r.n_paths
                  << ", flagged=" << r.n_flagged << ")\n";
    }
    return 0;
}

inline int cmd_solve(const RunContext& ctx) {
    const GridSpec grid = grid_from_config(ctx);
    SolverOptions opts{ctx.cfg.mode, ctx.cfg.theta, ctx.cfg.tol, ctx.cfg.max_iter};
    const PIDESolution sol = solve_pide(ctx.model, grid, opts);
    auto os = open_artifact(ctx, "solution.csv", "pide solution");
    write_solution_csv(os, sol);
    std::cout << "mode=" << to_string(sol.mode) << " iterations=" << sol.iterations
              << " converged=" << (sol.converged ? "yes" : "no")
              << " clamped_destinations=" << sol.clamp_count << "\n";
    if (!sol.sup_norm_deltas.empty())
        std::cout << "final sup-norm delta: " << sol.sup_norm_deltas.back() << "\n";
    return 0;
}

inline int cmd_compare(const RunContext& ctx) {
    const RunConfig& cfg = ctx.cfg;
    if (cfg.probes.empty()) throw ConfigError("compare: at least one probe required (key 'probes')");
    const GridSpec grid = grid_from_config(ctx);
    SolverOptions opts{cfg.mode, cfg.theta, cfg.tol, cfg.max_iter};
    const PIDESolution sol = solve_pide(ctx.model, grid, opts);

    CompareOptions copts;
    copts.n_paths = cfg.compare_n_paths > 0 ? cfg.compare_n_paths : cfg.n_paths;
    copts.dt_max = cfg.dt_max;
    copts.seed = derive_seed(cfg.seed, 3);
    copts.grid_error_budget = cfg.budget;
    const ComparisonReport rep = compare_mc_pide(ctx.model, sol, cfg.probes, copts);

    // regularity ladder: the config grid refined twice in every direction
    std::vector<GridSpec> ladder{grid, refine(grid, RefineAxis::all),
                                 refine(refine(grid, RefineAxis::all), RefineAxis::all)};
    const RegularityReport reg = regularity_probe(ctx.model, ladder, cfg.probes, opts);

    {
        auto os = open_artifact(ctx, "comparison.csv", "mc-pide comparison");
        write_comparison_csv(os, rep);
    }
    {
        auto os = open_artifact(ctx, "regularity.csv", "regularity ladder");
        write_regularity_csv(os, reg);
    }
    {
        auto os = open_artifact(ctx, "summary.txt", "comparison summary");
        os << "probes: " << rep.probes.size() << "\n";
        os << "all_pass: " << (rep.all_pass ? "yes" : "no") << "\n";
        os << "worst |PIDE - MC|: " << rep.worst_abs << "\n";
        os << "worst normalized discrepancy: " << rep.worst_ci_norm << "\n";
        os << "grid_error_budget: " << rep.grid_error_budget << "\n";
        os << "lip_l stable: " << (reg.lip_l_stable ? "yes" : "no") << "\n";
        os << "second_z converges: " << (reg.second_z_converges ? "yes" : "no") << "\n";
    }
    for (const auto& p : rep.probes)
        std::cout << "probe t=" << p.point.t << " l=" << p.point.l << ": pide=" << p.pide_value
                  << " mc=" << p.mc_physical.mean << " " << (p.pass ? "pass" : ("FAIL " + p.flag))
                  << "\n";
    std::cout << "regularity: lip_l " << (reg.lip_l_stable ? "stable" : "NOT stable")
              << ", second-z " << (reg.second_z_converges ? "converging" : "NOT converging") << "\n";
    return (rep.all_pass && reg.lip_l_stable && reg.second_z_converges) ? 0 : 3;
}

// ---------------------------------------------------------------------------
// demo: the full check suite on the cox model, printed as a pass/fail table
// ---------------------------------------------------------------------------

struct DemoRow {
    std::string name;
    bool pass = false;
    std::string detail;
};

inline int cmd_demo(std::uint64_t seed, const std::string& out_dir) {
    std::vector<DemoRow> rows;
    auto add = [&rows](const std::string& name, bool pass, const std::string& detail) {
        rows.push_back({name, pass, detail});
        std::cout << (pass ? "[PASS] " : "[FAIL] ") << name << "  " << detail << "\n";
    };
    std::ostringstream num;

    // state-dependent intensity lambda(z) = 1 + 1/(1+z^2) in [1,2], lambda_bar = 2
    Params p_state;
    p_state.set("lambda0", 1.0);
    p_state.set("lambda2", 1.0);
    p_state.set("lambda_bar", 2.0);
    p_state.set("g", std::string("linear_l"));
    const ModelSpec cox_state = build_catalog_model("cox", p_state);

    Params p_const;
    p_const.set("lambda0", 2.0);
    p_const.set("lambda_bar", 2.0);
    p_const.set("g", std::string("linear_l"));
    const ModelSpec cox_const = build_catalog_model("cox", p_const);

    const Vec z0 = {0.0};
    const double T = 1.0;
    const double lt = cox_state.mark_measure.total_mass;

    {  // 1: pathwise Girsanov bound
        double worst = -1e300;
        Trajectory traj;
        bool ok = true;
        for (int i = 0; i < 30000 && ok; ++i) {
            simulate_reference_path_into(cox_state, 0.0, z0, 0.0, T, 2e-3, derive_seed(seed, 10), i, traj);
            for (std::size_t r = 0; r < traj.n_rows(); ++r) {
                const double excess = traj.xi_path[r] - std::exp(lt * traj.grid_times[r]);
                worst = std::max(worst, excess);
                if (excess > 1e-12) ok = false;
            }
        }
        num.str("");
        num << "worst xi - e^(lambda*t) = " << worst;
        add("girsanov_pathwise_bound", ok, num.str());
    }
    {  // 2: martingale normalization of xi_T
        const long n = 100000;
        std::vector<double> xs(n);
        parallel_chunks(n, [&](std::size_t b, std::size_t e) {
            Trajectory traj;
            for (std::size_t i = b; i < e; ++i) {
                simulate_reference_path_into(cox_state, 0.0, z0, 0.0, T, 1e-3, derive_seed(seed, 11), i, traj);
                xs[i] = traj.xi_path[traj.n_rows() - 1];
            }
        });
        const auto ms = mean_stderr(xs);
        const bool ok = std::abs(ms.mean - 1.0) <= 3.0 * ms.std_error;
        num.str("");
        num << "mean xi_T = " << ms.mean << " +- " << ms.std_error;
        add("xi_martingale_mean_one", ok, num.str());
    }
    {  // 3: Bayes equivalence of the three estimators
        bool ok = true;
        double worst_gap = 0.0;
        const std::vector<ProbePoint> pts = {{0.0, {0.0}, 0.0}, {0.0, {0.5}, 2.0}, {0.25, {0.0}, 1.0}};
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const auto rep = bayes_consistency(cox_state, pts[i].t, pts[i].z, pts[i].l, T, 20000,
                                               1e-3, derive_seed(seed, 20 + 2 * i),
                                               derive_seed(seed, 21 + 2 * i));
            ok = ok && rep.pass;
            worst_gap = std::max(worst_gap, std::abs(rep.physical.mean - rep.terminal.mean));
        }
        num.str("");
        num << "3 probes, worst physical-weighted gap = " << worst_gap;
        add("bayes_estimator_equivalence", ok, num.str());
    }

    GridSpec oracle_grid;
    oracle_grid.t0 = 0.0;
    oracle_grid.T = T;
    oracle_grid.n_t = 1000;
    oracle_grid.z = {{-1.0, 1.0, 101}};
    oracle_grid.l = {5.0, 30.0, 26};
    oracle_grid.jump_cap = 25;
    oracle_grid.margin_z = 10;
    oracle_grid.margin_l_hi = 5;

    {  // 4: closed-form oracle E L_T = l + lambda (T - t) = 7
        const auto mc = estimate_v_physical(cox_const, 0.0, z0, 5.0, T, 100000, 1e-3, derive_seed(seed, 30));
        const auto sol = solve_pide_fixed_point(cox_const, oracle_grid, 1e-8, 60, 0.5);
        const double pide = sol.value(0, 50, 0);  // (t=0, z=0, l=5)
        const bool ok = std::abs(mc.mean - 7.0) <= 3.0 * mc.std_error && std::abs(pide - 7.0) <= 1e-3;
        num.str("");
        num << "mc = " << mc.mean << " +- " << mc.std_error << ", pide = " << pide;
        add("poisson_mean_oracle_7", ok, num.str());
    }
    {  // 5: discounted oracle e^{-c0 T} (l + lambda T)
        Params pd = p_const;
        pd.set("c0", 0.5);
        const ModelSpec disc = build_catalog_model("cox", pd);
        const double target = std::exp(-0.5) * 7.0;
        const auto mc = estimate_v_physical(disc, 0.0, z0, 5.0, T, 100000, 1e-3, derive_seed(seed, 31));
        const auto sol = solve_pide_fixed_point(disc, oracle_grid, 1e-8, 60, 0.5);
        const double pide = sol.value(0, 50, 0);
        const bool ok =
            std::abs(mc.mean - target) <= 3.0 * mc.std_error && std::abs(pide - target) <= 1e-3;
        num.str("");
        num << "target = " << target << ", mc = " << mc.mean << ", pide = " << pide;
        add("discounted_oracle", ok, num.str());
    }

    GridSpec state_grid;
    state_grid.t0 = 0.0;
    state_grid.T = T;
    state_grid.n_t = 500;
    state_grid.z = {{-3.0, 3.0, 151}};
    state_grid.l = {0.0, 25.0, 26};
    state_grid.jump_cap = 25;
    state_grid.margin_z = 15;
    state_grid.margin_l_hi = 5;
    const PIDESolution sol_state = solve_pide_fixed_point(cox_state, state_grid, 1e-8, 60, 0.5);

    {  // 6: MC-PIDE cross-validation without a closed form
        CompareOptions copts;
        copts.n_paths = 20000;
        copts.dt_max = 1e-3;
        copts.seed = derive_seed(seed, 40);
        const std::vector<ProbePoint> probes = {
            {0.0, {0.0}, 0.0}, {0.0, {1.0}, 2.0}, {0.5, {-1.0}, 1.0}};
        const auto rep = compare_mc_pide(cox_state, sol_state, probes, copts);
        num.str("");
        num << "budget = " << rep.grid_error_budget << ", worst |pide-mc| = " << rep.worst_abs;
        add("mc_pide_cross_validation", rep.all_pass, num.str());
    }
    {  // 7: fixed-point contraction record and IMEX agreement
        bool ok = sol_state.converged && sol_state.iterations <= 60;
        for (std::size_t i = 2; i + 1 < sol_state.sup_norm_deltas.size(); ++i)
            if (sol_state.sup_norm_deltas[i + 1] > sol_state.sup_norm_deltas[i]) ok = false;
        const auto imex = solve_pide_imex(cox_state, state_grid, 0.5);
        double diff = 0.0;
        for (std::size_t i = 0; i < imex.values.size(); ++i)
            diff = std::max(diff, std::abs(imex.values[i] - sol_state.values[i]));
        GridSpec fine = refine(state_grid, RefineAxis::time);
        const auto fp_f = solve_pide_fixed_point(cox_state, fine, 1e-8, 60, 0.5);
        const auto imex_f = solve_pide_imex(cox_state, fine, 0.5);
        double diff_f = 0.0;
        for (std::size_t i = 0; i < imex_f.values.size(); ++i)
            diff_f = std::max(diff_f, std::abs(imex_f.values[i] - fp_f.values[i]));
        const double ratio = diff / std::max(diff_f, 1e-300);
        ok = ok && ratio >= 1.5;
        num.str("");
        num << "iterations = " << sol_state.iterations << ", |fp-imex| ratio under dt/2 = " << ratio;
        add("fixed_point_and_imex", ok, num.str());
    }
    {  // 8: residual decay orders, each axis refined with the other's error floored
        GridSpec rg = state_grid;
        rg.n_t = 25;
        rg.z = {{-3.0, 3.0, 241}};
        rg.margin_z = 24;
        const auto dec_t = residual_decay(cox_state, rg, {PideMode::fixed_point, 1.0, 1e-10, 60},
                                          RefineAxis::time);
        GridSpec rgz = state_grid;
        rgz.n_t = 200;
        rgz.z = {{-3.0, 3.0, 31}};
        rgz.margin_z = 3;
        const auto dec_z = residual_decay(cox_state, rgz, {PideMode::fixed_point, 0.5, 1e-10, 60},
                                          RefineAxis::space_z);
        const bool ok = dec_t.rate_max >= 0.9 && dec_z.rate_max >= 1.8;
        num.str("");
        num << "order(dt) = " << dec_t.rate_max << ", order(dz) = " << dec_z.rate_max;
        add("residual_convergence_orders", ok, num.str());
    }
    {  // 9: regularity asymmetry with a kinked terminal condition
        Params pk = p_state;
        pk.set("g", std::string("kink_l"));
        pk.set("strike", 2.0);
        const ModelSpec kink = build_catalog_model("cox", pk);
        GridSpec base;
        base.t0 = 0.0;
        base.T = T;
        base.n_t = 50;
        base.z = {{-2.0, 2.0, 41}};
        base.l = {0.0, 24.0, 25};
        base.jump_cap = 20;
        base.margin_z = 4;
        base.margin_l_hi = 5;
        std::vector<GridSpec> ladder{base, refine(base, RefineAxis::all),
                                     refine(refine(base, RefineAxis::all), RefineAxis::all)};
        const std::vector<ProbePoint> probes = {{0.0, {0.0}, 1.0}, {0.0, {0.5}, 3.0}};
        const auto reg = regularity_probe(kink, ladder, probes, {PideMode::fixed_point, 0.5, 1e-8, 60});
        num.str("");
        num << "lip_l = " << reg.lip_l[0] << " -> " << reg.lip_l[2];
        add("regularity_asymmetry", reg.lip_l_stable && reg.second_z_converges, num.str());
    }
    {  // 10: coupling identity at nu == 1
        bool ok = true;
        Trajectory ref, phys;
        for (int i = 0; i < 200 && ok; ++i) {
            simulate_reference_path_into(cox_const, 0.0, z0, 0.0, T, 1e-2, derive_seed(seed, 50), i, ref);
            simulate_physical_path_into(cox_const, 0.0, z0, 0.0, T, 1e-2, derive_seed(seed, 50), i, phys);
            ok = ok && ref.z_flat == phys.z_flat && ref.l_path == phys.l_path;
            for (double x : ref.xi_path) ok = ok && x == 1.0;
        }
        add("coupling_identity_nu_one", ok, "reference == physical bitwise, xi == 1");
    }

    bool all = true;
    for (const auto& r : rows) all = all && r.pass;
    std::cout << (all ? "demo: all checks passed\n" : "demo: FAILURES present\n");

    if (!out_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(out_dir, ec);
        if (!ec) {
            std::ofstream os(std::filesystem::path(out_dir) / "demo_report.csv");
            RunConfig demo_cfg;
            demo_cfg.seed = seed;
            write_metadata(os, "demo report", config_hash(demo_cfg), seed);
            os << "check,pass,detail\n";
            for (const auto& r : rows) os << r.name << "," << (r.pass ? 1 : 0) << "," << r.detail << "\n";
        }
    }
    return all ? 0 : 3;
}

}  // namespace runner_detail

/// Subcommand dispatch; returns the process exit status.
///   0  success (and all pass flags for compare/demo)
///   1  computation failure
///   2  configuration error
///   3  comparison failure
inline int run_subcommand(const std::vector<std::string>& args) {
    using namespace runner_detail;
    if (args.empty() || args[0] == "-h" || args[0] == "--help") {
        std::cout << "usage: markov-pide <validate|simulate|estimate|solve|compare|demo> "
                     "[--config FILE] [--seed N] [--out DIR]\n";
        return args.empty() ? 2 : 0;
    }
    const std::string cmd = args[0];
    std::string config_path, out_override;
    std::optional<std::uint64_t> seed_override;
    for (std::size_t i = 1; i < args.size(); ++i) {
        const std::string& a = args[i];
        auto need_value = [&](const char* flag) -> const std::string& {
            if (i + 1 >= args.size()) throw ConfigError(std::string(flag) + " requires a value");
            return args[++i];
        };
        try {
            if (a == "--config")
                config_path = need_value("--config");
            else if (a == "--seed")
                seed_override = static_cast<std::uint64_t>(std::stoull(need_value("--seed")));
            else if (a == "--out")
                out_override = need_value("--out");
            else
                throw ConfigError("unknown option '" + a + "'");
        } catch (const ConfigError& e) {
            std::cerr << "config error: " << e.what() << "\n";
            return 2;
        } catch (const std::exception& e) {
            std::cerr << "config error: " << e.what() << "\n";
            return 2;
        }
    }

    if (cmd == "demo") {
        try {
            return cmd_demo(seed_override.value_or(42), out_override.empty() ? "out" : out_override);
        } catch (const std::exception& e) {
            std::cerr << "demo failed: " << e.what() << "\n";
            return 1;
        }
    }

    RunContext ctx;
    try {
        if (config_path.empty()) throw ConfigError("--config FILE is required");
        std::ifstream in(config_path);
        if (!in) throw ConfigError("cannot read config file '" + config_path + "'");
        std::stringstream buf;
        buf << in.rdbuf();
        RunConfig cfg = parse_config_text(buf.str());
        if (seed_override) cfg.seed = *seed_override;
        if (!out_override.empty()) cfg.out_dir = out_override;
        ctx = make_context(cfg);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (cmd == "validate") return cmd_validate(ctx);
        if (cmd == "simulate") return cmd_simulate(ctx);
        if (cmd == "estimate") return cmd_estimate(ctx);
        if (cmd == "solve") return cmd_solve(ctx);
        if (cmd == "compare") return cmd_compare(ctx);
        std::cerr << "config error: unknown subcommand '" << cmd << "'\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const StabilityError& e) {
        std::cerr << "computation failed: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "computation failed: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace markovpide
