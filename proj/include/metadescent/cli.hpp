#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "metadescent/csv.hpp"
#include "metadescent/run_config.hpp"

namespace metadescent {

/// CLI exit codes (external contract).
namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int usage = 1;       ///< usage or config errors
inline constexpr int degenerate = 2;  ///< numerical degeneracy
inline constexpr int verify_fail = 3; ///< verification gate tripped
} // namespace exit_code

namespace cli_detail {

// compact numeric form for console tables; CSV output keeps full precision
inline std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return std::string(buf);
}

struct CommonOverrides {
    std::optional<std::uint64_t> seed;
    std::string output;
    std::optional<int> replicates;
};

inline void apply(const CommonOverrides& o, RunFile& run) {
    if (o.seed) {
        run.seed = *o.seed;
        if (run.plan) run.plan->seed = *o.seed;
    }
    if (!o.output.empty()) run.output = o.output;
    if (o.replicates) {
        if (*o.replicates < 1)
            throw config_error("replicates override must be positive");
        if (run.plan) run.plan->replicates = *o.replicates;
    }
}

inline int run_sweep_command(const std::string& config_path,
                             const CommonOverrides& o, std::ostream& out,
                             std::ostream& err) {
    RunFile run = load_run_file(config_path);
    apply(o, run);
    if (!run.plan)
        throw config_error("config has no 'sweep' section");
    if (run.output.empty())
        throw config_error("no output path (config 'output' or --output)");
    const std::vector<SweepRecord> records = run_sweep(*run.plan);
    std::ofstream os(run.output, std::ios::binary);
    if (!os)
        throw config_error("cannot write output file '" + run.output + "'");
    write_sweep_csv(os, *run.plan, records);
    os.close();
    int invalid = 0;
    for (const auto& rec : records)
        if (rec.invalid) ++invalid;
    out << "wrote " << run.output << " (" << records.size()
        << " grid points, " << run.plan->estimands.size()
        << " estimands)\n";
    if (invalid > 0) {
        err << invalid << " grid point(s) had every replicate skipped\n";
        return exit_code::degenerate;
    }
    return exit_code::ok;
}

inline void print_bound_report(const BoundReport& r, std::ostream& out) {
    auto line = [&](const char* symbol, double v) {
        out << "  " << std::left << std::setw(14) << symbol
            << format_double(v) << "\n";
    };
    line("alpha_t'", r.alpha_t_prime);
    line("b_eig_min", r.b_eig_min);
    line("b_eig_max", r.b_eig_max);
    line("c_eig_min", r.c_eig_min);
    line("c_eig_max", r.c_eig_max);
    line("D", r.d_factor);
    line("b_delta", r.b_delta);
    line("b_w0", r.b_w0);
    line("b_w0_lower", r.b_w0_lower);
    line("b_w_ideal", r.b_w_ideal);
    line("b_w", r.b_w);
    line("eta", r.eta);
    out << "  branch        "
        << (r.branch == EigBranch::p_greater_than_n_t ? "p > n_t" : "p <= n_t")
        << "\n";
    if (r.below_threshold)
        out << "  flag          below_threshold (min{p, n_t} < 256)\n";
    if (r.vacuous_eta)
        out << "  flag          vacuous_eta (eta >= 1)\n";
    if (r.ideal_infinite)
        out << "  flag          ideal_unbounded (" << r.ideal_reason << ")\n";
}

inline int run_bounds_command(const std::string& config_path,
                              const CommonOverrides& o, std::ostream& out) {
    RunFile run = load_run_file(config_path);
    apply(o, run);
    const BoundReport r = evaluate_bounds(run.cfg);
    out << "model-error bound report (p=" << run.cfg.p
        << ", n_t=" << run.cfg.n_t << ", m=" << run.cfg.m
        << ", n_v=" << run.cfg.n_v << ")\n";
    print_bound_report(r, out);
    if (!run.output.empty()) {
        std::ofstream os(run.output, std::ios::binary);
        if (!os)
            throw config_error("cannot write output file '" + run.output + "'");
        write_bounds_csv(os, r);
        out << "wrote " << run.output << "\n";
    }
    return exit_code::ok;
}

inline int run_verify_command(const std::string& config_path,
                              const CommonOverrides& o, bool corrupt,
                              const std::string& dump_path, std::ostream& out) {
    RunFile run = load_run_file(config_path);
    apply(o, run);
    AuditOptions opt;
    if (run.plan) opt.replicates = run.plan->replicates;
    if (o.replicates) opt.replicates = *o.replicates;
    if (corrupt) opt.corruption = 0.5; // negative control: skew every target

    if (!dump_path.empty()) {
        const RngStream rs = RngStream(run.seed).child(0);
        const Truths truths = sample_truths(run.cfg, rs);
        const TaskBatch batch = sample_task_batch(run.cfg, truths.w, rs);
        const MetaSystem sys =
            build_meta_system(batch, run.cfg, run.cfg.w0_full());
        std::ofstream os(dump_path, std::ios::binary);
        if (!os)
            throw config_error("cannot write dump file '" + dump_path + "'");
        dump_meta_system(sys, os);
        out << "wrote " << dump_path << "\n";
    }

    const VerifyReport rep = run_verification(run.cfg, opt, run.seed);
    out << "expectation audit (replicates=" << opt.replicates << ")\n";
    out << "  " << std::left << std::setw(36) << "quantity" << std::setw(15)
        << "empirical" << std::setw(15) << "theoretical" << std::setw(13)
        << "stderr" << "z\n";
    for (const auto& a : rep.audits) {
        out << "  " << std::left << std::setw(36) << a.name << std::setw(15)
            << fmt6(a.empirical) << std::setw(15) << fmt6(a.theoretical)
            << std::setw(13) << fmt6(a.stderror) << fmt6(a.z) << "\n";
    }
    if (!rep.identities.empty()) {
        out << "algebraic identities\n";
        for (const auto& i : rep.identities) {
            out << "  " << std::left << std::setw(38) << i.name << "worst "
                << std::setw(14) << fmt6(i.worst) << "tol " << std::setw(10)
                << fmt6(i.tol) << (i.pass ? "pass" : "FAIL") << "\n";
        }
    }
    out << (rep.pass ? "verification passed" : "verification FAILED") << "\n";
    return rep.pass ? exit_code::ok : exit_code::verify_fail;
}

inline int run_floor_command(const std::string& config_path,
                             const CommonOverrides& o, std::ostream& out) {
    RunFile run = load_run_file(config_path);
    apply(o, run);
    const ApproxBound approx = approximate_bounds(run.cfg, run.constants);
    const DescentFloor f =
        descent_floor(run.cfg, run.constants.c4, approx.b_delta);
    out << "descent-floor report (nu=" << format_double(run.cfg.nu())
        << ", sigma=" << format_double(run.cfg.sigma) << ")\n";
    out << "  b_delta       " << format_double(approx.b_delta) << "\n";
    out << "  g             " << format_double(f.g) << "\n";
    if (f.monotone_decreasing) {
        out << "  verdict       monotone decreasing for p > C4 m n_v ("
            << format_double(run.constants.c4 * run.cfg.rows()) << ")\n";
    } else {
        out << "  verdict       interior floor\n";
        out << "  p_star        " << format_double(f.p_star) << "\n";
        out << "  floor_value   " << format_double(f.floor_value) << "\n";
    }
    return exit_code::ok;
}

} // namespace cli_detail

/// Full CLI driver; returns the process exit code. Streams are injectable
/// for tests.
inline int run_cli(std::vector<std::string> args,
                   std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
    CLI::App app{
        "metadescent: overfitted meta-learning linear regression laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    cli_detail::CommonOverrides overrides;
    bool corrupt = false;
    std::string dump_path;

    auto add_common = [&](CLI::App* cmd, bool with_replicates) {
        cmd->add_option("config", config_path, "run config (JSON)")->required();
        cmd->add_option("--seed", overrides.seed, "override master seed");
        cmd->add_option("--output", overrides.output, "override output path");
        if (with_replicates)
            cmd->add_option("--replicates", overrides.replicates,
                            "override replicate count");
    };

    CLI::App* sweep = app.add_subcommand(
        "sweep", "run the Monte-Carlo sweep and write the CSV");
    add_common(sweep, true);

    CLI::App* bounds = app.add_subcommand(
        "bounds", "evaluate the model-error bound stack");
    add_common(bounds, false);

    CLI::App* verify = app.add_subcommand(
        "verify", "audit closed-form expectations and identities");
    add_common(verify, true);
    verify->add_flag("--corrupt-theory", corrupt,
                     "skew theoretical targets (negative-control testing)");
    verify->add_option("--dump-system", dump_path,
                       "write one sampled B and gamma as plain text");

    CLI::App* floor = app.add_subcommand(
        "floor", "locate the descent floor of the approximate bound");
    add_common(floor, false);

    std::reverse(args.begin(), args.end()); // CLI11 wants reversed argv
    try {
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) { // --help
            out << app.help();
            return exit_code::ok;
        }
        err << "error: " << e.what() << "\n";
        return exit_code::usage;
    }

    try {
        if (sweep->parsed())
            return cli_detail::run_sweep_command(config_path, overrides, out, err);
        if (bounds->parsed())
            return cli_detail::run_bounds_command(config_path, overrides, out);
        if (verify->parsed())
            return cli_detail::run_verify_command(config_path, overrides,
                                                  corrupt, dump_path, out);
        if (floor->parsed())
            return cli_detail::run_floor_command(config_path, overrides, out);
    } catch (const config_error& e) {
        err << "config error: " << e.what() << "\n";
        return exit_code::usage;
    } catch (const degenerate_system_error& e) {
        err << "numerical degeneracy: " << e.what() << "\n";
        return exit_code::degenerate;
    }
    return exit_code::usage;
}

} // namespace metadescent
