#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "metadescent/bounds.hpp"
#include "metadescent/config.hpp"
#include "metadescent/meta_system.hpp"
#include "metadescent/rng.hpp"
#include "metadescent/solvers.hpp"
#include "metadescent/task_gen.hpp"

namespace metadescent {

// ---------------------------------------------------------------------------
// estimands

enum class Estimand : int {
    model_error_l2,
    model_error_ideal,
    model_error_underparam,
    term1,
    term2,
    test_error,
    eig_min,
    eig_max,
    delta_gamma_sq,
    meta_loss_residual,
};

inline constexpr int kEstimandCount = 10;

inline const char* estimand_name(Estimand e) {
    switch (e) {
        case Estimand::model_error_l2: return "model_error_l2";
        case Estimand::model_error_ideal: return "model_error_ideal";
        case Estimand::model_error_underparam: return "model_error_underparam";
        case Estimand::term1: return "term1";
        case Estimand::term2: return "term2";
        case Estimand::test_error: return "test_error";
        case Estimand::eig_min: return "eig_min";
        case Estimand::eig_max: return "eig_max";
        case Estimand::delta_gamma_sq: return "delta_gamma_sq";
        case Estimand::meta_loss_residual: return "meta_loss_residual";
    }
    return "?";
}

inline std::optional<Estimand> estimand_from_name(const std::string& name) {
    for (int i = 0; i < kEstimandCount; ++i) {
        const auto e = Estimand(i);
        if (name == estimand_name(e)) return e;
    }
    return std::nullopt;
}

inline std::vector<Estimand> all_estimands() {
    std::vector<Estimand> v;
    v.reserve(kEstimandCount);
    for (int i = 0; i < kEstimandCount; ++i) v.push_back(Estimand(i));
    return v;
}

/// Whether an estimand is defined in the regime selected by p vs m n_v.
inline bool estimand_applicable(Estimand e, bool overparameterized) {
    switch (e) {
        case Estimand::model_error_l2:
        case Estimand::model_error_ideal:
        case Estimand::term1:
        case Estimand::term2:
            return overparameterized;
        case Estimand::model_error_underparam:
            return !overparameterized;
        default:
            return true;
    }
}

// ---------------------------------------------------------------------------
// deterministic parallel map

inline int worker_count() {
    if (const char* env = std::getenv("METADESCENT_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc ? int(hc) : 1;
}

/// Runs body(i) for i in [0, n). Work distribution never affects results:
/// outputs must be written to per-index slots.
template <typename F>
inline void parallel_for(int n, F&& body, int workers = 0) {
    if (workers <= 0) workers = worker_count();
    workers = std::min(workers, std::max(1, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t) {
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

namespace detail {

// Neumaier compensated summation; accumulation order is always rep order,
// so worker count cannot change reported digits.
struct CompensatedSum {
    double sum = 0.0;
    double carry = 0.0;
    void add(double x) {
        const double t = sum + x;
        if (std::abs(sum) >= std::abs(x))
            carry += (sum - t) + x;
        else
            carry += (x - t) + sum;
        sum = t;
    }
    double value() const { return sum + carry; }
};

} // namespace detail

// ---------------------------------------------------------------------------
// replicate engine

struct ReplicateOutcome {
    bool ok = false;
    std::string skip_reason;
    std::array<double, kEstimandCount> values;

    ReplicateOutcome() {
        values.fill(std::numeric_limits<double>::quiet_NaN());
    }
    double value(Estimand e) const { return values[int(e)]; }
};

/// One seeded replicate: sample truths, batch and test task, assemble the
/// meta system, solve in the regime selected by p vs m n_v, and record every
/// estimand. Deterministic in (seed, rep_index). Degenerate solves are
/// reported as skips, not failures.
inline ReplicateOutcome run_replicate(const MetaConfig& cfg,
                                      std::uint64_t seed, int rep_index) {
    ReplicateOutcome out;
    const RngStream rep_stream = RngStream(seed).child(std::uint64_t(rep_index));
    try {
        const Truths truths = sample_truths(cfg, rep_stream);
        const TaskBatch batch = sample_task_batch(cfg, truths.w, rep_stream);
        const TestTask test = sample_test_task(cfg, rep_stream);
        const MetaSystem sys = build_meta_system(batch, cfg, cfg.w0_full());
        const GramContext ctx(sys);

        auto set = [&](Estimand e, double v) { out.values[int(e)] = v; };
        set(Estimand::eig_min, ctx.lambda_min());
        set(Estimand::eig_max, ctx.lambda_max());
        set(Estimand::delta_gamma_sq, sys.delta_gamma().squaredNorm());

        Eigen::VectorXd w_hat;
        if (cfg.overparameterized()) {
            const SolveReport l2 = solve_min_l2(sys, ctx);
            const SolveReport ideal = solve_ideal(sys, ctx);
            set(Estimand::model_error_l2, l2.model_error);
            set(Estimand::model_error_ideal, ideal.model_error);
            set(Estimand::term1, *l2.term1);
            set(Estimand::term2, *l2.term2);
            set(Estimand::meta_loss_residual, meta_loss(sys, l2.w_hat));
            w_hat = l2.w_hat;
        } else {
            const SolveReport ls = solve_underparameterized(sys);
            set(Estimand::model_error_underparam, ls.model_error);
            set(Estimand::meta_loss_residual, meta_loss(sys, ls.w_hat));
            w_hat = ls.w_hat;
        }
        // expected squared test error over the input distribution, given the
        // sampled test task and the adapted solution
        const AdaptedSolution adapted = adapt_test(w_hat, test, cfg);
        set(Estimand::test_error, (test.w_r - adapted.w).squaredNorm());
        out.ok = true;
    } catch (const degenerate_system_error& e) {
        out.ok = false;
        out.skip_reason = e.what();
    }
    return out;
}

// ---------------------------------------------------------------------------
// sweeps

enum class AlphaTRule { fixed, scaled };

struct SweepPlan {
    MetaConfig base;
    std::vector<int> p_grid;
    int replicates = 1;
    std::uint64_t seed = 0;
    std::vector<Estimand> estimands = all_estimands();
    AlphaTRule alpha_t_rule = AlphaTRule::fixed;
    double alpha_t_scale = 0.02; ///< alpha_t = scale / p when scaled

    void validate() const {
        base.validate();
        if (p_grid.empty()) throw config_error("p_grid must be nonempty");
        for (int p : p_grid)
            if (p < base.s)
                throw config_error("p_grid values must be at least s");
        if (replicates < 1) throw config_error("replicates must be positive");
        if (estimands.empty()) throw config_error("estimand set must be nonempty");
        if (alpha_t_rule == AlphaTRule::scaled && alpha_t_scale < 0.0)
            throw config_error("alpha_t_scale must be nonnegative");
    }
};

inline MetaConfig config_for_p(const SweepPlan& plan, int p) {
    MetaConfig cfg = plan.base;
    cfg.p = p;
    if (plan.alpha_t_rule == AlphaTRule::scaled)
        cfg.alpha_t = plan.alpha_t_scale / double(p);
    return cfg;
}

struct EstimandStat {
    bool applicable = false;
    int count = 0;
    double mean = std::numeric_limits<double>::quiet_NaN();
    double stddev = std::numeric_limits<double>::quiet_NaN();
    double stderror = std::numeric_limits<double>::quiet_NaN();
};

struct SweepRecord {
    int p = 0;
    MetaConfig cfg;        ///< effective config at this p
    int requested = 0;
    int successes = 0;
    int skips = 0;
    bool invalid = false;  ///< every replicate was skipped
    std::array<EstimandStat, kEstimandCount> stats;
    BoundReport bounds;
};

namespace detail {

inline EstimandStat summarize(const std::vector<ReplicateOutcome>& outcomes,
                              Estimand e, bool applicable) {
    EstimandStat st;
    st.applicable = applicable;
    if (!applicable) return st;
    CompensatedSum sum;
    int n = 0;
    for (const auto& o : outcomes) {
        if (!o.ok) continue;
        sum.add(o.value(e));
        ++n;
    }
    st.count = n;
    if (n == 0) return st;
    st.mean = sum.value() / n;
    CompensatedSum sq;
    for (const auto& o : outcomes) {
        if (!o.ok) continue;
        const double d = o.value(e) - st.mean;
        sq.add(d * d);
    }
    st.stddev = std::sqrt(sq.value() / n);
    st.stderror = st.stddev / std::sqrt(double(n));
    return st;
}

} // namespace detail

/// All replicates at one p, aggregated in fixed replicate order.
inline SweepRecord run_grid_point(const SweepPlan& plan, int p) {
    SweepRecord rec;
    rec.p = p;
    rec.cfg = config_for_p(plan, p);
    rec.requested = plan.replicates;
    std::vector<ReplicateOutcome> outcomes(plan.replicates);
    parallel_for(plan.replicates, [&](int rep) {
        outcomes[rep] = run_replicate(rec.cfg, plan.seed, rep);
    });
    for (const auto& o : outcomes)
        if (o.ok)
            ++rec.successes;
        else
            ++rec.skips;
    rec.invalid = rec.successes == 0;
    const bool over = rec.cfg.overparameterized();
    for (int i = 0; i < kEstimandCount; ++i)
        rec.stats[i] = detail::summarize(outcomes, Estimand(i),
                                         estimand_applicable(Estimand(i), over));
    rec.bounds = evaluate_bounds(rec.cfg);
    return rec;
}

inline std::vector<SweepRecord> run_sweep(const SweepPlan& plan) {
    plan.validate();
    std::vector<SweepRecord> records;
    records.reserve(plan.p_grid.size());
    for (int p : plan.p_grid) records.push_back(run_grid_point(plan, p));
    return records;
}

// ---------------------------------------------------------------------------
// expectation audits

struct AuditRow {
    std::string name;
    double empirical = 0.0;
    double theoretical = 0.0;
    double stderror = 0.0;
    double z = 0.0;
};

struct IdentityRow {
    std::string name;
    double worst = 0.0; ///< largest observed violation (relative)
    double tol = 0.0;
    bool pass = false;
};

struct VerifyReport {
    std::vector<AuditRow> audits;
    std::vector<IdentityRow> identities;
    bool pass = false;
};

struct AuditOptions {
    int replicates = 2000;
    int identity_instances = 100;
    int test_error_draws = 0; ///< 0 -> replicates
    int fourth_moment_draws = 100000;
    int fourth_moment_n = 5;
    int fourth_moment_p = 8;
    /// Negative-control hook: scales every theoretical value by
    /// (1 + corruption). Zero in normal operation.
    double corruption = 0.0;
};

namespace detail {

inline AuditRow make_audit_row(std::string name,
                               const std::vector<double>& values,
                               double theoretical, double corruption) {
    AuditRow row;
    row.name = std::move(name);
    CompensatedSum sum;
    for (double v : values) sum.add(v);
    const int n = int(values.size());
    row.empirical = sum.value() / n;
    row.theoretical = theoretical * (1.0 + corruption);
    CompensatedSum sq;
    for (double v : values) {
        const double d = v - row.empirical;
        sq.add(d * d);
    }
    row.stderror = std::sqrt(sq.value() / n) / std::sqrt(double(n));
    const double gap = row.empirical - row.theoretical;
    // guard: treat sub-roundoff gaps as exact agreement so that
    // zero-variance configs report z = 0 instead of 0/0
    if (std::abs(gap) <= 1e-9 * std::max(1.0, std::abs(row.theoretical)))
        row.z = 0.0;
    else if (row.stderror == 0.0)
        row.z = std::numeric_limits<double>::infinity();
    else
        row.z = gap / row.stderror;
    return row;
}

} // namespace detail

/// Empirical mean vs. closed-form expectation (with z-scores) for every
/// exact-expectation formula, plus per-instance algebraic identity checks.
inline VerifyReport run_verification(const MetaConfig& cfg,
                                     const AuditOptions& opt,
                                     std::uint64_t seed) {
    cfg.validate();
    VerifyReport report;
    const int reps = opt.replicates;
    const bool over = cfg.overparameterized();

    std::vector<ReplicateOutcome> outcomes(reps);
    parallel_for(reps, [&](int rep) {
        outcomes[rep] = run_replicate(cfg, seed, rep);
    });
    auto gather = [&](Estimand e) {
        std::vector<double> v;
        v.reserve(reps);
        for (const auto& o : outcomes)
            if (o.ok) v.push_back(o.value(e));
        return v;
    };

    if (over)
        report.audits.push_back(detail::make_audit_row(
            "term1_mean", gather(Estimand::term1), expected_term1(cfg),
            opt.corruption));
    report.audits.push_back(detail::make_audit_row(
        "delta_gamma_sq_mean", gather(Estimand::delta_gamma_sq),
        expected_delta_gamma_sq(cfg), opt.corruption));

    // Monte-Carlo test error for a fixed w_hat against the closed form, at
    // the practical step size and two bracketing values.
    {
        const RngStream mc_root = RngStream(seed).child(0xA11D17);
        Eigen::VectorXd dir = normal_vector(mc_root.child(1), cfg.p);
        dir.normalize();
        const Eigen::VectorXd w0 = cfg.w0_full();
        const Eigen::VectorXd w_hat =
            w0 + std::sqrt(std::max(1.0, cfg.w0_norm_sq() / 4.0)) * dir;
        const double zeta = (w_hat - w0).squaredNorm();
        const double rule = double(cfg.n_r) / double(cfg.n_r + cfg.p + 1);
        const int draws = opt.test_error_draws > 0 ? opt.test_error_draws : reps;
        for (double alpha_r : {0.0, rule, std::min(1.0, 1.5 * rule)}) {
            std::vector<double> vals(draws);
            parallel_for(draws, [&](int d) {
                MetaConfig tc = cfg;
                const RngStream ds = mc_root.child(2).child(std::uint64_t(d));
                const TestTask test = sample_test_task(tc, ds);
                tc.alpha_r = alpha_r;
                const AdaptedSolution adapted = adapt_test(w_hat, test, tc);
                const Eigen::VectorXd x = normal_vector(ds.child(99), cfg.p);
                vals[d] = squared_test_error(x, test.w_r, adapted.w);
            });
            const double theory = expected_test_error(
                TestErrorParams::from_config(cfg, zeta, alpha_r));
            report.audits.push_back(detail::make_audit_row(
                "test_error_mc_alpha_r=" + std::to_string(alpha_r), vals,
                theory, opt.corruption));
        }
    }

    // fourth-moment identity E[X X^T X X^T] = n (n + p + 1) I
    {
        const int n = opt.fourth_moment_n;
        const int p = opt.fourth_moment_p;
        const int draws = opt.fourth_moment_draws;
        const RngStream mc = RngStream(seed).child(0x4D0441);
        std::vector<double> diag(draws), offdiag(draws);
        parallel_for(draws, [&](int d) {
            const Eigen::MatrixXd x =
                normal_matrix(mc.child(std::uint64_t(d)), p, n);
            const Eigen::MatrixXd xxt = x * x.transpose();
            const Eigen::MatrixXd m4 = xxt * xxt;
            diag[d] = m4.trace() / double(p);
            offdiag[d] = (m4.sum() - m4.trace()) / double(p * (p - 1));
        });
        const double target = double(n) * double(n + p + 1);
        report.audits.push_back(detail::make_audit_row(
            "fourth_moment_diag", diag, target, opt.corruption));
        report.audits.push_back(detail::make_audit_row(
            "fourth_moment_offdiag", offdiag, 0.0, opt.corruption));
    }

    // per-instance algebraic identities (overparameterized regime)
    if (over) {
        const int n = std::min(opt.identity_instances, reps);
        std::vector<double> pyth(n), interp(n), dominance(n), sandwich(n);
        parallel_for(n, [&](int rep) {
            const RngStream rs = RngStream(seed).child(std::uint64_t(rep));
            const Truths truths = sample_truths(cfg, rs);
            const TaskBatch batch = sample_task_batch(cfg, truths.w, rs);
            const MetaSystem sys = build_meta_system(batch, cfg, cfg.w0_full());
            const GramContext ctx(sys);
            const SolveReport l2 = solve_min_l2(sys, ctx);
            const SolveReport ideal = solve_ideal(sys, ctx);
            const double me = l2.model_error;
            const double scale = me > 0.0 ? me : 1.0;
            pyth[rep] = std::abs(*l2.term1 + *l2.term2 - me) / scale;
            const double gnorm = sys.gamma().norm();
            interp[rep] =
                l2.interpolation_residual / (gnorm > 0.0 ? gnorm : 1.0);
            dominance[rep] = (ideal.model_error - me) / scale;
            const double dg = sys.delta_gamma().squaredNorm();
            const double t2 = *l2.term2;
            const double lo = dg / ctx.lambda_max();
            const double hi = dg / ctx.lambda_min();
            const double sscale = std::max(t2, 1e-300);
            sandwich[rep] =
                std::max((lo - t2) / sscale, (t2 - hi) / sscale);
        });
        auto worst = [](const std::vector<double>& v) {
            double w = -std::numeric_limits<double>::infinity();
            for (double x : v) w = std::max(w, x);
            return w;
        };
        report.identities.push_back(
            {"term1_plus_term2_equals_model_error", worst(pyth), 1e-8,
             worst(pyth) <= 1e-8});
        report.identities.push_back({"interpolation_residual", worst(interp),
                                     1e-8, worst(interp) <= 1e-8});
        report.identities.push_back({"ideal_dominates_min_l2",
                                     worst(dominance), 1e-10,
                                     worst(dominance) <= 1e-10});
        report.identities.push_back({"term2_eigenvalue_sandwich",
                                     worst(sandwich), 1e-9,
                                     worst(sandwich) <= 1e-9});
    }

    bool ok = true;
    for (const auto& a : report.audits)
        if (!std::isfinite(a.z) || std::abs(a.z) > 4.0) ok = false;
    for (const auto& i : report.identities)
        if (!i.pass) ok = false;
    report.pass = ok;
    return report;
}

// ---------------------------------------------------------------------------
// tightness comparison

struct TightnessRow {
    int p = 0;
    double simulated = 0.0;
    double sim_stderr = 0.0;
    double approx = 0.0;
    double ratio = 0.0;
};

/// Pairs the simulated mean min-l2 model error with the dominating-term
/// approximation, per overparameterized grid point.
inline std::vector<TightnessRow> tightness_from_records(
    const std::vector<SweepRecord>& records, const BoundConstants& c) {
    std::vector<TightnessRow> rows;
    for (const auto& rec : records) {
        if (!rec.cfg.overparameterized() || rec.invalid) continue;
        const auto& st = rec.stats[int(Estimand::model_error_l2)];
        if (st.count == 0) continue;
        TightnessRow row;
        row.p = rec.p;
        row.simulated = st.mean;
        row.sim_stderr = st.stderror;
        row.approx = approximate_bounds(rec.cfg, c).total();
        row.ratio = row.simulated / row.approx;
        rows.push_back(row);
    }
    return rows;
}

inline std::vector<TightnessRow> tightness_comparison(const SweepPlan& plan,
                                                      const BoundConstants& c) {
    return tightness_from_records(run_sweep(plan), c);
}

} // namespace metadescent
