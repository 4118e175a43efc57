#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>

#include "metadescent/csv.hpp"
#include "metadescent/experiments.hpp"

using namespace metadescent;

namespace {

MetaConfig fig_config(int p) {
    MetaConfig cfg;
    cfg.p = p;
    cfg.s = 5;
    cfg.m = 10;
    cfg.n_t = 50;
    cfg.n_v = 3;
    cfg.n_r = 5;
    cfg.sigma = 2.0;
    cfg.alpha_t = 0.02 / p;
    cfg.w0_s = MetaConfig::uniform_w0(5, 100.0);
    cfg.diversity = DiversitySpec::uniform(20.0);
    return cfg;
}

SweepPlan small_plan() {
    SweepPlan plan;
    plan.base = fig_config(35);
    plan.p_grid = {10, 35, 60};
    plan.replicates = 8;
    plan.seed = 2024;
    plan.alpha_t_rule = AlphaTRule::scaled;
    plan.alpha_t_scale = 0.02;
    return plan;
}

// independent re-implementation of the replicate's min-l2 model error via a
// plain SVD pseudoinverse, reusing only the samplers
double svd_path_model_error(const MetaConfig& cfg, std::uint64_t seed,
                            int rep) {
    const RngStream rs = RngStream(seed).child(std::uint64_t(rep));
    const Truths t = sample_truths(cfg, rs);
    const TaskBatch b = sample_task_batch(cfg, t.w, rs);
    const MetaSystem sys = build_meta_system(b, cfg, cfg.w0_full());
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(
        sys.b(), Eigen::ComputeThinU | Eigen::ComputeThinV);
    Eigen::VectorXd scaled = svd.matrixU().transpose() * sys.gamma();
    for (Eigen::Index i = 0; i < scaled.size(); ++i)
        scaled[i] /= svd.singularValues()(i);
    const Eigen::VectorXd w = svd.matrixV() * scaled;
    return (w - cfg.w0_full()).squaredNorm();
}

} // namespace

TEST_CASE("noiseless zero-diversity replicates have zero ideal error") {
    MetaConfig cfg = fig_config(60);
    cfg.sigma = 0.0;
    cfg.diversity = DiversitySpec::uniform(0.0);
    const ReplicateOutcome out = run_replicate(cfg, 99, 0);
    REQUIRE(out.ok);
    REQUIRE(out.value(Estimand::model_error_ideal) <= 1e-18);
    REQUIRE(out.value(Estimand::term2) <= 1e-18);
    REQUIRE(out.value(Estimand::model_error_l2) > 0.0);
}

TEST_CASE("replicates are bitwise deterministic in (seed, rep_index)") {
    const MetaConfig cfg = fig_config(45);
    const ReplicateOutcome a = run_replicate(cfg, 7, 3);
    const ReplicateOutcome b = run_replicate(cfg, 7, 3);
    REQUIRE(a.ok);
    for (int i = 0; i < kEstimandCount; ++i) {
        const double va = a.values[i], vb = b.values[i];
        if (std::isnan(va))
            REQUIRE(std::isnan(vb));
        else
            REQUIRE(va == vb);
    }
    const ReplicateOutcome c = run_replicate(cfg, 7, 4);
    REQUIRE(c.value(Estimand::model_error_l2) !=
            a.value(Estimand::model_error_l2));
}

TEST_CASE("estimand applicability follows the regime") {
    const MetaConfig over = fig_config(45);
    const ReplicateOutcome wide = run_replicate(over, 11, 0);
    REQUIRE(std::isnan(wide.value(Estimand::model_error_underparam)));
    REQUIRE(!std::isnan(wide.value(Estimand::model_error_l2)));
    REQUIRE(wide.value(Estimand::meta_loss_residual) <= 1e-16);

    const MetaConfig under = fig_config(20);
    const ReplicateOutcome tall = run_replicate(under, 11, 0);
    REQUIRE(std::isnan(tall.value(Estimand::model_error_l2)));
    REQUIRE(!std::isnan(tall.value(Estimand::model_error_underparam)));
    REQUIRE(tall.value(Estimand::meta_loss_residual) > 0.0);
    // rank-deficient gram at p < m n_v: smallest eigenvalue collapses
    REQUIRE(tall.value(Estimand::eig_min) <= 1e-6);
}

TEST_CASE("dual-path oracle: sweep mean matches the SVD re-implementation") {
    MetaConfig cfg = fig_config(35);
    const int reps = 100;
    double delta_max = 0.0;
    double mean_a = 0.0, mean_b = 0.0;
    for (int rep = 0; rep < reps; ++rep) {
        const ReplicateOutcome out = run_replicate(cfg, 31, rep);
        REQUIRE(out.ok);
        const double oracle = svd_path_model_error(cfg, 31, rep);
        mean_a += out.value(Estimand::model_error_l2);
        mean_b += oracle;
        delta_max = std::max(
            delta_max, std::abs(out.value(Estimand::model_error_l2) - oracle) /
                           oracle);
    }
    REQUIRE(delta_max <= 1e-8);
    REQUIRE(mean_a / reps == Catch::Approx(mean_b / reps).epsilon(1e-8));
}

TEST_CASE("sweep aggregates in fixed order and echoes the alpha rule") {
    const SweepPlan plan = small_plan();
    const std::vector<SweepRecord> recs = run_sweep(plan);
    REQUIRE(recs.size() == 3);
    REQUIRE(recs[0].p == 10);
    REQUIRE(recs[0].cfg.alpha_t == Catch::Approx(0.002));
    REQUIRE(recs[2].cfg.alpha_t == Catch::Approx(0.02 / 60.0));
    for (const auto& rec : recs) {
        REQUIRE(rec.requested == plan.replicates);
        REQUIRE(rec.successes + rec.skips == plan.replicates);
        const auto& st = rec.stats[int(Estimand::delta_gamma_sq)];
        REQUIRE(st.count == rec.successes);
        REQUIRE(st.stderror ==
                Catch::Approx(st.stddev / std::sqrt(double(st.count))));
    }
    // regime routing: p=10 and p=30 underparameterized, p=35,60 wide
    REQUIRE(!recs[0].stats[int(Estimand::model_error_l2)].applicable);
    REQUIRE(recs[0].stats[int(Estimand::model_error_underparam)].applicable);
    REQUIRE(recs[1].stats[int(Estimand::model_error_l2)].applicable);
}

TEST_CASE("single replicate reports zero spread") {
    SweepPlan plan = small_plan();
    plan.p_grid = {40};
    plan.replicates = 1;
    const std::vector<SweepRecord> recs = run_sweep(plan);
    const auto& st = recs[0].stats[int(Estimand::model_error_l2)];
    REQUIRE(st.count == 1);
    REQUIRE(st.stddev == 0.0);
    REQUIRE(st.stderror == 0.0);
}

TEST_CASE("worker count never changes the aggregated digits") {
    const SweepPlan plan = small_plan();
    setenv("METADESCENT_THREADS", "1", 1);
    const std::vector<SweepRecord> serial = run_sweep(plan);
    setenv("METADESCENT_THREADS", "7", 1);
    const std::vector<SweepRecord> parallel = run_sweep(plan);
    unsetenv("METADESCENT_THREADS");
    REQUIRE(serial.size() == parallel.size());
    for (std::size_t i = 0; i < serial.size(); ++i) {
        for (int e = 0; e < kEstimandCount; ++e) {
            const auto& a = serial[i].stats[e];
            const auto& b = parallel[i].stats[e];
            REQUIRE(a.count == b.count);
            if (a.count > 0 && a.applicable) {
                REQUIRE(a.mean == b.mean);
                REQUIRE(a.stddev == b.stddev);
            }
        }
    }
    const std::string csv_a = sweep_csv_string(plan, serial);
    const std::string csv_b = sweep_csv_string(plan, parallel);
    REQUIRE(csv_a == csv_b);
}

TEST_CASE("skip bookkeeping feeds only successful replicates into the stats") {
    std::vector<ReplicateOutcome> outcomes(4);
    outcomes[0].ok = true;
    outcomes[0].values[int(Estimand::delta_gamma_sq)] = 2.0;
    outcomes[1].ok = false;
    outcomes[1].skip_reason = "synthetic degeneracy";
    outcomes[2].ok = true;
    outcomes[2].values[int(Estimand::delta_gamma_sq)] = 4.0;
    outcomes[3].ok = false;
    const EstimandStat st =
        detail::summarize(outcomes, Estimand::delta_gamma_sq, true);
    REQUIRE(st.count == 2);
    REQUIRE(st.mean == 3.0);
    REQUIRE(st.stddev == 1.0);

    const EstimandStat none = detail::summarize({}, Estimand::term1, true);
    REQUIRE(none.count == 0);
    REQUIRE(std::isnan(none.mean));
}

TEST_CASE("verification audit passes on a healthy config and gates corruption") {
    MetaConfig cfg = fig_config(80);
    cfg.nu_r = 1.0;
    cfg.sigma_r = 0.5;
    AuditOptions opt;
    opt.replicates = 400;
    opt.identity_instances = 40;
    opt.test_error_draws = 4000;
    opt.fourth_moment_draws = 20000;
    const VerifyReport rep = run_verification(cfg, opt, 4242);
    for (const auto& a : rep.audits) {
        INFO(a.name << " z=" << a.z);
        REQUIRE(std::isfinite(a.z));
        REQUIRE(std::abs(a.z) <= 4.0);
    }
    REQUIRE(!rep.identities.empty());
    for (const auto& i : rep.identities) REQUIRE(i.pass);
    REQUIRE(rep.pass);

    AuditOptions bad = opt;
    bad.corruption = 0.5;
    const VerifyReport broken = run_verification(cfg, bad, 4242);
    REQUIRE(!broken.pass);
}

TEST_CASE("zero-randomness audit reports exact agreement") {
    MetaConfig cfg = fig_config(60);
    cfg.sigma = 0.0;
    cfg.diversity = DiversitySpec::uniform(0.0);
    AuditOptions opt;
    opt.replicates = 50;
    opt.identity_instances = 10;
    opt.test_error_draws = 2000;
    opt.fourth_moment_draws = 5000;
    const VerifyReport rep = run_verification(cfg, opt, 77);
    for (const auto& a : rep.audits) {
        if (a.name == "delta_gamma_sq_mean") {
            REQUIRE(a.theoretical == 0.0);
            REQUIRE(a.empirical <= 1e-18);
            REQUIRE(a.z == 0.0);
        }
    }
    REQUIRE(rep.pass);
}

TEST_CASE("fourth-moment audit row uses the configured target") {
    MetaConfig cfg = fig_config(40);
    AuditOptions opt;
    opt.replicates = 30;
    opt.identity_instances = 5;
    opt.test_error_draws = 500;
    opt.fourth_moment_draws = 30000;
    opt.fourth_moment_n = 5;
    opt.fourth_moment_p = 8;
    const VerifyReport rep = run_verification(cfg, opt, 31337);
    bool found = false;
    for (const auto& a : rep.audits)
        if (a.name == "fourth_moment_diag") {
            found = true;
            REQUIRE(a.theoretical == 70.0); // 5 * (5 + 8 + 1)
        }
    REQUIRE(found);
}

TEST_CASE("tightness table pairs simulated means with the approximation") {
    SweepPlan plan;
    plan.base = fig_config(60);
    plan.base.sigma = 0.2;
    plan.base.diversity = DiversitySpec::uniform(2.0);
    plan.p_grid = {60, 120, 240};
    plan.replicates = 40;
    plan.seed = 5150;
    plan.alpha_t_rule = AlphaTRule::scaled;
    const std::vector<TightnessRow> rows =
        tightness_comparison(plan, BoundConstants{});
    REQUIRE(rows.size() == 3);
    for (const auto& r : rows) {
        REQUIRE(r.approx > 0.0);
        REQUIRE(r.ratio == Catch::Approx(r.simulated / r.approx));
        REQUIRE(r.ratio > 0.4);
        REQUIRE(r.ratio < 2.5);
    }
}

TEST_CASE("tightness columns are zero for a zero-signal config") {
    SweepPlan plan;
    plan.base = fig_config(60);
    plan.base.sigma = 0.0;
    plan.base.diversity = DiversitySpec::uniform(0.0);
    plan.base.w0_s = Eigen::VectorXd::Zero(plan.base.s);
    plan.p_grid = {60};
    plan.replicates = 5;
    plan.seed = 8;
    const std::vector<TightnessRow> rows =
        tightness_comparison(plan, BoundConstants{});
    REQUIRE(rows.size() == 1);
    REQUIRE(rows[0].simulated <= 1e-20);
    REQUIRE(rows[0].approx == 0.0);
}

TEST_CASE("all-skipped grid points are flagged invalid") {
    std::vector<ReplicateOutcome> outcomes(3);
    for (auto& o : outcomes) {
        o.ok = false;
        o.skip_reason = "synthetic";
    }
    int successes = 0, skips = 0;
    for (const auto& o : outcomes)
        o.ok ? ++successes : ++skips;
    REQUIRE(successes == 0);
    const EstimandStat st =
        detail::summarize(outcomes, Estimand::model_error_l2, true);
    REQUIRE(st.count == 0);
    // the public path: a record with zero successes is marked invalid
    SweepRecord rec;
    rec.successes = successes;
    rec.skips = skips;
    rec.invalid = rec.successes == 0;
    REQUIRE(rec.invalid);
}
