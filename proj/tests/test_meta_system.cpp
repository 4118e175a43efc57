#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "metadescent/bounds.hpp"
#include "metadescent/meta_system.hpp"
#include "metadescent/task_gen.hpp"

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

MetaSystem sampled_system(const MetaConfig& cfg, std::uint64_t seed) {
    const RngStream rs(seed);
    const Truths t = sample_truths(cfg, rs);
    const TaskBatch b = sample_task_batch(cfg, t.w, rs);
    return build_meta_system(b, cfg, cfg.w0_full());
}

// per-task evaluation of the meta loss: adapt each task with one gradient
// step, then average the validation losses
double meta_loss_by_tasks(const TaskBatch& batch, const MetaConfig& cfg,
                          const Eigen::VectorXd& w_hat) {
    double acc = 0.0;
    for (int i = 0; i < cfg.m; ++i) {
        const AdaptedSolution a =
            adapt_one_step(w_hat, batch.X[i], batch.y[i], cfg.alpha_t, i);
        acc += 0.5 * (batch.y_v[i] - batch.V[i].transpose() * a.w).squaredNorm();
    }
    return acc / (double(cfg.m) * cfg.n_v);
}

} // namespace

TEST_CASE("alpha_t = 0 collapses B to stacked V^T and gamma to stacked y_v") {
    MetaConfig cfg = fig_config(40);
    cfg.alpha_t = 0.0;
    const RngStream rs(3);
    const Truths t = sample_truths(cfg, rs);
    const TaskBatch b = sample_task_batch(cfg, t.w, rs);
    const MetaSystem sys = build_meta_system(b, cfg, cfg.w0_full());
    for (int i = 0; i < cfg.m; ++i) {
        REQUIRE((sys.block_b(i).array() == b.V[i].transpose().array()).all());
        REQUIRE((sys.block_gamma(i).array() == b.y_v[i].array()).all());
    }
}

TEST_CASE("hand expansion of one block at m=1, n_v=1, p=2") {
    MetaConfig cfg;
    cfg.p = 2;
    cfg.s = 2;
    cfg.m = 1;
    cfg.n_t = 2;
    cfg.n_v = 1;
    cfg.n_r = 1;
    cfg.alpha_t = 0.5;
    cfg.w0_s = Eigen::Vector2d(1.0, -1.0);

    TaskBatch b;
    Eigen::MatrixXd X(2, 2);
    X << 1.0, 2.0,
         3.0, -1.0;
    Eigen::MatrixXd V(2, 1);
    V << 0.5,
         2.0;
    Eigen::VectorXd y(2);
    y << 4.0, -2.0;
    Eigen::VectorXd yv(1);
    yv << 7.0;
    b.X.push_back(X);
    b.V.push_back(V);
    b.y.push_back(y);
    b.y_v.push_back(yv);
    b.eps.push_back(Eigen::VectorXd::Zero(2));
    b.eps_v.push_back(Eigen::VectorXd::Zero(1));
    b.w.push_back(cfg.w0_full());

    const MetaSystem sys = build_meta_system(b, cfg, cfg.w0_full());

    // scalar arithmetic done independently:
    // X X^T = [[5, 1], [1, 10]]; a = alpha_t/n_t = 0.25
    // I - a X X^T = [[-0.25, -0.25], [-0.25, -1.5]]
    // B = V^T (I - a X X^T) = [0.5*-0.25 + 2*-0.25, 0.5*-0.25 + 2*-1.5]
    //   = [-0.625, -3.125]
    REQUIRE(sys.b()(0, 0) == Catch::Approx(-0.625).margin(1e-14));
    REQUIRE(sys.b()(0, 1) == Catch::Approx(-3.125).margin(1e-14));
    // X y = [1*4 + 2*-2, 3*4 + -1*-2] = [0, 14]
    // V^T X y = 0.5*0 + 2*14 = 28; gamma = 7 - 0.25*28 = 0
    REQUIRE(sys.gamma()(0) == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("zero noise and zero diversity give vanishing delta_gamma") {
    MetaConfig cfg = fig_config(60);
    cfg.sigma = 0.0;
    cfg.diversity = DiversitySpec::uniform(0.0);
    const MetaSystem sys = sampled_system(cfg, 17);
    const double scale =
        sys.b().norm() * sys.w0().norm() + sys.gamma().norm();
    REQUIRE(sys.delta_gamma().norm() <= 1e-12 * scale);

    cfg.alpha_t = 0.0; // only rounding noise from the two product paths
    const MetaSystem sys0 = sampled_system(cfg, 17);
    const double scale0 =
        sys0.b().norm() * sys0.w0().norm() + sys0.gamma().norm();
    REQUIRE(sys0.delta_gamma().norm() <= 1e-14 * scale0);
}

TEST_CASE("delta_gamma identity gamma - B w0 - delta_gamma is exactly zero") {
    const MetaConfig cfg = fig_config(45);
    const MetaSystem sys = sampled_system(cfg, 23);
    const Eigen::VectorXd lhs =
        sys.gamma() - sys.b() * sys.w0() - sys.delta_gamma();
    REQUIRE(lhs.norm() == 0.0);
}

TEST_CASE("row blocks recompute exactly from the task matrices") {
    const MetaConfig cfg = fig_config(45);
    const RngStream rs(29);
    const Truths t = sample_truths(cfg, rs);
    const TaskBatch b = sample_task_batch(cfg, t.w, rs);
    const MetaSystem sys = build_meta_system(b, cfg, cfg.w0_full());
    const double a = cfg.alpha_t / cfg.n_t;
    for (int i = 0; i < cfg.m; ++i) {
        Eigen::MatrixXd vt = b.V[i].transpose();
        Eigen::MatrixXd vtx = vt * b.X[i];
        Eigen::MatrixXd block = vt - a * (vtx * b.X[i].transpose());
        REQUIRE((sys.block_b(i).array() == block.array()).all());
    }
}

TEST_CASE("meta loss closed form equals the per-task adaptation sum") {
    const MetaConfig cfg = fig_config(45);
    const RngStream rs(31);
    const Truths t = sample_truths(cfg, rs);
    const TaskBatch b = sample_task_batch(cfg, t.w, rs);
    const MetaSystem sys = build_meta_system(b, cfg, cfg.w0_full());
    for (std::uint64_t trial = 0; trial < 5; ++trial) {
        const Eigen::VectorXd w =
            normal_vector(RngStream(100).child(trial), cfg.p, 3.0);
        const double closed = meta_loss(sys, w);
        const double direct = meta_loss_by_tasks(b, cfg, w);
        REQUIRE(closed == Catch::Approx(direct).epsilon(1e-10));
    }
}

TEST_CASE("meta loss special values") {
    const MetaConfig cfg = fig_config(45);
    const MetaSystem sys = sampled_system(cfg, 37);
    REQUIRE(meta_loss(sys, Eigen::VectorXd::Zero(cfg.p)) ==
            Catch::Approx(sys.gamma().squaredNorm() / (2.0 * cfg.rows())));
    // any interpolator zeroes the loss: use the least-norm one
    const Eigen::VectorXd w_int =
        sys.b().transpose() * sys.gram().ldlt().solve(sys.gamma());
    REQUIRE(meta_loss(sys, w_int) <= 1e-16 * sys.gamma().squaredNorm());
}

TEST_CASE("one-step adaptation fixed points and degenerate step") {
    const MetaConfig cfg = fig_config(45);
    const RngStream rs(41);
    const Truths t = sample_truths(cfg, rs);
    const TaskBatch b = sample_task_batch(cfg, t.w, rs);

    const Eigen::VectorXd w = normal_vector(RngStream(7), cfg.p);
    const AdaptedSolution frozen = adapt_one_step(w, b.X[0], b.y[0], 0.0, 0);
    REQUIRE((frozen.w.array() == w.array()).all());

    // an interpolating parameter has zero gradient
    Eigen::VectorXd y_fit = b.X[0].transpose() * w;
    const AdaptedSolution fixed = adapt_one_step(w, b.X[0], y_fit, 0.7, 0);
    REQUIRE((fixed.w - w).norm() <= 1e-12 * w.norm());
}

TEST_CASE("adaptation agrees with a central-difference gradient step") {
    MetaConfig cfg = fig_config(12);
    cfg.n_t = 6;
    const RngStream rs(43);
    const Truths t = sample_truths(cfg, rs);
    const TaskBatch b = sample_task_batch(cfg, t.w, rs);
    const Eigen::MatrixXd& X = b.X[0];
    const Eigen::VectorXd& y = b.y[0];
    const Eigen::VectorXd w = normal_vector(RngStream(19), cfg.p);
    const double step = 0.3;

    auto inner_loss = [&](const Eigen::VectorXd& v) {
        return 0.5 * (y - X.transpose() * v).squaredNorm();
    };
    const double h = 1e-6;
    Eigen::VectorXd grad(cfg.p);
    for (int j = 0; j < cfg.p; ++j) {
        Eigen::VectorXd up = w, down = w;
        up[j] += h;
        down[j] -= h;
        grad[j] = (inner_loss(up) - inner_loss(down)) / (2.0 * h);
    }
    const Eigen::VectorXd expected = w - step / cfg.n_t * grad;
    const AdaptedSolution got = adapt_one_step(w, X, y, step, 0);
    REQUIRE((got.w - expected).norm() <= 1e-6 * (1.0 + expected.norm()));
}

TEST_CASE("test-task adaptation mirrors the inner update") {
    MetaConfig cfg = fig_config(20);
    cfg.nu_r = 1.0;
    cfg.sigma_r = 0.5;
    cfg.alpha_r = 0.25;
    const TestTask task = sample_test_task(cfg, RngStream(47));
    const Eigen::VectorXd w = normal_vector(RngStream(53), cfg.p);
    const AdaptedSolution via_test = adapt_test(w, task, cfg);
    const AdaptedSolution direct = adapt_one_step(w, task.X_r, task.y_r, 0.25);
    REQUIRE((via_test.w.array() == direct.w.array()).all());
}

TEST_CASE("squared test error basics") {
    Eigen::VectorXd x(3), wr(3);
    x << 1.0, -2.0, 0.5;
    wr << 2.0, 0.0, 1.0;
    REQUIRE(squared_test_error(x, wr, wr) == 0.0);
    REQUIRE(squared_test_error(Eigen::VectorXd::Zero(3), wr,
                               Eigen::VectorXd::Ones(3)) == 0.0);
    Eigen::VectorXd wt(3);
    wt << 1.0, 1.0, 1.0;
    // x.(wr - wt) = 1*1 - 2*-1 + 0.5*0 = 3
    REQUIRE(squared_test_error(x, wr, wt) == Catch::Approx(9.0));
}

TEST_CASE("Monte-Carlo test error matches the closed form") {
    MetaConfig cfg;
    cfg.p = 30;
    cfg.s = 4;
    cfg.m = 2;
    cfg.n_t = 10;
    cfg.n_v = 2;
    cfg.n_r = 6;
    cfg.sigma_r = 1.5;
    cfg.nu_r = 2.0;
    cfg.alpha_r = 0.1;
    cfg.w0_s = MetaConfig::uniform_w0(4, 9.0);
    cfg.diversity = DiversitySpec::uniform(0.0);

    const Eigen::VectorXd w0 = cfg.w0_full();
    Eigen::VectorXd dir = normal_vector(RngStream(61), cfg.p);
    dir.normalize();
    const Eigen::VectorXd w_hat = w0 + 2.0 * dir;
    const double zeta = (w_hat - w0).squaredNorm();

    const int draws = 200000;
    double acc = 0.0, acc_sq = 0.0;
    for (int d = 0; d < draws; ++d) {
        const RngStream ds = RngStream(71).child(std::uint64_t(d));
        const TestTask task = sample_test_task(cfg, ds);
        const AdaptedSolution adapted = adapt_test(w_hat, task, cfg);
        const Eigen::VectorXd x = normal_vector(ds.child(99), cfg.p);
        const double v = squared_test_error(x, task.w_r, adapted.w);
        acc += v;
        acc_sq += v * v;
    }
    const double mean = acc / draws;
    const double se = std::sqrt((acc_sq / draws - mean * mean) / draws);
    const double theory = expected_test_error(
        TestErrorParams::from_config(cfg, zeta, *cfg.alpha_r));
    REQUIRE(std::abs(mean - theory) <= 3.0 * se);
}

TEST_CASE("wide systems have full row rank") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        MetaConfig cfg = fig_config(45);
        const MetaSystem sys = sampled_system(cfg, seed);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(sys.b());
        REQUIRE(svd.singularValues()(sys.rows() - 1) > 0.0);
    }
}

TEST_CASE("dump emits B then gamma in plain text") {
    MetaConfig cfg = fig_config(8);
    cfg.m = 2;
    const MetaSystem sys = sampled_system(cfg, 83);
    std::ostringstream os;
    dump_meta_system(sys, os);
    const std::string text = os.str();
    REQUIRE(text.rfind("B 6 8", 0) == 0);
    REQUIRE(text.find("gamma 6") != std::string::npos);
}
