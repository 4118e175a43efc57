#pragma once

#include <Eigen/Dense>
#include <vector>

#include "metadescent/config.hpp"
#include "metadescent/rng.hpp"

namespace metadescent {

/// Data of the m training tasks. For task i the outputs satisfy
/// y_i = X_i^T w_i + eps_i and y_v_i = V_i^T w_i + eps_v_i at construction.
struct TaskBatch {
    std::vector<Eigen::MatrixXd> X;     ///< p x n_t per task
    std::vector<Eigen::VectorXd> eps;   ///< n_t per task
    std::vector<Eigen::VectorXd> y;     ///< n_t per task
    std::vector<Eigen::MatrixXd> V;     ///< p x n_v per task
    std::vector<Eigen::VectorXd> eps_v; ///< n_v per task
    std::vector<Eigen::VectorXd> y_v;   ///< n_v per task
    std::vector<Eigen::VectorXd> w;     ///< p per task, zero beyond s

    int tasks() const { return int(X.size()); }
};

/// Test task: y_r = X_r^T w_r + eps_r.
struct TestTask {
    Eigen::VectorXd w_r; ///< p, zero beyond s
    Eigen::MatrixXd X_r; ///< p x n_r
    Eigen::VectorXd eps_r;
    Eigen::VectorXd y_r;
    double nu_r = 0.0;
};

struct Truths {
    std::vector<Eigen::VectorXd> w; ///< m task truths, each length p
    Eigen::VectorXd w_r;            ///< test-task truth, length p
};

namespace detail {

// Gaussian fluctuation around w0_s with per-coordinate stds, zero-padded.
inline Eigen::VectorXd sample_truth_coords(const MetaConfig& cfg,
                                           const RngStream& stream,
                                           const Eigen::VectorXd& coord_stds) {
    Eigen::VectorXd z = normal_vector(stream, cfg.s);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(cfg.p);
    for (int j = 0; j < cfg.s; ++j)
        w[j] = cfg.w0_s[j] + coord_stds[j] * z[j];
    return w;
}

} // namespace detail

/// Ground truths for all training tasks plus the test task. Substreams are
/// keyed by (role, task) under `rng`, so sampling one truth never perturbs
/// another.
inline Truths sample_truths(const MetaConfig& cfg, const RngStream& rng) {
    cfg.validate();
    Truths t;
    t.w.reserve(cfg.m);
    Eigen::VectorXd stds(cfg.s);
    for (int i = 0; i < cfg.m; ++i) {
        for (int j = 0; j < cfg.s; ++j)
            stds[j] = cfg.diversity.coordinate_std(i, j, cfg.s);
        t.w.push_back(detail::sample_truth_coords(
            cfg, rng.child(stream_role::truth, std::uint64_t(i)), stds));
    }
    stds.setConstant(cfg.nu_r / std::sqrt(double(cfg.s)));
    t.w_r = detail::sample_truth_coords(cfg, rng.child(stream_role::truth_test),
                                        stds);
    return t;
}

/// Features and noisy outputs for all training tasks given sampled truths.
inline TaskBatch sample_task_batch(const MetaConfig& cfg,
                                   const std::vector<Eigen::VectorXd>& truths,
                                   const RngStream& rng) {
    cfg.validate();
    if (int(truths.size()) != cfg.m)
        throw config_error("truths must contain one vector per task");
    TaskBatch b;
    for (int i = 0; i < cfg.m; ++i) {
        const auto id = std::uint64_t(i);
        Eigen::MatrixXd X =
            normal_matrix(rng.child(stream_role::features_train, id), cfg.p, cfg.n_t);
        Eigen::VectorXd eps =
            normal_vector(rng.child(stream_role::noise_train, id), cfg.n_t, cfg.sigma);
        Eigen::MatrixXd V =
            normal_matrix(rng.child(stream_role::features_val, id), cfg.p, cfg.n_v);
        Eigen::VectorXd eps_v =
            normal_vector(rng.child(stream_role::noise_val, id), cfg.n_v, cfg.sigma);
        b.y.push_back(X.transpose() * truths[i] + eps);
        b.y_v.push_back(V.transpose() * truths[i] + eps_v);
        b.X.push_back(std::move(X));
        b.eps.push_back(std::move(eps));
        b.V.push_back(std::move(V));
        b.eps_v.push_back(std::move(eps_v));
        b.w.push_back(truths[i]);
    }
    return b;
}

/// Test task sampled with (nu_r, sigma_r). Uses the same truth substream as
/// sample_truths, so both paths agree on w_r for a given parent stream.
inline TestTask sample_test_task(const MetaConfig& cfg, const RngStream& rng) {
    cfg.validate();
    TestTask t;
    Eigen::VectorXd stds =
        Eigen::VectorXd::Constant(cfg.s, cfg.nu_r / std::sqrt(double(cfg.s)));
    t.w_r = detail::sample_truth_coords(cfg, rng.child(stream_role::truth_test),
                                        stds);
    t.X_r = normal_matrix(rng.child(stream_role::features_test), cfg.p, cfg.n_r);
    t.eps_r = normal_vector(rng.child(stream_role::noise_test), cfg.n_r, cfg.sigma_r);
    t.y_r = t.X_r.transpose() * t.w_r + t.eps_r;
    t.nu_r = cfg.nu_r;
    return t;
}

} // namespace metadescent
