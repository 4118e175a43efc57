#pragma once

#include <Eigen/Dense>
#include <memory>
#include <mutex>
#include <ostream>

#include "metadescent/config.hpp"
#include "metadescent/task_gen.hpp"

namespace metadescent {

/// The stacked meta system. Row block i of B is V_i^T (I - (alpha_t/n_t)
/// X_i X_i^T); block i of gamma is y_v_i - (alpha_t/n_t) V_i^T X_i y_i.
/// delta_gamma = gamma - B w0. Immutable after construction; the Gram matrix
/// B B^T is computed on first use and cached.
class MetaSystem {
public:
    MetaSystem(Eigen::MatrixXd b, Eigen::VectorXd gamma, Eigen::VectorXd w0,
               int n_v)
        : b_(std::move(b)),
          gamma_(std::move(gamma)),
          w0_(std::move(w0)),
          n_v_(n_v),
          gram_once_(std::make_unique<std::once_flag>()) {
        if (b_.rows() != gamma_.size() || b_.cols() != w0_.size())
            throw config_error("meta system dimension mismatch");
        if (n_v_ < 1 || b_.rows() % n_v_ != 0)
            throw config_error("meta system rows must be a multiple of n_v");
        delta_gamma_ = gamma_ - b_ * w0_;
    }

    const Eigen::MatrixXd& b() const { return b_; }
    const Eigen::VectorXd& gamma() const { return gamma_; }
    const Eigen::VectorXd& delta_gamma() const { return delta_gamma_; }
    const Eigen::VectorXd& w0() const { return w0_; }

    int rows() const { return int(b_.rows()); }
    int p() const { return int(b_.cols()); }
    int n_v() const { return n_v_; }
    int tasks() const { return rows() / n_v_; }

    Eigen::Block<const Eigen::MatrixXd> block_b(int task) const {
        return b_.middleRows(task * n_v_, n_v_);
    }
    Eigen::VectorBlock<const Eigen::VectorXd> block_gamma(int task) const {
        return gamma_.segment(task * n_v_, n_v_);
    }

    /// B B^T, symmetric positive semidefinite. Thread-safe lazy cache.
    const Eigen::MatrixXd& gram() const {
        std::call_once(*gram_once_, [this] { gram_ = b_ * b_.transpose(); });
        return gram_;
    }

private:
    Eigen::MatrixXd b_;
    Eigen::VectorXd gamma_;
    Eigen::VectorXd delta_gamma_;
    Eigen::VectorXd w0_;
    int n_v_;
    mutable Eigen::MatrixXd gram_;
    mutable std::unique_ptr<std::once_flag> gram_once_;
};

/// One-step gradient update of the per-task quadratic loss from w_hat.
struct AdaptedSolution {
    Eigen::VectorXd w;
    int task = -1;   ///< source task index, -1 for the test task
    double step = 0; ///< step size used
};

/// (I - (step/n) X X^T) w_hat + (step/n) X y, evaluated without forming the
/// p x p matrix.
inline AdaptedSolution adapt_one_step(const Eigen::VectorXd& w_hat,
                                      const Eigen::MatrixXd& X,
                                      const Eigen::VectorXd& y, double step,
                                      int task = -1) {
    if (X.rows() != w_hat.size() || X.cols() != y.size())
        throw config_error("adapt_one_step dimension mismatch");
    const double a = step / double(X.cols());
    AdaptedSolution out;
    out.w = w_hat + a * (X * (y - X.transpose() * w_hat));
    out.task = task;
    out.step = step;
    return out;
}

inline AdaptedSolution adapt_test(const Eigen::VectorXd& w_hat,
                                  const TestTask& test, const MetaConfig& cfg) {
    return adapt_one_step(w_hat, test.X_r, test.y_r, cfg.alpha_r_effective());
}

inline MetaSystem build_meta_system(const TaskBatch& batch,
                                    const MetaConfig& cfg,
                                    const Eigen::VectorXd& w0) {
    if (batch.tasks() != cfg.m)
        throw config_error("batch task count does not match config");
    if (w0.size() != cfg.p)
        throw config_error("w0 must have length p");
    const int k = cfg.rows();
    Eigen::MatrixXd B(k, cfg.p);
    Eigen::VectorXd gamma(k);
    const double a = cfg.alpha_t / double(cfg.n_t);
    for (int i = 0; i < cfg.m; ++i) {
        const Eigen::MatrixXd& X = batch.X[i];
        const Eigen::MatrixXd& V = batch.V[i];
        if (X.rows() != cfg.p || X.cols() != cfg.n_t || V.rows() != cfg.p ||
            V.cols() != cfg.n_v)
            throw config_error("batch matrices do not match config dimensions");
        Eigen::MatrixXd vt = V.transpose();           // n_v x p
        Eigen::MatrixXd vtx = vt * X;                 // n_v x n_t
        B.middleRows(i * cfg.n_v, cfg.n_v) = vt - a * (vtx * X.transpose());
        gamma.segment(i * cfg.n_v, cfg.n_v) = batch.y_v[i] - a * (vtx * batch.y[i]);
    }
    return MetaSystem(std::move(B), std::move(gamma), w0, cfg.n_v);
}

/// ||gamma - B w_hat||^2 / (2 m n_v).
inline double meta_loss(const MetaSystem& sys, const Eigen::VectorXd& w_hat) {
    return (sys.gamma() - sys.b() * w_hat).squaredNorm() / (2.0 * sys.rows());
}

/// Squared prediction gap at input x between truth w_r and solution w_test.
inline double squared_test_error(const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& w_r,
                                 const Eigen::VectorXd& w_test) {
    const double d = x.dot(w_r) - x.dot(w_test);
    return d * d;
}

/// Plain-text dump of B and gamma (row-major, space-separated) for external
/// inspection.
inline void dump_meta_system(const MetaSystem& sys, std::ostream& os) {
    os.precision(17);
    os << "B " << sys.rows() << " " << sys.p() << "\n";
    for (int r = 0; r < sys.rows(); ++r) {
        for (int c = 0; c < sys.p(); ++c) {
            if (c) os << " ";
            os << sys.b()(r, c);
        }
        os << "\n";
    }
    os << "gamma " << sys.rows() << "\n";
    for (int r = 0; r < sys.rows(); ++r) {
        if (r) os << " ";
        os << sys.gamma()[r];
    }
    os << "\n";
}

} // namespace metadescent
