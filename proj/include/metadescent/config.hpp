#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>

#include "metadescent/errors.hpp"

namespace metadescent {

/// Per-coordinate standard deviations of the task-truth fluctuation around
/// the shared mean. Either a single scalar nu spread uniformly over the s
/// true coordinates (per-coordinate std nu/sqrt(s), so the coordinate
/// variances sum to nu^2), or an explicit m x s matrix of stds.
class DiversitySpec {
public:
    DiversitySpec() : scalar_nu_(0.0) {}

    static DiversitySpec uniform(double nu) {
        DiversitySpec d;
        d.scalar_nu_ = nu;
        return d;
    }

    static DiversitySpec per_task(Eigen::MatrixXd stds) {
        DiversitySpec d;
        d.stds_ = std::move(stds);
        return d;
    }

    bool is_scalar() const { return !stds_.has_value(); }
    double scalar_nu() const { return scalar_nu_; }
    const Eigen::MatrixXd& stds() const { return *stds_; }

    double coordinate_std(int task, int coord, int s) const {
        if (is_scalar()) return scalar_nu_ / std::sqrt(double(s));
        return (*stds_)(task, coord);
    }

    /// Aggregate fluctuation scale: nu = sqrt(sum_i sum_j std_ij^2 / m).
    double nu(int m, int s) const {
        if (is_scalar()) return scalar_nu_;
        (void)s;
        return std::sqrt(stds_->array().square().sum() / double(m));
    }

    void validate(int m, int s) const {
        if (is_scalar()) {
            if (scalar_nu_ < 0.0)
                throw config_error("nu must be nonnegative");
            return;
        }
        if (stds_->rows() != m || stds_->cols() != s)
            throw config_error("nu_matrix must be m x s");
        if ((stds_->array() < 0.0).any())
            throw config_error("nu_matrix entries must be nonnegative");
    }

private:
    double scalar_nu_ = 0.0;
    std::optional<Eigen::MatrixXd> stds_;
};

/// All scalar system parameters of one meta-learning instance.
struct MetaConfig {
    int p = 1;   ///< model feature count
    int s = 1;   ///< true feature count (s <= p)
    int m = 1;   ///< number of training tasks
    int n_t = 1; ///< training samples per task
    int n_v = 1; ///< validation samples per task
    int n_r = 1; ///< adaptation samples for the test task

    double sigma = 0.0;   ///< training/validation noise std
    double sigma_r = 0.0; ///< test-task noise std
    double alpha_t = 0.0; ///< inner-loop step size
    /// Test-task step size; empty selects the practical rule
    /// n_r / (n_r + p + 1).
    std::optional<double> alpha_r;

    Eigen::VectorXd w0_s;   ///< mean truth, length s
    DiversitySpec diversity;
    double nu_r = 0.0;      ///< test-task truth fluctuation scale

    int rows() const { return m * n_v; }
    bool overparameterized() const { return p > rows(); }

    double nu() const { return diversity.nu(m, s); }
    double w0_norm_sq() const { return w0_s.squaredNorm(); }

    /// Zero-padded mean truth in R^p.
    Eigen::VectorXd w0_full() const {
        Eigen::VectorXd w = Eigen::VectorXd::Zero(p);
        w.head(s) = w0_s;
        return w;
    }

    double alpha_r_effective() const {
        if (alpha_r) return *alpha_r;
        return double(n_r) / double(n_r + p + 1);
    }

    void validate() const {
        if (p < 1 || s < 1 || m < 1 || n_t < 1 || n_v < 1 || n_r < 1)
            throw config_error("all counts (p, s, m, n_t, n_v, n_r) must be positive");
        if (s > p) throw config_error("s must not exceed p");
        if (sigma < 0.0 || sigma_r < 0.0)
            throw config_error("noise standard deviations must be nonnegative");
        if (alpha_t < 0.0) throw config_error("alpha_t must be nonnegative");
        if (alpha_r && *alpha_r < 0.0)
            throw config_error("alpha_r must be nonnegative");
        if (nu_r < 0.0) throw config_error("nu_r must be nonnegative");
        if (w0_s.size() != s) throw config_error("w0 must have length s");
        diversity.validate(m, s);
    }

    /// Mean truth with uniform coordinates whose squared norm is norm_sq.
    static Eigen::VectorXd uniform_w0(int s, double norm_sq) {
        if (norm_sq < 0.0) throw config_error("w0_norm_sq must be nonnegative");
        return Eigen::VectorXd::Constant(s, std::sqrt(norm_sq / double(s)));
    }
};

} // namespace metadescent
