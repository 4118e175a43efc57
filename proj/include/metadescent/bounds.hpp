#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>

#include "metadescent/config.hpp"
#include "metadescent/rng.hpp"

namespace metadescent {

namespace detail {
inline double sq(double x) { return x * x; }
} // namespace detail

/// Inputs to the expected-test-error formula: zeta is the model-error
/// plug-in ||w_hat - w0||^2, the rest come from the config.
struct TestErrorParams {
    double zeta = 0.0;
    int p = 1;
    int n_r = 1;
    double alpha_r = 0.0;
    double nu_r = 0.0;
    double sigma_r = 0.0;

    static TestErrorParams from_config(const MetaConfig& cfg, double zeta,
                                       double alpha_r) {
        return {zeta, cfg.p, cfg.n_r, alpha_r, cfg.nu_r, cfg.sigma_r};
    }
};

/// Expected squared test error after the one-step test adaptation:
/// ((1-alpha_r)^2 + (p+1)/n_r * alpha_r^2) (zeta + nu_r^2)
///   + alpha_r^2 p / n_r * sigma_r^2.
inline double expected_test_error(const TestErrorParams& q) {
    const double a = q.alpha_r;
    const double head =
        detail::sq(1.0 - a) + double(q.p + 1) / double(q.n_r) * a * a;
    return head * (q.zeta + q.nu_r * q.nu_r) +
           a * a * double(q.p) / double(q.n_r) * q.sigma_r * q.sigma_r;
}

struct OptimalAlphaR {
    double alpha_r = 0.0;
    /// True when zeta + nu_r^2 = 0 and sigma_r = 0, where every step size is
    /// optimal; alpha_r is reported as 0.
    bool degenerate = false;
};

/// Minimizer of expected_test_error over alpha_r:
/// K / ((1 + (p+1)/n_r) K + p sigma_r^2 / n_r) with K = zeta + nu_r^2.
/// With sigma_r = 0 this is exactly n_r / (n_r + p + 1).
inline OptimalAlphaR optimal_alpha_r(double zeta, const MetaConfig& cfg) {
    const double K = zeta + cfg.nu_r * cfg.nu_r;
    if (K == 0.0 && cfg.sigma_r == 0.0) return {0.0, true};
    if (cfg.sigma_r == 0.0)
        return {double(cfg.n_r) / double(cfg.n_r + cfg.p + 1), false};
    const double denom = (1.0 + double(cfg.p + 1) / double(cfg.n_r)) * K +
                         double(cfg.p) * cfg.sigma_r * cfg.sigma_r / double(cfg.n_r);
    return {K / denom, false};
}

/// Which eigenvalue-bound branch applies to the Gram matrix B B^T.
enum class EigBranch { p_greater_than_n_t, p_at_most_n_t };

/// Every symbol of the high-probability model-error bound.
struct BoundReport {
    double alpha_t_prime = 0.0;
    double b_eig_min = 0.0;
    double b_eig_max = 0.0;
    double c_eig_min = 0.0;
    double c_eig_max = 0.0;
    double d_factor = 0.0; ///< the squared max factor inside b_delta
    double b_delta = 0.0;
    double b_w0 = 0.0;
    double b_w0_lower = 0.0;
    double b_w_ideal = 0.0;
    double b_w = 0.0;
    double eta = 0.0;
    EigBranch branch = EigBranch::p_at_most_n_t;
    bool below_threshold = false;  ///< min{p, n_t} < 256
    bool vacuous_eta = false;      ///< eta >= 1
    bool ideal_infinite = false;   ///< eigenvalue floor <= 0
    std::string ideal_reason;
};

/// Evaluate the full bound stack as pure functions of the config. Sizes
/// below the validity threshold are evaluated anyway and flagged.
inline BoundReport evaluate_bounds(const MetaConfig& cfg) {
    using detail::sq;
    const double p = cfg.p;
    const double s = cfg.s;
    const double n_t = cfg.n_t;
    const double n_v = cfg.n_v;
    const double m = cfg.m;
    const double k = m * n_v;
    const double at = cfg.alpha_t;
    const double sigma2 = cfg.sigma * cfg.sigma;
    const double nu2 = sq(cfg.nu());
    const double w0sq = cfg.w0_norm_sq();

    BoundReport r;
    r.alpha_t_prime =
        at / n_t * sq(std::sqrt(p) + std::sqrt(n_t) + std::log(std::sqrt(n_t)));
    const double up = std::max(r.alpha_t_prime, 1.0 - r.alpha_t_prime);
    const double down = std::max(0.0, 1.0 - r.alpha_t_prime);

    const double wide_gap =
        ((n_v + 1.0) * sq(up) + 6.0 * k) * std::sqrt(p) * std::log(p);
    r.b_eig_min = p + (sq(down) - 1.0) * n_t - wide_gap;
    r.b_eig_max = p + (sq(up) - 1.0) * n_t + wide_gap;

    r.c_eig_min = sq(down) * p - 2.0 * k * sq(up) * std::sqrt(p * std::log(p));
    r.c_eig_max = sq(up) * (p + (2.0 * k + 1.0) * std::sqrt(p * std::log(p)));

    const double lsn = std::log(s * n_t);
    r.d_factor = sq(std::max(
        std::abs(1.0 - at * (n_t + 2.0 * std::sqrt(n_t * lsn) + 2.0 * lsn) / n_t),
        std::abs(1.0 - at * (n_t - 2.0 * std::sqrt(n_t * lsn)) / n_t)));

    r.b_delta =
        k * sigma2 * (1.0 + at * at * p * sq(std::log(n_t)) * std::log(p) / n_t) +
        k * nu2 * 2.0 * lsn *
            (r.d_factor + at * at * (p - 1.0) / n_t * 6.25 * sq(std::log(s * p * n_t)));

    const double lp = std::log(p);
    r.b_w0 = ((p - k) + 2.0 * std::sqrt((p - k) * lp) + 2.0 * lp) /
             (p - 2.0 * std::sqrt(p * lp)) * w0sq;
    r.b_w0_lower =
        ((p - k) - 2.0 * std::sqrt((p - k) * lp)) /
        (p + 2.0 * std::sqrt(p * lp) + 2.0 * lp) * w0sq;

    r.branch = cfg.p > cfg.n_t ? EigBranch::p_greater_than_n_t
                               : EigBranch::p_at_most_n_t;
    const double branch_min =
        r.branch == EigBranch::p_greater_than_n_t ? r.b_eig_min : r.c_eig_min;
    const double floor = std::max(branch_min, 0.0);
    if (floor > 0.0) {
        r.b_w_ideal = r.b_delta / floor;
    } else {
        r.b_w_ideal = std::numeric_limits<double>::infinity();
        r.ideal_infinite = true;
        r.ideal_reason = "eigenvalue lower bound is nonpositive";
    }
    r.b_w = r.b_w0 + r.b_w_ideal;

    r.eta = 27.0 * m * m * n_v * n_v /
            std::pow(double(std::min(cfg.p, cfg.n_t)), 0.4);
    r.below_threshold = std::min(cfg.p, cfg.n_t) < 256;
    r.vacuous_eta = r.eta >= 1.0;
    return r;
}

/// Exact mean of ||delta_gamma||^2 over all randomness:
/// m n_v sigma^2 (1 + alpha_t^2 p / n_t)
///   + nu^2 m n_v ((1 - alpha_t)^2 + alpha_t^2 (p+1) / n_t).
inline double expected_delta_gamma_sq(const MetaConfig& cfg) {
    using detail::sq;
    const double k = double(cfg.m) * cfg.n_v;
    const double at = cfg.alpha_t;
    return k * cfg.sigma * cfg.sigma * (1.0 + at * at * cfg.p / double(cfg.n_t)) +
           sq(cfg.nu()) * k *
               (sq(1.0 - at) + at * at * (cfg.p + 1.0) / double(cfg.n_t));
}

/// Exact mean of Term 1: (p - m n_v) / p * ||w0||^2, defined for p >= m n_v.
inline double expected_term1(const MetaConfig& cfg) {
    if (cfg.p < cfg.rows())
        throw config_error("expected_term1 requires p >= m n_v");
    return double(cfg.p - cfg.rows()) / double(cfg.p) * cfg.w0_norm_sq();
}

/// E[X X^T X X^T] = n (n + p + 1) I_p for X in R^{p x n} with i.i.d.
/// standard normal entries.
inline Eigen::MatrixXd gaussian_fourth_moment(int n, int p) {
    return double(n) * double(n + p + 1) *
           Eigen::MatrixXd::Identity(p, p);
}

/// Monte-Carlo companion of gaussian_fourth_moment: the empirical average of
/// X X^T X X^T over `draws` samples.
inline Eigen::MatrixXd gaussian_fourth_moment_mc(int n, int p, int draws,
                                                 const RngStream& rng) {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(p, p);
    for (int d = 0; d < draws; ++d) {
        Eigen::MatrixXd x = normal_matrix(rng.child(std::uint64_t(d)), p, n);
        Eigen::MatrixXd xxt = x * x.transpose();
        acc += xxt * xxt;
    }
    return acc / double(draws);
}

/// Calibration constants of the dominating-term approximation.
struct BoundConstants {
    double c1 = 0.001;
    double c2 = 0.99995;
    double c3 = 0.001;
    double c4 = 0.99995;
};

struct ApproxBound {
    double b_w0 = 0.0;
    double b_w_ideal = 0.0;
    double b_delta = 0.0;
    bool ideal_valid = false; ///< requires p > C4 m n_v
    double total() const { return b_w0 + b_w_ideal; }
};

/// Dominating-term approximation:
/// b_w0 ~ (p - m n_v)/p ||w0||^2,
/// b_delta ~ m n_v ((1 + C1/n_t) sigma^2 + C2 (1 + C3/n_t) nu^2),
/// b_w_ideal ~ b_delta / (p - C4 m n_v).
inline ApproxBound approximate_bounds(const MetaConfig& cfg,
                                      const BoundConstants& c = {}) {
    using detail::sq;
    const double k = double(cfg.m) * cfg.n_v;
    ApproxBound a;
    a.b_w0 = (cfg.p - k) / double(cfg.p) * cfg.w0_norm_sq();
    a.b_delta = k * ((1.0 + c.c1 / cfg.n_t) * cfg.sigma * cfg.sigma +
                     c.c2 * (1.0 + c.c3 / cfg.n_t) * sq(cfg.nu()));
    a.ideal_valid = double(cfg.p) > c.c4 * k;
    a.b_w_ideal = a.ideal_valid
                      ? a.b_delta / (double(cfg.p) - c.c4 * k)
                      : std::numeric_limits<double>::infinity();
    return a;
}

struct DescentFloor {
    /// g >= 1: the approximate model-error curve decreases for all
    /// p > C4 m n_v and has no floor.
    bool monotone_decreasing = false;
    double g = 0.0;
    double p_star = std::numeric_limits<double>::quiet_NaN();
    double floor_value = std::numeric_limits<double>::quiet_NaN();
};

/// Interior minimum of h(p) = (p - m n_v)/p ||w0||^2 + b_delta/(p - C4 m n_v):
/// at p* = C4 m n_v / (1 - sqrt(g)) with value ||w0||^2 (1 - (1-sqrt(g))^2/C4),
/// where g = b_delta / (m n_v ||w0||^2).
inline DescentFloor descent_floor(const MetaConfig& cfg, double c4,
                                  double b_delta) {
    const double w0sq = cfg.w0_norm_sq();
    if (w0sq <= 0.0)
        throw config_error("descent_floor requires ||w0|| > 0");
    const double k = double(cfg.m) * cfg.n_v;
    DescentFloor f;
    f.g = b_delta / (k * w0sq);
    if (f.g >= 1.0) {
        f.monotone_decreasing = true;
        return f;
    }
    const double root = std::sqrt(f.g);
    f.p_star = c4 * k / (1.0 - root);
    f.floor_value = w0sq * (1.0 - detail::sq(1.0 - root) / c4);
    return f;
}

/// Chi-square concentration plug-ins used by the p = s = 1 closed form.
struct UnderparamPlugins {
    double g_hi = 0.0; ///< upper envelope of ||X_i||^2
    double g_lo = 0.0; ///< lower envelope of ||X_i||^2
    double h_hi = 0.0; ///< upper envelope of the summed validation energy
    double r_hi = 0.0; ///< upper envelope of per-task validation energy
    double r_lo = 0.0; ///< lower envelope of per-task validation energy
};

inline UnderparamPlugins underparam_scalar_plugins(const MetaConfig& cfg) {
    const double n_t = cfg.n_t;
    const double n_v = cfg.n_v;
    const double k = double(cfg.m) * n_v;
    UnderparamPlugins u;
    u.g_hi = n_t + 2.0 * std::sqrt(n_t * std::log(n_t)) + 2.0 * std::log(n_t);
    u.g_lo = n_t - 2.0 * std::sqrt(n_t * std::log(n_t));
    u.h_hi = k + 2.0 * std::sqrt(k * std::log(k)) + 2.0 * std::log(k);
    u.r_hi = n_v + 2.0 * std::sqrt(n_v * std::log(n_v)) + 2.0 * std::log(n_v);
    u.r_lo = n_v - 2.0 * std::sqrt(n_v * std::log(n_v));
    return u;
}

/// Four-argument closed form for the p = s = 1 least-squares model error:
/// nu^2 a3/m ((1 - (alpha_t/n_t) a2)/(1 - (alpha_t/n_t) a1))^4
///   + sigma^2 a3/m (alpha_t a1/n_t)^2 (1 - (alpha_t/n_t) a2)^2
///       / (1 - (alpha_t/n_t) a1)^4
///   + sigma^2 / ((1 - (alpha_t/n_t) a1)^2 a4).
inline double underparam_scalar_error(const MetaConfig& cfg, double a1,
                                      double a2, double a3, double a4) {
    using detail::sq;
    const double t1 = 1.0 - cfg.alpha_t / double(cfg.n_t) * a1;
    if (t1 <= 0.0)
        throw config_error(
            "underparam closed form requires 1 - (alpha_t/n_t) a1 > 0");
    const double t2 = 1.0 - cfg.alpha_t / double(cfg.n_t) * a2;
    const double nu2 = sq(cfg.nu());
    const double sigma2 = cfg.sigma * cfg.sigma;
    const double m = cfg.m;
    return nu2 * a3 / m * sq(sq(t2 / t1)) +
           sigma2 * a3 / m * sq(cfg.alpha_t * a1 / double(cfg.n_t)) * sq(t2) /
               sq(sq(t1)) +
           sigma2 / (sq(t1) * a4);
}

/// Large-sample simplification of the p = s = 1 model error:
/// nu^2/m + sigma^2 alpha_t^2/m + sigma^2/((1 - alpha_t)^2 m n_v).
inline double underparam_scalar_error_approx(const MetaConfig& cfg) {
    using detail::sq;
    const double nu2 = sq(cfg.nu());
    const double sigma2 = cfg.sigma * cfg.sigma;
    const double m = cfg.m;
    return nu2 / m + sigma2 * cfg.alpha_t * cfg.alpha_t / m +
           sigma2 / (sq(1.0 - cfg.alpha_t) * m * cfg.n_v);
}

} // namespace metadescent
