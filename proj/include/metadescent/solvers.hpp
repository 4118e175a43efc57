#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>

#include "metadescent/errors.hpp"
#include "metadescent/meta_system.hpp"

namespace metadescent {

enum class Regime { overparameterized, underparameterized };

/// Solution of one meta system together with its error decomposition.
/// term1/term2 are set only in the overparameterized regime, where
/// term1 + term2 = model_error (orthogonal split).
struct SolveReport {
    Eigen::VectorXd w_hat;
    double model_error = 0.0; ///< ||w_hat - w0||^2
    std::optional<double> term1;
    std::optional<double> term2;
    double interpolation_residual = 0.0; ///< ||B w_hat - gamma||
    Regime regime = Regime::overparameterized;
    bool used_svd_fallback = false;
};

namespace solver_detail {

inline constexpr double kCondThreshold = 1e12;   // LLT -> SVD switch
inline constexpr double kInterpTol = 1e-8;       // relative to ||gamma||
inline constexpr double kSvdTruncation = 1e-12;  // relative to largest sv

} // namespace solver_detail

/// Shared factorization of B B^T. Primary path is an SPD Cholesky solve with
/// one refinement step; when the Gram condition number exceeds 1e12 (or
/// lambda_min <= 0) the context falls back to a truncated SVD of B.
class GramContext {
public:
    explicit GramContext(const MetaSystem& sys) : sys_(&sys) {
        const Eigen::MatrixXd& gram = sys.gram();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
        lambda_min_ = es.eigenvalues()(0);
        lambda_max_ = es.eigenvalues()(gram.rows() - 1);
        const bool spd = lambda_min_ > 0.0 &&
                         lambda_max_ / lambda_min_ <= solver_detail::kCondThreshold;
        if (spd) {
            llt_.emplace(gram);
            if (llt_->info() != Eigen::Success) llt_.reset();
        }
        if (!llt_) {
            svd_.emplace(sys.b(), Eigen::ComputeThinU | Eigen::ComputeThinV);
        }
    }

    double lambda_min() const { return lambda_min_; }
    double lambda_max() const { return lambda_max_; }
    bool used_svd_fallback() const { return svd_.has_value(); }

    /// B^T (B B^T)^{-1} rhs (pseudoinverse applied to a row-space vector).
    Eigen::VectorXd pinv_apply(const Eigen::VectorXd& rhs) const {
        if (llt_) {
            Eigen::VectorXd z = llt_->solve(rhs);
            z += llt_->solve(rhs - sys_->gram() * z); // one refinement step
            return sys_->b().transpose() * z;
        }
        const auto& sv = svd_->singularValues();
        const double cut = sv.size() ? sv(0) * solver_detail::kSvdTruncation : 0.0;
        Eigen::VectorXd scaled = svd_->matrixU().transpose() * rhs;
        for (Eigen::Index i = 0; i < sv.size(); ++i)
            scaled[i] = sv(i) > cut ? scaled[i] / sv(i) : 0.0;
        return svd_->matrixV() * scaled;
    }

private:
    const MetaSystem* sys_;
    double lambda_min_ = 0.0;
    double lambda_max_ = 0.0;
    std::optional<Eigen::LLT<Eigen::MatrixXd>> llt_;
    std::optional<Eigen::JacobiSVD<Eigen::MatrixXd>> svd_;
};

/// Term 1 = ||(I - B^T (B B^T)^{-1} B) w0||^2,
/// Term 2 = ||B^T (B B^T)^{-1} delta_gamma||^2.
inline std::pair<double, double> decompose_model_error(const MetaSystem& sys,
                                                       const GramContext& ctx) {
    const Eigen::VectorXd projected = ctx.pinv_apply(sys.b() * sys.w0());
    const double term1 = (sys.w0() - projected).squaredNorm();
    const double term2 = ctx.pinv_apply(sys.delta_gamma()).squaredNorm();
    return {term1, term2};
}

inline std::pair<double, double> decompose_model_error(const MetaSystem& sys) {
    GramContext ctx(sys);
    return decompose_model_error(sys, ctx);
}

namespace solver_detail {

inline void require_interpolation(const MetaSystem& sys,
                                  const Eigen::VectorXd& w,
                                  const GramContext& ctx, double scale,
                                  double& resid_out) {
    resid_out = (sys.b() * w - sys.gamma()).norm();
    if (resid_out > kInterpTol * scale)
        throw degenerate_system_error(
            "gram system too ill-conditioned to interpolate", ctx.lambda_min());
}

} // namespace solver_detail

/// Min l2-norm interpolator B^T (B B^T)^{-1} gamma. Requires p >= m n_v.
inline SolveReport solve_min_l2(const MetaSystem& sys, const GramContext& ctx) {
    if (sys.p() < sys.rows())
        throw config_error("min l2 solve requires p >= m n_v");
    SolveReport r;
    r.regime = Regime::overparameterized;
    r.used_svd_fallback = ctx.used_svd_fallback();
    r.w_hat = ctx.pinv_apply(sys.gamma());
    solver_detail::require_interpolation(sys, r.w_hat, ctx, sys.gamma().norm(),
                                         r.interpolation_residual);
    r.model_error = (r.w_hat - sys.w0()).squaredNorm();
    auto [t1, t2] = decompose_model_error(sys, ctx);
    r.term1 = t1;
    r.term2 = t2;
    return r;
}

inline SolveReport solve_min_l2(const MetaSystem& sys) {
    GramContext ctx(sys);
    return solve_min_l2(sys, ctx);
}

/// Interpolator closest to w0: w0 + B^T (B B^T)^{-1} delta_gamma. Its model
/// error equals Term 2 of the min-l2 decomposition on the same system.
inline SolveReport solve_ideal(const MetaSystem& sys, const GramContext& ctx) {
    if (sys.p() < sys.rows())
        throw config_error("ideal solve requires p >= m n_v");
    SolveReport r;
    r.regime = Regime::overparameterized;
    r.used_svd_fallback = ctx.used_svd_fallback();
    const Eigen::VectorXd correction = ctx.pinv_apply(sys.delta_gamma());
    r.w_hat = sys.w0() + correction;
    // residual scale reflects the cancellation gamma = B w0 + delta_gamma
    const double scale =
        sys.delta_gamma().norm() + (sys.b() * sys.w0()).norm();
    solver_detail::require_interpolation(sys, r.w_hat, ctx, scale,
                                         r.interpolation_residual);
    r.model_error = correction.squaredNorm();
    r.term2 = r.model_error;
    return r;
}

inline SolveReport solve_ideal(const MetaSystem& sys) {
    GramContext ctx(sys);
    return solve_ideal(sys, ctx);
}

/// Least-squares minimizer (B^T B)^{-1} B^T gamma for p <= m n_v. The
/// interpolation residual is generally nonzero; term1/term2 stay unset.
inline SolveReport solve_underparameterized(const MetaSystem& sys) {
    if (sys.p() > sys.rows())
        throw config_error("least-squares solve requires p <= m n_v");
    const Eigen::MatrixXd normal = sys.b().transpose() * sys.b(); // p x p
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(normal);
    const double lmin = es.eigenvalues()(0);
    const double lmax = es.eigenvalues()(normal.rows() - 1);

    SolveReport r;
    r.regime = Regime::underparameterized;
    const Eigen::VectorXd rhs = sys.b().transpose() * sys.gamma();
    if (lmin > 0.0 && lmax / lmin <= solver_detail::kCondThreshold) {
        Eigen::LLT<Eigen::MatrixXd> llt(normal);
        r.w_hat = llt.solve(rhs);
        // refine against the normal equations
        r.w_hat += llt.solve(rhs - normal * r.w_hat);
    } else {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(
            sys.b(), Eigen::ComputeThinU | Eigen::ComputeThinV);
        const auto& sv = svd.singularValues();
        const double cut = sv.size() ? sv(0) * solver_detail::kSvdTruncation : 0.0;
        if (sv.size() == 0 || sv(sv.size() - 1) <= cut)
            throw degenerate_system_error(
                "normal equations singular in least-squares solve", lmin);
        Eigen::VectorXd scaled = svd.matrixU().transpose() * sys.gamma();
        for (Eigen::Index i = 0; i < sv.size(); ++i)
            scaled[i] = sv(i) > cut ? scaled[i] / sv(i) : 0.0;
        r.w_hat = svd.matrixV() * scaled;
        r.used_svd_fallback = true;
    }
    r.model_error = (r.w_hat - sys.w0()).squaredNorm();
    r.interpolation_residual = (sys.b() * r.w_hat - sys.gamma()).norm();
    return r;
}

} // namespace metadescent
