// Gaussian state estimation: linear Kalman filter, unscented transform and
// the Unscented Kalman filter over arbitrary state/measurement maps.
//
// Conventions
//   state equation        x_{k+1} = f(x_k) + e_x,   e_x ~ N(0, Psi)
//   measurement equation  y_k     = g(x_k) + e_y,   e_y ~ N(0, Omega)
//
// All functions are pure: beliefs go in by const reference and new beliefs
// come out. Every returned covariance is symmetrized as (C + C^T) / 2.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <string>
#include <type_traits>
#include <utility>

#include "statarb/errors.hpp"

namespace statarb::filters {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Innovation solves fail when the estimated reciprocal condition number is below this.
inline constexpr double kMinReciprocalCondition = 1e-12;
/// Added once to a covariance whose Cholesky factorization fails.
inline constexpr double kSigmaJitter = 1e-10;

struct GaussianBelief {
    Vector mean;
    Matrix cov;

    Index dim() const { return mean.size(); }
};

/// Time-k linear-Gaussian system matrices.
struct LinearSystem {
    Matrix A;      ///< N x N transition
    Matrix B;      ///< n x N measurement
    Matrix Psi;    ///< N x N state noise covariance
    Matrix Omega;  ///< n x n measurement noise covariance

    void validate() const {
        const Index n_state = A.rows();
        if (A.cols() != n_state || B.cols() != n_state || Psi.rows() != n_state ||
            Psi.cols() != n_state || Omega.rows() != B.rows() || Omega.cols() != B.rows()) {
            throw InvalidInput("LinearSystem: inconsistent dimensions");
        }
    }
};

/// Sigma-point spread parameters. lambda = alpha^2 (N + kappa) - N.
struct SigmaScaling {
    double alpha = 1e-3;
    double beta = 2.0;
    double kappa = 0.0;

    double lambda(Index n) const {
        const auto dim = static_cast<double>(n);
        return alpha * alpha * (dim + kappa) - dim;
    }
};

/// 2N+1 sigma points stored as columns, with mean and covariance weights.
struct SigmaSet {
    Matrix points;
    Vector wm;
    Vector wc;
    SigmaScaling scaling;
    double lambda = 0.0;

    Index count() const { return points.cols(); }
};

struct GainBundle {
    Matrix gain;             ///< N x n
    Vector innovation_mean;  ///< predicted measurement
    Matrix innovation_cov;   ///< n x n
    Matrix cross_cov;        ///< N x n
};

struct UkfOptions {
    SigmaScaling scaling;
    /// Push the transformed points straight through g instead of redrawing
    /// them from the predicted belief. Off by default; the literal recursion
    /// omits Psi from the measurement spread.
    bool propagate_sigma_points = false;
};

struct UkfPrediction {
    GaussianBelief predicted;
    SigmaSet drawn;     ///< points drawn from the input belief
    Matrix propagated;  ///< f applied to each drawn point
};

struct UkfUpdate {
    GaussianBelief filtered;
    GainBundle gain;
};

struct UkfStepResult {
    GaussianBelief filtered;
    GaussianBelief predicted;
    GainBundle gain;
};

inline void symmetrize(Matrix& m) { m = 0.5 * (m + m.transpose()).eval(); }

namespace detail {

inline void require(bool ok, const char* what) {
    if (!ok) throw InvalidInput(what);
}

inline void require_belief(const GaussianBelief& b, const char* op) {
    if (b.cov.rows() != b.mean.size() || b.cov.cols() != b.mean.size()) {
        throw InvalidInput(std::string(op) + ": belief mean/cov dimension mismatch");
    }
}

/// Cholesky of a symmetric positive definite matrix with a reciprocal-condition guard.
inline Eigen::LLT<Matrix> factor_spd(const Matrix& m, const char* op) {
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success) {
        throw NumericalSingularity(std::string(op) + ": innovation covariance not positive definite");
    }
    const double rcond = llt.rcond();
    if (!(rcond >= kMinReciprocalCondition)) {
        throw NumericalSingularity(std::string(op) + ": innovation covariance reciprocal condition " +
                                   std::to_string(rcond) + " below guard");
    }
    return llt;
}

}  // namespace detail

/// Predictive distribution: mean' = A mean, cov' = A cov A^T + Psi.
inline GaussianBelief kf_predict(const GaussianBelief& belief, const Matrix& A, const Matrix& Psi) {
    detail::require_belief(belief, "kf_predict");
    const Index n = belief.dim();
    detail::require(A.rows() == n && A.cols() == n, "kf_predict: A must be N x N");
    detail::require(Psi.rows() == n && Psi.cols() == n, "kf_predict: Psi must be N x N");

    GaussianBelief out{A * belief.mean, A * belief.cov * A.transpose() + Psi};
    symmetrize(out.cov);
    return out;
}

/// Measurement update. The gain is formed by a Cholesky solve against the
/// innovation covariance; no explicit inverse is taken.
inline std::pair<GaussianBelief, GainBundle> kf_update(const GaussianBelief& pred, const Vector& y,
                                                       const Matrix& B, const Matrix& Omega) {
    detail::require_belief(pred, "kf_update");
    const Index n_state = pred.dim();
    const Index n_obs = y.size();
    detail::require(B.rows() == n_obs && B.cols() == n_state, "kf_update: B must be n x N");
    detail::require(Omega.rows() == n_obs && Omega.cols() == n_obs, "kf_update: Omega must be n x n");

    GainBundle bundle;
    bundle.innovation_mean = B * pred.mean;
    const Matrix b_cov = B * pred.cov;  // n x N
    bundle.innovation_cov = b_cov * B.transpose() + Omega;
    symmetrize(bundle.innovation_cov);
    bundle.cross_cov = b_cov.transpose();

    const auto llt = detail::factor_spd(bundle.innovation_cov, "kf_update");
    bundle.gain = llt.solve(b_cov).transpose();

    GaussianBelief post;
    post.mean = pred.mean + bundle.gain * (y - bundle.innovation_mean);
    post.cov = (Matrix::Identity(n_state, n_state) - bundle.gain * B) * pred.cov;
    symmetrize(post.cov);
    return {std::move(post), std::move(bundle)};
}

/// Measurement update for a linear measurement with diagonal noise, done in
/// state dimension: with H = B^T D^-1 B and b = B^T D^-1 (y - B mean),
///   cov' = (I + cov H)^-1 cov,   mean' = mean + (I + cov H)^-1 cov b.
/// Algebraically identical to kf_update with Omega = diag(noise_diag), but
/// costs O(n N^2) instead of O(n^3).
inline GaussianBelief kf_update_diagonal(const GaussianBelief& pred, const Vector& y, const Matrix& B,
                                         const Vector& noise_diag) {
    detail::require_belief(pred, "kf_update_diagonal");
    const Index n_state = pred.dim();
    const Index n_obs = y.size();
    detail::require(B.rows() == n_obs && B.cols() == n_state, "kf_update_diagonal: B must be n x N");
    detail::require(noise_diag.size() == n_obs, "kf_update_diagonal: noise length must equal n");
    detail::require((noise_diag.array() > 0.0).all(), "kf_update_diagonal: noise variances must be positive");

    const Vector precision = noise_diag.cwiseInverse();
    const Matrix weighted_b = precision.asDiagonal() * B;  // D^-1 B
    const Matrix info = B.transpose() * weighted_b;        // H
    const Vector score = weighted_b.transpose() * (y - B * pred.mean);

    const Matrix system = Matrix::Identity(n_state, n_state) + pred.cov * info;
    Eigen::PartialPivLU<Matrix> lu(system);
    const double rcond = lu.rcond();
    if (!(rcond >= kMinReciprocalCondition)) {
        throw NumericalSingularity("kf_update_diagonal: update system reciprocal condition " +
                                   std::to_string(rcond) + " below guard");
    }

    GaussianBelief post;
    post.cov = lu.solve(pred.cov);
    symmetrize(post.cov);
    post.mean = pred.mean + post.cov * score;
    return post;
}

/// Scaled symmetric sigma points around the belief mean.
inline SigmaSet sigma_points(const GaussianBelief& belief, const SigmaScaling& scaling = {}) {
    detail::require_belief(belief, "sigma_points");
    const Index n = belief.dim();
    detail::require(n > 0, "sigma_points: empty state");

    const double lambda = scaling.lambda(n);
    const double spread = static_cast<double>(n) + lambda;
    detail::require(spread > 0.0, "sigma_points: N + lambda must be positive");

    Matrix scaled = spread * belief.cov;
    symmetrize(scaled);
    Eigen::LLT<Matrix> llt(scaled);
    if (llt.info() != Eigen::Success) {
        scaled.diagonal().array() += kSigmaJitter;
        llt.compute(scaled);
        if (llt.info() != Eigen::Success) {
            throw NumericalSingularity("sigma_points: covariance is not positive semidefinite");
        }
    }
    const Matrix root = llt.matrixL();

    SigmaSet set;
    set.scaling = scaling;
    set.lambda = lambda;
    set.points.resize(n, 2 * n + 1);
    set.points.col(0) = belief.mean;
    for (Index i = 0; i < n; ++i) {
        set.points.col(1 + i) = belief.mean + root.col(i);
        set.points.col(1 + n + i) = belief.mean - root.col(i);
    }

    set.wm = Vector::Constant(2 * n + 1, 0.5 / spread);
    set.wc = set.wm;
    set.wm(0) = lambda / spread;
    set.wc(0) = set.wm(0) + (1.0 - scaling.alpha * scaling.alpha + scaling.beta);
    return set;
}

/// Weighted mean of point columns for weights summing to one. Accumulated as
/// offsets from column 0: with alpha small the centre weight is ~ -1e6 and the
/// plain sum would cancel catastrophically.
inline Vector weighted_mean(const Matrix& points, const Vector& wm) {
    const Vector anchor = points.col(0);
    Vector mean = anchor;
    for (Index i = 1; i < points.cols(); ++i) mean += wm(i) * (points.col(i) - anchor);
    return mean;
}

/// sum_i wc_i (a_i - a_mean)(b_i - b_mean)^T
inline Matrix weighted_cross_covariance(const Matrix& a, const Vector& a_mean, const Matrix& b,
                                        const Vector& b_mean, const Vector& wc) {
    const Matrix da = a.colwise() - a_mean;
    const Matrix db = b.colwise() - b_mean;
    return da * wc.asDiagonal() * db.transpose();
}

/// Gaussian statistics of transformed sigma points, plus additive noise.
/// `wm` must sum to one.
inline GaussianBelief unscented_transform(const Matrix& transformed, const Vector& wm, const Vector& wc,
                                          const Matrix& additive_noise) {
    const Index dim = transformed.rows();
    const Index count = transformed.cols();
    detail::require(count > 0, "unscented_transform: no points");
    detail::require(wm.size() == count && wc.size() == count, "unscented_transform: weight count mismatch");
    detail::require(additive_noise.rows() == dim && additive_noise.cols() == dim,
                    "unscented_transform: noise dimension mismatch");

    GaussianBelief out;
    out.mean = weighted_mean(transformed, wm);
    out.cov = weighted_cross_covariance(transformed, out.mean, transformed, out.mean, wc) + additive_noise;
    symmetrize(out.cov);
    return out;
}

/// Applies `map` to every column.
template <typename Map>
Matrix transform_points(const Matrix& points, Map&& map) {
    Vector first = map(Vector(points.col(0)));
    Matrix out(first.size(), points.cols());
    out.col(0) = std::move(first);
    for (Index i = 1; i < points.cols(); ++i) {
        out.col(i) = map(Vector(points.col(i)));
    }
    return out;
}

namespace detail {

template <typename Noise>
Matrix resolve_noise(Noise&& noise, const SigmaSet& drawn) {
    using Plain = std::remove_cvref_t<Noise>;
    if constexpr (std::is_base_of_v<Eigen::EigenBase<Plain>, Plain>) {
        return Matrix(noise);
    } else {
        static_assert(std::is_invocable_r_v<Matrix, Noise, const SigmaSet&>,
                      "process noise must be a matrix or a callable taking the drawn SigmaSet");
        return noise(drawn);
    }
}

}  // namespace detail

/// Time update through a state map. `process_noise` is either a matrix or a
/// callable taking the drawn SigmaSet, for noise models that depend on the
/// sigma points themselves.
template <typename StateMap, typename Noise>
UkfPrediction ukf_predict(const GaussianBelief& belief, StateMap&& f, Noise&& process_noise,
                          const SigmaScaling& scaling = {}) {
    UkfPrediction out;
    out.drawn = sigma_points(belief, scaling);
    out.propagated = transform_points(out.drawn.points, f);
    detail::require(out.propagated.rows() == belief.dim(), "ukf_predict: state map changed dimension");
    const Matrix psi = detail::resolve_noise(std::forward<Noise>(process_noise), out.drawn);
    out.predicted = unscented_transform(out.propagated, out.drawn.wm, out.drawn.wc, psi);
    return out;
}

/// Measurement update through a measurement map. When `propagated` is given
/// (the literal recursion) those points are used as-is; otherwise points are
/// redrawn from `predicted`.
template <typename MeasurementMap>
UkfUpdate ukf_update(const GaussianBelief& predicted, const Vector& y, MeasurementMap&& g, const Matrix& Omega,
                     const SigmaScaling& scaling = {}, const SigmaSet* propagated = nullptr) {
    detail::require_belief(predicted, "ukf_update");
    SigmaSet redrawn;
    const SigmaSet* points = propagated;
    if (points == nullptr) {
        redrawn = sigma_points(predicted, scaling);
        points = &redrawn;
    }

    const Matrix measured = transform_points(points->points, g);
    detail::require(measured.rows() == y.size(), "ukf_update: measurement map dimension differs from y");
    detail::require(Omega.rows() == y.size() && Omega.cols() == y.size(), "ukf_update: Omega must be n x n");

    UkfUpdate out;
    GainBundle& bundle = out.gain;
    bundle.innovation_mean = weighted_mean(measured, points->wm);
    bundle.innovation_cov =
        weighted_cross_covariance(measured, bundle.innovation_mean, measured, bundle.innovation_mean, points->wc) +
        Omega;
    symmetrize(bundle.innovation_cov);
    bundle.cross_cov =
        weighted_cross_covariance(points->points, predicted.mean, measured, bundle.innovation_mean, points->wc);

    const auto llt = detail::factor_spd(bundle.innovation_cov, "ukf_update");
    bundle.gain = llt.solve(bundle.cross_cov.transpose()).transpose();

    out.filtered.mean = predicted.mean + bundle.gain * (y - bundle.innovation_mean);
    out.filtered.cov = predicted.cov - bundle.gain * bundle.innovation_cov * bundle.gain.transpose();
    symmetrize(out.filtered.cov);
    return out;
}

/// One full UKF cycle: predict through f, then update against y through g.
template <typename StateMap, typename MeasurementMap, typename Noise>
UkfStepResult ukf_step(const GaussianBelief& belief, const Vector& y, StateMap&& f, MeasurementMap&& g,
                       Noise&& Psi, const Matrix& Omega, const UkfOptions& options = {}) {
    auto prediction = ukf_predict(belief, std::forward<StateMap>(f), std::forward<Noise>(Psi), options.scaling);

    SigmaSet literal;
    const SigmaSet* reuse = nullptr;
    if (options.propagate_sigma_points) {
        literal = prediction.drawn;
        literal.points = prediction.propagated;
        reuse = &literal;
    }
    auto update = ukf_update(prediction.predicted, y, std::forward<MeasurementMap>(g), Omega, options.scaling, reuse);
    return {std::move(update.filtered), std::move(prediction.predicted), std::move(update.gain)};
}

/// Affine map x -> A x + b as a callable.
struct AffineMap {
    Matrix A;
    Vector b;

    Vector operator()(const Vector& x) const { return b.size() ? Vector(A * x + b) : Vector(A * x); }
};

}  // namespace statarb::filters
